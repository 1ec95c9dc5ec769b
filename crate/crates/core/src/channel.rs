//! Per-slot channel synthesis: the A2G MIMO matrix toward the airport
//! station, interference vectors toward every terrestrial station, and the
//! rank-one factorization that the beamforming pipeline builds on.

use nalgebra::{Complex, DMatrix, DVector, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::antennas::AntennaModel;
use crate::geometry::{BsGeometry, NetworkLayout, SlotGeometry, TbsSite};
use crate::units::{db_to_linear, linear_to_db, wavelength_m};

pub type C64 = Complex<f64>;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("far-field factorization failed: rank-one residual {residual:.3e} exceeds {tol:.3e}")]
    NearField { residual: f64, tol: f64 },
    #[error(transparent)]
    Antenna(#[from] crate::antennas::AntennaError),
}

/// Distance-clamped log-distance path loss with a linear absorption term.
/// Only the spreading term clamps the distance at 75 m; absorption uses the
/// true distance. `fc_mhz` is the carrier in MHz, `absorption` in dB/km.
pub fn path_loss_db(d_m: f64, fc_mhz: f64, absorption_db_per_km: f64) -> f64 {
    32.5 + 20.0 * (d_m.max(75.0) * (fc_mhz / 1000.0)).log10() + absorption_db_per_km * d_m / 1000.0
}

/// Linear power gain of the path: 10^(-PL/10).
pub fn path_gain(d_m: f64, fc_mhz: f64, absorption_db_per_km: f64) -> f64 {
    db_to_linear(-path_loss_db(d_m, fc_mhz, absorption_db_per_km))
}

/// Everything the per-slot optimizer needs to know about propagation.
#[derive(Debug, Clone)]
pub struct ChannelSnapshot {
    pub tau_s: f64,
    /// A2G matrix, receive elements x transmit elements.
    pub h0: DMatrix<C64>,
    /// One interference vector per terrestrial station, transmit-side length.
    pub h_tbs: Vec<DVector<C64>>,
    /// Receive-side rank-one factor, ||u_a||^2 = N_A.
    pub u_a: DVector<C64>,
    /// Transmit-side rank-one factor, ||u_p||^2 = N_P.
    pub u_p: DVector<C64>,
    /// beta0 * G_plane * G_abs: squared magnitude of each H0 entry.
    pub link_gain: f64,
    /// Effective transmit-side channel after receive combining,
    /// s = H0^H u_a / sqrt(N_A); the per-subchannel SNR of beamvector w is
    /// |s^H w|^2 / (M b sigma^2).
    pub rx_combined: DVector<C64>,
    /// Frobenius-relative error of the best rank-one approximation of H0.
    pub far_field_residual: f64,
    pub abs_distance_m: f64,
    pub tbs_distances_m: Vec<f64>,
}

impl ChannelSnapshot {
    pub fn n_rx(&self) -> usize {
        self.h0.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.h0.ncols()
    }

    /// Scalar link strength |s|^2 = link_gain * N_A when the transmitter has
    /// a single antenna (the closed-form scenarios).
    pub fn combined_gain(&self) -> f64 {
        self.rx_combined.norm_squared()
    }
}

/// Transmit element offsets: the array grid for arrays, the center for
/// single-antenna models.
fn element_offsets(antenna: &AntennaModel, wavelength: f64) -> Vec<Vector3<f64>> {
    antenna
        .element_positions(wavelength)
        .unwrap_or_else(|_| vec![Vector3::zeros()])
}

/// Synthesizes the A2G matrix for one slot: uniform entry magnitude from the
/// center-to-center path loss and per-element gains, exact per-element-pair
/// phases.
pub fn a2g_channel(
    abs_geo: &BsGeometry,
    abs_position: &Vector3<f64>,
    plane_antenna: &AntennaModel,
    abs_antenna: &AntennaModel,
    fc_mhz: f64,
    absorption_db_per_km: f64,
) -> DMatrix<C64> {
    let wl = wavelength_m(fc_mhz);
    let plane_elems = element_offsets(plane_antenna, wl);
    let abs_elems = element_offsets(abs_antenna, wl);
    let to_abs = (abs_position - abs_geo.plane_position).normalize();
    let beta0 = path_gain(abs_geo.distance_m, fc_mhz, absorption_db_per_km);
    let g_plane = plane_antenna.directivity_gain(&to_abs);
    let g_abs = abs_antenna.directivity_gain(&(-to_abs));
    let amp = (beta0 * g_plane * g_abs).sqrt();
    let k = 2.0 * std::f64::consts::PI / wl;
    DMatrix::from_fn(abs_elems.len(), plane_elems.len(), |n, m| {
        let d = (abs_geo.plane_position + plane_elems[m] - abs_position - abs_elems[n]).norm();
        C64::from_polar(amp, -k * d)
    })
}

/// Interference vector toward one terrestrial site: per-element phases from
/// the plane array to the site, magnitude from path loss, the plane's element
/// gain toward the site, and the site's receive-gain bound toward the plane.
pub fn interference_vector(
    tbs_geo: &BsGeometry,
    site: &TbsSite,
    plane_antenna: &AntennaModel,
    fc_mhz: f64,
    absorption_db_per_km: f64,
) -> DVector<C64> {
    let wl = wavelength_m(fc_mhz);
    let plane_elems = element_offsets(plane_antenna, wl);
    let to_tbs = (site.position - tbs_geo.plane_position).normalize();
    let beta = path_gain(tbs_geo.distance_m, fc_mhz, absorption_db_per_km);
    let g_plane = plane_antenna.directivity_gain(&to_tbs);
    let g_site = site.receive_gain(&(-to_tbs));
    let amp = (beta * g_plane * g_site).sqrt();
    let k = 2.0 * std::f64::consts::PI / wl;
    DVector::from_fn(plane_elems.len(), |m, _| {
        let r = (tbs_geo.plane_position + plane_elems[m] - site.position).norm();
        C64::from_polar(amp, -k * r)
    })
}

pub struct RankOneFactors {
    pub link_gain: f64,
    pub u_a: DVector<C64>,
    pub u_p: DVector<C64>,
    pub residual: f64,
}

/// Principal singular triplet of `h0`, scaled so that ||u_a||^2 = rows and
/// ||u_p||^2 = cols, with the common phase chosen so u_a[0] is real and
/// nonnegative. Fails when the matrix is not rank-one within `tol`
/// (Frobenius-relative residual of the best rank-one approximation).
pub fn rank_one_factors(h0: &DMatrix<C64>, tol: f64) -> Result<RankOneFactors, ChannelError> {
    let n_a = h0.nrows();
    let n_p = h0.ncols();
    // The Gram matrix is tx-side square (small); its eigenpairs give the
    // right singular vectors without decomposing the tall matrix itself.
    let gram = h0.adjoint() * h0;
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n_p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let l1 = eig.eigenvalues[order[0]].max(0.0);
    let fro2: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    let residual = ((fro2 - l1).max(0.0) / fro2.max(f64::MIN_POSITIVE)).sqrt();
    if residual > tol {
        return Err(ChannelError::NearField { residual, tol });
    }
    let v1 = eig.eigenvectors.column(order[0]).into_owned();
    let sigma1 = l1.sqrt();
    let mut u_p = v1.clone() * C64::new((n_p as f64).sqrt(), 0.0);
    let mut u_a = (h0 * v1) * C64::new((n_a as f64).sqrt() / sigma1.max(f64::MIN_POSITIVE), 0.0);
    let lead = u_a[0];
    if lead.norm() > 1e-300 {
        let rot = lead.conj() / lead.norm();
        u_a *= rot;
        u_p *= rot;
    }
    Ok(RankOneFactors { link_gain: l1 / (n_a as f64 * n_p as f64), u_a, u_p, residual })
}

/// Builds the complete channel state for one evaluated slot.
pub fn build_snapshot(
    slot_geo: &SlotGeometry,
    layout: &NetworkLayout,
    plane_antenna: &AntennaModel,
    abs_antenna: &AntennaModel,
    fc_mhz: f64,
    absorption_db_per_km: f64,
    far_field_tol: f64,
) -> Result<ChannelSnapshot, ChannelError> {
    let h0 = a2g_channel(
        &slot_geo.abs,
        &layout.abs_position,
        plane_antenna,
        abs_antenna,
        fc_mhz,
        absorption_db_per_km,
    );
    let factors = rank_one_factors(&h0, far_field_tol)?;
    let n_a = h0.nrows() as f64;
    let rx_combined = (h0.adjoint() * &factors.u_a) / C64::new(n_a.sqrt(), 0.0);
    let h_tbs: Vec<DVector<C64>> = slot_geo
        .tbs
        .iter()
        .zip(&layout.tbs)
        .map(|(geo, site)| {
            interference_vector(geo, site, plane_antenna, fc_mhz, absorption_db_per_km)
        })
        .collect();
    Ok(ChannelSnapshot {
        tau_s: slot_geo.abs.tau_s,
        link_gain: factors.link_gain,
        u_a: factors.u_a,
        u_p: factors.u_p,
        rx_combined,
        far_field_residual: factors.residual,
        abs_distance_m: slot_geo.abs.distance_m,
        tbs_distances_m: slot_geo.tbs.iter().map(|g| g.distance_m).collect(),
        h0,
        h_tbs,
    })
}

/// Serializable diagnostic view of a snapshot: magnitudes in dB, phases in
/// radians.
#[derive(Debug, Serialize)]
pub struct SnapshotDump {
    pub tau_s: f64,
    pub abs_distance_m: f64,
    pub link_gain_db: f64,
    pub far_field_residual: f64,
    pub u_p_phases_rad: Vec<f64>,
    pub tbs: Vec<TbsLinkDump>,
    /// Entry phases of the A2G matrix, row-major; populated on request only
    /// (it is rx-elements x tx-elements large).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h0_phases_rad: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct TbsLinkDump {
    pub distance_m: f64,
    pub entry_magnitude_db: f64,
}

impl SnapshotDump {
    pub fn new(snap: &ChannelSnapshot, include_h0: bool) -> Self {
        SnapshotDump {
            tau_s: snap.tau_s,
            abs_distance_m: snap.abs_distance_m,
            link_gain_db: linear_to_db(snap.link_gain),
            far_field_residual: snap.far_field_residual,
            u_p_phases_rad: snap.u_p.iter().map(|c| c.arg()).collect(),
            tbs: snap
                .h_tbs
                .iter()
                .zip(&snap.tbs_distances_m)
                .map(|(h, &d)| TbsLinkDump {
                    distance_m: d,
                    entry_magnitude_db: linear_to_db(h[0].norm_sqr()),
                })
                .collect(),
            h0_phases_rad: include_h0
                .then(|| snap.h0.row_iter().flat_map(|r| r.iter().map(|c| c.arg()).collect::<Vec<_>>()).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antennas::UpaElement;
    use crate::geometry::{DescentTrajectory, SlotInterval, slot_geometry};
    use approx::assert_relative_eq;

    #[test]
    fn path_loss_reference_points() {
        assert!((path_loss_db(75.0, 2000.0, 0.01) - 76.02).abs() < 0.01);
        // Below the clamp only the absorption term changes.
        let clamped = path_loss_db(50.0, 2000.0, 0.01);
        let at_clamp = path_loss_db(75.0, 2000.0, 0.01);
        assert_relative_eq!(clamped, at_clamp - 0.01 * 0.025, max_relative = 1e-12);
        assert!((path_loss_db(10_000.0, 28_000.0, 0.1) - 142.44).abs() < 0.01);
    }

    #[test]
    fn path_gain_matches_loss() {
        let d = 1234.5;
        assert_relative_eq!(
            linear_to_db(path_gain(d, 2000.0, 0.01)),
            -path_loss_db(d, 2000.0, 0.01),
            max_relative = 1e-12
        );
    }

    fn single_antenna_geometry(d: f64) -> (SlotGeometry, NetworkLayout) {
        let layout = NetworkLayout {
            abs_position: Vector3::new(d, 0.0, 0.0),
            bs_height_m: 30.0,
            tbs: vec![],
        };
        let geo = SlotGeometry {
            abs: BsGeometry {
                distance_m: d,
                plane_position: Vector3::zeros(),
                tau_s: 0.0,
            },
            tbs: vec![],
        };
        (geo, layout)
    }

    #[test]
    fn scalar_channel_has_textbook_magnitude_and_phase() {
        let (geo, layout) = single_antenna_geometry(1000.0);
        let omni = AntennaModel::Omni { gain_dbi: 0.0 };
        let h = a2g_channel(&geo.abs, &layout.abs_position, &omni, &omni, 2000.0, 0.01);
        assert_eq!(h.shape(), (1, 1));
        let expected_mag = db_to_linear(-path_loss_db(1000.0, 2000.0, 0.01) / 2.0);
        assert_relative_eq!(h[(0, 0)].norm(), expected_mag, max_relative = 1e-12);
        let wl = wavelength_m(2000.0);
        let expected_phase = -(2.0 * std::f64::consts::PI * 1000.0 / wl).rem_euclid(2.0 * std::f64::consts::PI);
        let got = h[(0, 0)].arg().rem_euclid(2.0 * std::f64::consts::PI);
        assert_relative_eq!(got, expected_phase.rem_euclid(2.0 * std::f64::consts::PI), epsilon = 1e-6);
    }

    #[test]
    fn entry_magnitudes_are_uniform() {
        let traj = DescentTrajectory::new(3.0, -12.7, 4000.0, 12_000.0).unwrap();
        let layout = NetworkLayout {
            abs_position: NetworkLayout::standard_abs_position(4000.0, 30.0),
            bs_height_m: 30.0,
            tbs: vec![],
        };
        let iv = SlotInterval { tau_start_s: 150.5, tau_end_s: 150.0 };
        let geo = slot_geometry(iv, &traj, &layout);
        let plane = AntennaModel::belly_upa(
            5,
            5,
            UpaElement::Directional {
                boresight_gain_dbi: 8.0,
                az_beamwidth_deg: 65.0,
                el_beamwidth_deg: 65.0,
            },
        );
        let abs = AntennaModel::mast_upa(8, 8, UpaElement::Omni { gain_dbi: 0.0 });
        let h = a2g_channel(&geo.abs, &layout.abs_position, &plane, &abs, 2000.0, 0.01);
        let m0 = h[(0, 0)].norm();
        for v in h.iter() {
            assert_relative_eq!(v.norm(), m0, max_relative = 1e-12);
        }
    }

    #[test]
    fn synthesized_descent_channel_is_far_field_rank_one() {
        let traj = DescentTrajectory::new(3.0, -12.7, 4000.0, 12_000.0).unwrap();
        let layout = NetworkLayout {
            abs_position: NetworkLayout::standard_abs_position(4000.0, 30.0),
            bs_height_m: 30.0,
            tbs: vec![],
        };
        let plane = AntennaModel::belly_upa(5, 5, UpaElement::Omni { gain_dbi: 0.0 });
        let abs = AntennaModel::mast_upa(32, 32, UpaElement::Omni { gain_dbi: 0.0 });
        for tau in [300.0, 150.0, 20.0, 0.1] {
            let iv = SlotInterval { tau_start_s: tau, tau_end_s: tau - 0.1 };
            let geo = slot_geometry(iv, &traj, &layout);
            let h = a2g_channel(&geo.abs, &layout.abs_position, &plane, &abs, 2000.0, 0.01);
            let f = rank_one_factors(&h, 1e-2).unwrap();
            // Curvature peaks near touchdown (2 km slant range) at ~1.6e-3.
            assert!(f.residual <= 2e-3, "residual {} at tau {}", f.residual, tau);
            assert_relative_eq!(f.u_a.norm_squared(), 1024.0, max_relative = 1e-9);
            assert_relative_eq!(f.u_p.norm_squared(), 25.0, max_relative = 1e-9);
            assert!(f.u_a[0].im.abs() < 1e-12 && f.u_a[0].re >= 0.0);
            // Uniform magnitudes mean the entry power is the link gain.
            assert_relative_eq!(h[(0, 0)].norm_sqr(), f.link_gain, max_relative = 1e-6);
        }
    }

    #[test]
    fn factor_round_trip_recovers_synthetic_rank_one() {
        let n_a = 6;
        let n_p = 4;
        let g = 3.7e-9f64;
        let u_a = DVector::from_fn(n_a, |i, _| C64::from_polar(1.0, 0.3 * i as f64));
        let u_p = DVector::from_fn(n_p, |i, _| C64::from_polar(1.0, -0.9 * i as f64 + 0.2));
        let h = DMatrix::from_fn(n_a, n_p, |i, j| {
            C64::new(g.sqrt(), 0.0) * u_a[i] * u_p[j].conj()
        });
        let f = rank_one_factors(&h, 1e-9).unwrap();
        assert_relative_eq!(f.link_gain, g, max_relative = 1e-9);
        assert!(f.residual < 1e-7);
        // Outer product is phase-convention independent.
        let outer_in = &u_a * u_p.adjoint();
        let outer_out = &f.u_a * f.u_p.adjoint();
        for (a, b) in outer_in.iter().zip(outer_out.iter()) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-9);
            assert_relative_eq!(a.im, b.im, epsilon = 1e-9);
        }
    }

    #[test]
    fn scalar_factorization_is_total() {
        let h = DMatrix::from_element(1, 1, C64::from_polar(2.5e-4, 1.1));
        let f = rank_one_factors(&h, 1e-3).unwrap();
        assert_relative_eq!(f.link_gain, 6.25e-8, max_relative = 1e-9);
        assert_relative_eq!(f.u_a[0].re, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn near_field_geometry_is_rejected() {
        // Two receive elements spaced comparably to the link distance see
        // grossly different directions: not rank-one.
        let wl = wavelength_m(2000.0);
        let positions = [0.0, 35.0_f64];
        let tx = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(50.0, 0.0, 0.0)];
        let rx_base = Vector3::new(30.0, 40.0, 0.0);
        let k = 2.0 * std::f64::consts::PI / wl;
        let h = DMatrix::from_fn(2, 2, |n, m| {
            let rx = rx_base + Vector3::new(0.0, positions[n], 0.0);
            C64::from_polar(1e-3, -k * (rx - tx[m]).norm())
        });
        assert!(matches!(
            rank_one_factors(&h, 1e-3),
            Err(ChannelError::NearField { .. })
        ));
    }

    #[test]
    fn interference_entries_have_the_stated_power() {
        let traj = DescentTrajectory::new(3.0, -12.7, 4000.0, 12_000.0).unwrap();
        let site = TbsSite {
            position: Vector3::new(20_000.0, 1500.0, 30.0),
            sectors: vec![AntennaModel::directional(-90.0, 0.0, 17.7)],
        };
        let layout = NetworkLayout {
            abs_position: NetworkLayout::standard_abs_position(4000.0, 30.0),
            bs_height_m: 30.0,
            tbs: vec![site.clone()],
        };
        let iv = SlotInterval { tau_start_s: 100.5, tau_end_s: 100.0 };
        let geo = slot_geometry(iv, &traj, &layout);
        let plane = AntennaModel::belly_upa(5, 5, UpaElement::Omni { gain_dbi: 0.0 });
        let h = interference_vector(&geo.tbs[0], &site, &plane, 2000.0, 0.01);
        assert_eq!(h.len(), 25);
        let to_tbs = (site.position - geo.tbs[0].plane_position).normalize();
        let expected = path_gain(geo.tbs[0].distance_m, 2000.0, 0.01)
            * plane.directivity_gain(&to_tbs)
            * site.receive_gain(&(-to_tbs));
        assert_relative_eq!(h.norm_squared(), 25.0 * expected, max_relative = 1e-9);
        for v in h.iter() {
            assert_relative_eq!(v.norm_sqr(), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn snapshot_composes_all_links() {
        let traj = DescentTrajectory::new(3.0, -12.7, 4000.0, 12_000.0).unwrap();
        let site = TbsSite {
            position: Vector3::new(5_000.0, -800.0, 30.0),
            sectors: vec![AntennaModel::directional(90.0, 0.0, 17.7)],
        };
        let layout = NetworkLayout {
            abs_position: NetworkLayout::standard_abs_position(4000.0, 30.0),
            bs_height_m: 30.0,
            tbs: vec![site],
        };
        let iv = SlotInterval { tau_start_s: 60.0, tau_end_s: 59.9 };
        let geo = slot_geometry(iv, &traj, &layout);
        let plane = AntennaModel::belly_upa(5, 5, UpaElement::Omni { gain_dbi: 0.0 });
        let abs = AntennaModel::mast_upa(16, 16, UpaElement::Omni { gain_dbi: 0.0 });
        let snap = build_snapshot(&geo, &layout, &plane, &abs, 2000.0, 0.01, 1e-3).unwrap();
        assert_eq!(snap.n_rx(), 256);
        assert_eq!(snap.n_tx(), 25);
        assert_eq!(snap.h_tbs.len(), 1);
        assert_relative_eq!(snap.combined_gain(), snap.rx_combined.norm_squared());
        // The combined channel concentrates the full receive-side gain.
        assert_relative_eq!(
            snap.combined_gain(),
            snap.link_gain * 256.0 * 25.0,
            max_relative = 1e-4
        );
        let dump = SnapshotDump::new(&snap, false);
        assert!(dump.h0_phases_rad.is_none());
        assert_eq!(dump.tbs.len(), 1);
    }
}
