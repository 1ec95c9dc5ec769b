//! Directivity-gain models: omnidirectional, sectorized directional patterns,
//! and uniform planar arrays with per-element patterns and grid geometry.

use nalgebra::Vector3;
use thiserror::Error;

use crate::units::db_to_linear;

#[derive(Debug, Error)]
pub enum AntennaError {
    #[error("element positions are only defined for array antennas")]
    NotAnArray,
    #[error("array broadside and row axis must be nonzero and non-parallel")]
    DegenerateAxes,
    #[error("array must have at least one element")]
    EmptyArray,
}

/// Radiation pattern of a single array element, boresight along the array
/// broadside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpaElement {
    Omni {
        gain_dbi: f64,
    },
    Directional {
        boresight_gain_dbi: f64,
        az_beamwidth_deg: f64,
        el_beamwidth_deg: f64,
    },
}

impl UpaElement {
    /// Largest linear gain the element can present in any direction.
    pub fn max_gain(&self) -> f64 {
        match *self {
            UpaElement::Omni { gain_dbi } => db_to_linear(gain_dbi),
            UpaElement::Directional { boresight_gain_dbi, .. } => db_to_linear(boresight_gain_dbi),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AntennaModel {
    Omni {
        gain_dbi: f64,
    },
    /// Single sector antenna with the quadratic-attenuation pattern: azimuth
    /// of the boresight is a world-frame bearing, tilt is elevation pointing
    /// (positive up).
    Directional {
        azimuth_deg: f64,
        tilt_deg: f64,
        boresight_gain_dbi: f64,
        az_beamwidth_deg: f64,
        el_beamwidth_deg: f64,
    },
    /// rows x cols planar array; element i,j sits on a grid spanned by
    /// `row_axis` and `broadside x row_axis`, facing `broadside`.
    Upa {
        rows: usize,
        cols: usize,
        spacing_wavelengths: f64,
        element: UpaElement,
        broadside: Vector3<f64>,
        row_axis: Vector3<f64>,
    },
}

/// Default sector beamwidths of the directional base-station pattern.
pub const SECTOR_AZ_BEAMWIDTH_DEG: f64 = 65.0;
pub const SECTOR_EL_BEAMWIDTH_DEG: f64 = 7.0;

impl AntennaModel {
    pub fn directional(azimuth_deg: f64, tilt_deg: f64, boresight_gain_dbi: f64) -> Self {
        AntennaModel::Directional {
            azimuth_deg,
            tilt_deg,
            boresight_gain_dbi,
            az_beamwidth_deg: SECTOR_AZ_BEAMWIDTH_DEG,
            el_beamwidth_deg: SECTOR_EL_BEAMWIDTH_DEG,
        }
    }

    /// Horizontal array on the aircraft belly facing the ground, rows along
    /// the world x-axis.
    pub fn belly_upa(rows: usize, cols: usize, element: UpaElement) -> Self {
        AntennaModel::Upa {
            rows,
            cols,
            spacing_wavelengths: 0.5,
            element,
            broadside: Vector3::new(0.0, 0.0, -1.0),
            row_axis: Vector3::new(1.0, 0.0, 0.0),
        }
    }

    /// Vertical array at a ground station, broadside toward +x (up the
    /// descent path), rows along the horizontal y-axis.
    pub fn mast_upa(rows: usize, cols: usize, element: UpaElement) -> Self {
        AntennaModel::Upa {
            rows,
            cols,
            spacing_wavelengths: 0.5,
            element,
            broadside: Vector3::new(1.0, 0.0, 0.0),
            row_axis: Vector3::new(0.0, 1.0, 0.0),
        }
    }

    pub fn element_count(&self) -> usize {
        match self {
            AntennaModel::Upa { rows, cols, .. } => rows * cols,
            _ => 1,
        }
    }

    /// Per-element directivity gain toward `direction` (unit vector from the
    /// antenna toward the peer, world frame). For arrays this is the element
    /// pattern only; array gain is carried by beamforming weights downstream.
    pub fn directivity_gain(&self, direction: &Vector3<f64>) -> f64 {
        let d = direction.normalize();
        match self {
            AntennaModel::Omni { gain_dbi } => db_to_linear(*gain_dbi),
            AntennaModel::Directional {
                azimuth_deg,
                tilt_deg,
                boresight_gain_dbi,
                az_beamwidth_deg,
                el_beamwidth_deg,
            } => {
                let eps_v = d.z.clamp(-1.0, 1.0).asin().to_degrees();
                let ray_az = d.y.atan2(d.x).to_degrees();
                let eps_h = wrap_deg(ray_az - azimuth_deg);
                pattern_gain(
                    eps_h,
                    eps_v,
                    *tilt_deg,
                    *boresight_gain_dbi,
                    *az_beamwidth_deg,
                    *el_beamwidth_deg,
                )
            }
            AntennaModel::Upa { element, broadside, row_axis, .. } => match *element {
                UpaElement::Omni { gain_dbi } => db_to_linear(gain_dbi),
                UpaElement::Directional {
                    boresight_gain_dbi,
                    az_beamwidth_deg,
                    el_beamwidth_deg,
                } => {
                    let (bore, az_axis, el_axis) =
                        array_frame(broadside, row_axis).expect("validated at construction");
                    let eps_h = d.dot(&az_axis).atan2(d.dot(&bore)).to_degrees();
                    let eps_v = d.dot(&el_axis).clamp(-1.0, 1.0).asin().to_degrees();
                    pattern_gain(
                        eps_h,
                        eps_v,
                        0.0,
                        boresight_gain_dbi,
                        az_beamwidth_deg,
                        el_beamwidth_deg,
                    )
                }
            },
        }
    }

    /// Offsets of every element from the array center, in meters, for a given
    /// carrier wavelength. Row-major order: element (r, c) is at index
    /// r*cols + c.
    pub fn element_positions(&self, wavelength_m: f64) -> Result<Vec<Vector3<f64>>, AntennaError> {
        match self {
            AntennaModel::Upa { rows, cols, spacing_wavelengths, broadside, row_axis, .. } => {
                if *rows == 0 || *cols == 0 {
                    return Err(AntennaError::EmptyArray);
                }
                let (bore, az_axis, el_axis) = array_frame(broadside, row_axis)?;
                let _ = bore;
                let s = spacing_wavelengths * wavelength_m;
                let r0 = (*rows as f64 - 1.0) / 2.0;
                let c0 = (*cols as f64 - 1.0) / 2.0;
                let mut out = Vec::with_capacity(rows * cols);
                for r in 0..*rows {
                    for c in 0..*cols {
                        let u = (r as f64 - r0) * s;
                        let v = (c as f64 - c0) * s;
                        out.push(az_axis * u + el_axis * v);
                    }
                }
                Ok(out)
            }
            _ => Err(AntennaError::NotAnArray),
        }
    }

    /// Receive-gain bound used for interference accounting: a beamforming
    /// array can realize at most (element count) x (max element gain) toward
    /// any direction, while fixed antennas contribute their pattern gain.
    pub fn receive_gain_upper_bound(&self, direction: &Vector3<f64>) -> f64 {
        match self {
            AntennaModel::Upa { element, .. } => self.element_count() as f64 * element.max_gain(),
            _ => self.directivity_gain(direction),
        }
    }

    /// Highest gain the antenna can present in any direction.
    pub fn peak_gain(&self) -> f64 {
        match self {
            AntennaModel::Omni { gain_dbi } => db_to_linear(*gain_dbi),
            AntennaModel::Directional { boresight_gain_dbi, .. } => db_to_linear(*boresight_gain_dbi),
            AntennaModel::Upa { element, .. } => self.element_count() as f64 * element.max_gain(),
        }
    }
}

/// Orthonormal (boresight, azimuth-axis, elevation-axis) frame of an array.
fn array_frame(
    broadside: &Vector3<f64>,
    row_axis: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>), AntennaError> {
    let bore_norm = broadside.norm();
    if bore_norm < 1e-12 {
        return Err(AntennaError::DegenerateAxes);
    }
    let bore = broadside / bore_norm;
    let raw = row_axis - bore * row_axis.dot(&bore);
    let raw_norm = raw.norm();
    if raw_norm < 1e-9 * row_axis.norm().max(1.0) {
        return Err(AntennaError::DegenerateAxes);
    }
    let az_axis = raw / raw_norm;
    let el_axis = bore.cross(&az_axis);
    Ok((bore, az_axis, el_axis))
}

/// Quadratic-rolloff sector pattern: attenuation 12(angle/beamwidth)^2 dB per
/// plane, clamped at 20 dB per plane and 20 dB total.
pub fn pattern_gain(
    eps_h_deg: f64,
    eps_v_deg: f64,
    tilt_deg: f64,
    boresight_gain_dbi: f64,
    az_beamwidth_deg: f64,
    el_beamwidth_deg: f64,
) -> f64 {
    let a_h = (12.0 * (eps_h_deg / az_beamwidth_deg).powi(2)).min(20.0);
    let a_v = (12.0 * ((eps_v_deg - tilt_deg) / el_beamwidth_deg).powi(2)).min(20.0);
    db_to_linear(boresight_gain_dbi - (a_h + a_v).min(20.0))
}

/// The standard tri-sector pattern (65 deg / 7 deg beamwidths).
pub fn tri_sector_gain(eps_h_deg: f64, eps_v_deg: f64, tilt_deg: f64, boresight_gain_dbi: f64) -> f64 {
    pattern_gain(
        eps_h_deg,
        eps_v_deg,
        tilt_deg,
        boresight_gain_dbi,
        SECTOR_AZ_BEAMWIDTH_DEG,
        SECTOR_EL_BEAMWIDTH_DEG,
    )
}

/// Wraps an angle in degrees to (-180, 180].
pub fn wrap_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sector_pattern_reference_points() {
        assert_relative_eq!(tri_sector_gain(0.0, 3.0, 3.0, 17.7), db_to_linear(17.7), max_relative = 1e-12);
        assert_relative_eq!(tri_sector_gain(65.0, 0.0, 0.0, 17.7), db_to_linear(5.7), max_relative = 1e-12);
        assert_relative_eq!(tri_sector_gain(180.0, 90.0, 0.0, 17.7), db_to_linear(-2.3), max_relative = 1e-12);
        assert!((tri_sector_gain(0.0, 3.0, 3.0, 17.7) - 58.88).abs() < 0.01);
        assert!((tri_sector_gain(65.0, 0.0, 0.0, 17.7) - 3.715).abs() < 0.01);
        assert!((tri_sector_gain(180.0, 90.0, 0.0, 17.7) - 0.589).abs() < 0.01);
    }

    #[test]
    fn sector_pattern_peaks_at_boresight_and_decays() {
        let peak = tri_sector_gain(0.0, 3.0, 3.0, 17.7);
        let mut prev_h = peak;
        let mut prev_v = peak;
        for k in 1..=60 {
            let g_h = tri_sector_gain(k as f64 * 3.0, 3.0, 3.0, 17.7);
            let g_v = tri_sector_gain(0.0, 3.0 + k as f64 * 1.5, 3.0, 17.7);
            assert!(g_h <= prev_h + 1e-15);
            assert!(g_v <= prev_v + 1e-15);
            prev_h = g_h;
            prev_v = g_v;
        }
    }

    #[test]
    fn directional_gain_from_world_direction() {
        let ant = AntennaModel::directional(0.0, 3.0, 17.7);
        let bore = Vector3::new(3.0f64.to_radians().cos(), 0.0, 3.0f64.to_radians().sin());
        assert_relative_eq!(ant.directivity_gain(&bore), db_to_linear(17.7), max_relative = 1e-9);
        let behind = Vector3::new(-1.0, 0.0, 0.0);
        assert_relative_eq!(ant.directivity_gain(&behind), db_to_linear(-2.3), max_relative = 1e-9);
    }

    #[test]
    fn omni_ignores_direction() {
        let ant = AntennaModel::Omni { gain_dbi: 0.0 };
        for d in [Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, -0.3, 0.95)] {
            assert_relative_eq!(ant.directivity_gain(&d), 1.0);
        }
    }

    #[test]
    fn element_grid_is_centered_and_spaced() {
        let upa = AntennaModel::belly_upa(2, 2, UpaElement::Omni { gain_dbi: 0.0 });
        let pos = upa.element_positions(0.15).unwrap();
        assert_eq!(pos.len(), 4);
        let s = 0.075;
        for p in &pos {
            assert_relative_eq!(p.x.abs(), s / 2.0, max_relative = 1e-12);
            assert_relative_eq!(p.y.abs(), s / 2.0, max_relative = 1e-12);
            assert_relative_eq!(p.z, 0.0);
        }
        let centroid: Vector3<f64> = pos.iter().sum::<Vector3<f64>>() / 4.0;
        assert!(centroid.norm() < 1e-14);

        let five = AntennaModel::belly_upa(5, 5, UpaElement::Omni { gain_dbi: 0.0 });
        let wl = crate::units::wavelength_m(2000.0);
        let pos = five.element_positions(wl).unwrap();
        assert_eq!(pos.len(), 25);
        let span_x = pos.iter().map(|p| p.x).fold(f64::MIN, f64::max)
            - pos.iter().map(|p| p.x).fold(f64::MAX, f64::min);
        assert_relative_eq!(span_x, 4.0 * 0.5 * wl, max_relative = 1e-12);
        assert!((span_x - 0.2998).abs() < 1e-3);
    }

    #[test]
    fn element_positions_reject_non_arrays() {
        let ant = AntennaModel::Omni { gain_dbi: 0.0 };
        assert!(matches!(ant.element_positions(0.15), Err(AntennaError::NotAnArray)));
    }

    #[test]
    fn array_receive_bound_is_count_times_element_peak() {
        let tbs = AntennaModel::mast_upa(
            16,
            16,
            UpaElement::Directional {
                boresight_gain_dbi: 8.0,
                az_beamwidth_deg: 65.0,
                el_beamwidth_deg: 65.0,
            },
        );
        let d = Vector3::new(0.3, 0.2, 0.93);
        let bound = tbs.receive_gain_upper_bound(&d);
        assert!((bound - 1615.25).abs() < 0.1);

        let single = AntennaModel::Omni { gain_dbi: 0.0 };
        assert_relative_eq!(single.receive_gain_upper_bound(&d), 1.0);
        let quad = AntennaModel::mast_upa(2, 2, UpaElement::Omni { gain_dbi: 0.0 });
        assert_relative_eq!(quad.receive_gain_upper_bound(&d), 4.0);
    }

    #[test]
    fn array_bound_dominates_beamformed_gain() {
        let upa = AntennaModel::mast_upa(
            4,
            4,
            UpaElement::Directional {
                boresight_gain_dbi: 8.0,
                az_beamwidth_deg: 65.0,
                el_beamwidth_deg: 65.0,
            },
        );
        for k in 0..50 {
            let t = k as f64 / 49.0;
            let d = Vector3::new((1.0 - t).max(0.05), 0.6 * t - 0.3, 0.2 + 0.7 * t).normalize();
            let coherent = upa.element_count() as f64 * upa.directivity_gain(&d);
            assert!(upa.receive_gain_upper_bound(&d) >= coherent - 1e-9);
        }
    }

    #[test]
    fn wrap_covers_both_edges() {
        assert_relative_eq!(wrap_deg(190.0), -170.0);
        assert_relative_eq!(wrap_deg(-190.0), 170.0);
        assert_relative_eq!(wrap_deg(180.0), 180.0);
        assert_relative_eq!(wrap_deg(540.0), 180.0);
    }
}
