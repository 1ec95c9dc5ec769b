//! Descent trajectory, airport layout, and per-slot relative geometry between
//! the plane, the airport base station, and terrestrial stations.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::antennas::{AntennaModel, UpaElement};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("pitch angle must lie in (0, 90) degrees, got {0}")]
    BadPitch(f64),
    #[error("vertical velocity must be negative (descending), got {0}")]
    BadVerticalVelocity(f64),
    #[error("runway length must be positive, got {0}")]
    BadRunway(f64),
    #[error("cruise altitude must be positive, got {0}")]
    BadCruiseAltitude(f64),
    #[error("layout region has zero area")]
    EmptyRegion,
    #[error("slot grid invalid: {0}")]
    BadSlotGrid(String),
    #[error("observer and target coincide")]
    CoincidentPoints,
    #[error("boresight has no horizontal component")]
    DegenerateBoresight,
    #[error("TBS at ({0:.1}, {1:.1}, {2:.1}) intersects the descent path")]
    TbsOnPath(f64, f64, f64),
}

/// Straight-line descent at constant vertical speed: altitude |v_y| * tau
/// capped at the cruise ceiling, ground track along +x toward touchdown at
/// the origin.
#[derive(Debug, Clone)]
pub struct DescentTrajectory {
    pub pitch_angle_deg: f64,
    pub vertical_velocity_mps: f64,
    pub runway_length_m: f64,
    pub cruise_altitude_m: f64,
}

impl DescentTrajectory {
    pub fn new(
        pitch_angle_deg: f64,
        vertical_velocity_mps: f64,
        runway_length_m: f64,
        cruise_altitude_m: f64,
    ) -> Result<Self, GeometryError> {
        if !(pitch_angle_deg > 0.0 && pitch_angle_deg < 90.0) {
            return Err(GeometryError::BadPitch(pitch_angle_deg));
        }
        if vertical_velocity_mps >= 0.0 {
            return Err(GeometryError::BadVerticalVelocity(vertical_velocity_mps));
        }
        if runway_length_m <= 0.0 {
            return Err(GeometryError::BadRunway(runway_length_m));
        }
        if cruise_altitude_m <= 0.0 {
            return Err(GeometryError::BadCruiseAltitude(cruise_altitude_m));
        }
        Ok(Self { pitch_angle_deg, vertical_velocity_mps, runway_length_m, cruise_altitude_m })
    }

    pub fn altitude(&self, tau_s: f64) -> f64 {
        (self.vertical_velocity_mps.abs() * tau_s).min(self.cruise_altitude_m)
    }

    /// Plane position `tau_s` seconds before touchdown.
    pub fn position(&self, tau_s: f64) -> Vector3<f64> {
        let z = self.altitude(tau_s);
        let x = z / self.pitch_angle_deg.to_radians().tan();
        Vector3::new(x, 0.0, z)
    }
}

/// Axis-aligned ground rectangle in which terrestrial stations are placed.
#[derive(Debug, Clone, Copy)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(GeometryError::EmptyRegion);
        }
        Ok(())
    }
}

/// A terrestrial base-station site: a position plus one or more co-located
/// sector antennas; its effective gain toward a direction is the best sector.
#[derive(Debug, Clone)]
pub struct TbsSite {
    pub position: Vector3<f64>,
    pub sectors: Vec<AntennaModel>,
}

impl TbsSite {
    /// Receive-gain bound toward `direction` (unit vector from the site).
    ///
    /// A site with several antennas could combine their feeds coherently in
    /// any direction, so it is bounded by the sum of the per-antenna peaks,
    /// independent of direction. A single fixed antenna keeps its pattern.
    pub fn receive_gain(&self, direction: &Vector3<f64>) -> f64 {
        match self.sectors.as_slice() {
            [single] => single.receive_gain_upper_bound(direction),
            many => many.iter().map(AntennaModel::peak_gain).sum(),
        }
    }
}

/// Antenna fit-out applied to every generated TBS site.
#[derive(Debug, Clone)]
pub enum TbsAntennaKind {
    /// Three sectors of the standard pattern, primary sector facing the
    /// descent-path ground projection, others at +/-120 degrees.
    TriSector { boresight_gain_dbi: f64, tilt_deg: f64 },
    /// Beamforming-capable array; interference accounting uses the
    /// count-times-element-peak bound, so mounting is immaterial.
    Upa { rows: usize, cols: usize, element: UpaElement },
    Omni { gain_dbi: f64 },
}

#[derive(Debug, Clone)]
pub struct NetworkLayout {
    pub abs_position: Vector3<f64>,
    pub bs_height_m: f64,
    pub tbs: Vec<TbsSite>,
}

impl NetworkLayout {
    /// The designated station sits at the runway midpoint (-R/2, 0) at
    /// standard base-station height.
    pub fn standard_abs_position(runway_length_m: f64, bs_height_m: f64) -> Vector3<f64> {
        Vector3::new(-runway_length_m / 2.0, 0.0, bs_height_m)
    }

    /// Rejects layouts with a TBS on (or hazardously close to) the descent
    /// segment itself, where link distances would degenerate.
    pub fn validate_against(&self, traj: &DescentTrajectory) -> Result<(), GeometryError> {
        let a = Vector3::new(0.0, 0.0, 0.0);
        let b = traj.position(f64::INFINITY);
        let ab = b - a;
        let len2 = ab.norm_squared();
        for site in &self.tbs {
            let t = ((site.position - a).dot(&ab) / len2).clamp(0.0, 1.0);
            let closest = a + ab * t;
            if (site.position - closest).norm() < 1.0 {
                let p = site.position;
                return Err(GeometryError::TbsOnPath(p.x, p.y, p.z));
            }
        }
        Ok(())
    }
}

/// Deterministic uniform placement of `count` sites inside `region` at
/// base-station height, with sector boresights facing the descent-path
/// ground projection (the +x axis).
pub fn generate_tbs_layout(
    seed: u64,
    count: usize,
    region: Region,
    abs_position: Vector3<f64>,
    bs_height_m: f64,
    kind: &TbsAntennaKind,
) -> Result<NetworkLayout, GeometryError> {
    region.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut tbs = Vec::with_capacity(count);
    for _ in 0..count {
        let x = rng.gen_range(region.x_min..region.x_max);
        let y = rng.gen_range(region.y_min..region.y_max);
        let position = Vector3::new(x, y, bs_height_m);
        let sectors = match kind {
            TbsAntennaKind::TriSector { boresight_gain_dbi, tilt_deg } => {
                // Primary sector looks from the site toward the y=0 line.
                let primary = if y > 0.0 { -90.0 } else { 90.0 };
                vec![
                    AntennaModel::directional(primary, *tilt_deg, *boresight_gain_dbi),
                    AntennaModel::directional(primary + 120.0, *tilt_deg, *boresight_gain_dbi),
                    AntennaModel::directional(primary - 120.0, *tilt_deg, *boresight_gain_dbi),
                ]
            }
            TbsAntennaKind::Upa { rows, cols, element } => {
                vec![AntennaModel::mast_upa(*rows, *cols, *element)]
            }
            TbsAntennaKind::Omni { gain_dbi } => vec![AntennaModel::Omni { gain_dbi: *gain_dbi }],
        };
        tbs.push(TbsSite { position, sectors });
    }
    Ok(NetworkLayout { abs_position, bs_height_m, tbs })
}

/// Evaluation slots: time runs from tau = window down to touchdown; one
/// evaluated slot stands for `decimation` physical slots, with a finer stride
/// inside the last `refine_last_s` seconds where geometry changes fastest.
#[derive(Debug, Clone)]
pub struct SlotGrid {
    pub slot_duration_s: f64,
    pub window_s: f64,
    pub decimation: u64,
    pub refine_last_s: f64,
    pub refine_divisor: u64,
}

/// One evaluated interval [tau_start, tau_end] with tau_start > tau_end; the
/// represented air time is their difference.
#[derive(Debug, Clone, Copy)]
pub struct SlotInterval {
    pub tau_start_s: f64,
    pub tau_end_s: f64,
}

impl SlotInterval {
    pub fn weight_s(&self) -> f64 {
        self.tau_start_s - self.tau_end_s
    }

    /// Count of whole physical slots from touchdown to this interval's end,
    /// used as a time key that is stable across different window lengths.
    pub fn end_slot_index(&self, slot_duration_s: f64) -> u64 {
        (self.tau_end_s / slot_duration_s).round() as u64
    }
}

impl SlotGrid {
    pub fn new(
        slot_duration_s: f64,
        window_s: f64,
        decimation: u64,
        refine_last_s: f64,
        refine_divisor: u64,
    ) -> Result<Self, GeometryError> {
        if slot_duration_s <= 0.0 {
            return Err(GeometryError::BadSlotGrid("slot duration must be positive".into()));
        }
        if window_s < 0.0 {
            return Err(GeometryError::BadSlotGrid("window must be nonnegative".into()));
        }
        let n = window_s / slot_duration_s;
        if (n - n.round()).abs() > 1e-6 * n.max(1.0) {
            return Err(GeometryError::BadSlotGrid(format!(
                "window {window_s} s is not a whole number of {slot_duration_s} s slots"
            )));
        }
        if decimation == 0 || refine_divisor == 0 {
            return Err(GeometryError::BadSlotGrid("decimation factors must be positive".into()));
        }
        Ok(Self { slot_duration_s, window_s, decimation, refine_last_s, refine_divisor })
    }

    pub fn intervals(&self) -> Vec<SlotInterval> {
        let total = (self.window_s / self.slot_duration_s).round() as u64;
        let refine_boundary = ((self.refine_last_s / self.slot_duration_s).round() as u64).min(total);
        let fine = (self.decimation / self.refine_divisor).max(1);
        let mut out = Vec::new();
        let mut b = total;
        while b > 0 {
            let next = if b > refine_boundary {
                (b - self.decimation.min(b)).max(refine_boundary)
            } else {
                b - fine.min(b)
            };
            out.push(SlotInterval {
                tau_start_s: b as f64 * self.slot_duration_s,
                tau_end_s: next as f64 * self.slot_duration_s,
            });
            b = next;
        }
        out
    }
}

/// Distance and the matching plane position for one base station over one
/// evaluated slot: the infimum over the interval, taken at whichever slot
/// endpoint is closer (the within-slot track is a straight segment).
#[derive(Debug, Clone)]
pub struct BsGeometry {
    pub distance_m: f64,
    pub plane_position: Vector3<f64>,
    pub tau_s: f64,
}

#[derive(Debug, Clone)]
pub struct SlotGeometry {
    pub abs: BsGeometry,
    pub tbs: Vec<BsGeometry>,
}

pub fn slot_geometry(
    interval: SlotInterval,
    traj: &DescentTrajectory,
    layout: &NetworkLayout,
) -> SlotGeometry {
    let p_start = traj.position(interval.tau_start_s);
    let p_end = traj.position(interval.tau_end_s);
    let pick = |bs: &Vector3<f64>| {
        let d_start = (p_start - bs).norm();
        let d_end = (p_end - bs).norm();
        if d_end <= d_start {
            BsGeometry { distance_m: d_end, plane_position: p_end, tau_s: interval.tau_end_s }
        } else {
            BsGeometry { distance_m: d_start, plane_position: p_start, tau_s: interval.tau_start_s }
        }
    };
    SlotGeometry {
        abs: pick(&layout.abs_position),
        tbs: layout.tbs.iter().map(|site| pick(&site.position)).collect(),
    }
}

/// Signed azimuth of the observer-to-target ray relative to a boresight
/// (horizontal-plane angle, (-180, 180]) and the ray's elevation above the
/// horizontal plane, both in degrees.
pub fn relative_angles(
    observer_pos: &Vector3<f64>,
    observer_boresight: &Vector3<f64>,
    target_pos: &Vector3<f64>,
) -> Result<(f64, f64), GeometryError> {
    let ray = target_pos - observer_pos;
    let norm = ray.norm();
    if norm < 1e-12 {
        return Err(GeometryError::CoincidentPoints);
    }
    let bore_h = Vector3::new(observer_boresight.x, observer_boresight.y, 0.0);
    if bore_h.norm() < 1e-12 {
        return Err(GeometryError::DegenerateBoresight);
    }
    let elevation = (ray.z / norm).clamp(-1.0, 1.0).asin().to_degrees();
    let ray_az = ray.y.atan2(ray.x);
    let bore_az = bore_h.y.atan2(bore_h.x);
    let azimuth = crate::antennas::wrap_deg((ray_az - bore_az).to_degrees());
    Ok((azimuth, elevation))
}
