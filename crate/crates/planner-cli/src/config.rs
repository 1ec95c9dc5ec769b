//! Run configuration: JSON ingestion with band presets and simulation-table
//! defaults, antenna and layout descriptors, validation, and resolution into
//! a fully specified plan.

use std::fmt;
use std::path::{Path, PathBuf};

use a2g_core::antennas::{AntennaModel, UpaElement};
use a2g_core::geometry::{
    generate_tbs_layout, DescentTrajectory, NetworkLayout, Region, TbsAntennaKind, TbsSite,
};
use a2g_core::linkrate::{McsTable, RateMap};
use a2g_core::optimizer::Scenario;
use a2g_core::sdp::SdpOptions;
use a2g_core::units::dbm_to_watts;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// Frequency band: a named preset or fully custom numbers.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum BandSpec {
    Named(BandName),
    Custom {
        fc_mhz: f64,
        bandwidth_hz: f64,
        absorption_db_per_km: f64,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BandName {
    Microwave,
    Mmwave,
}

impl fmt::Display for BandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandName::Microwave => f.write_str("microwave"),
            BandName::Mmwave => f.write_str("mmwave"),
        }
    }
}

/// Interference threshold: a dBm number or the string "inf".
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum DeltaSpec {
    Dbm(f64),
    Word(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum McsSpec {
    Named(McsName),
    Table {
        thresholds_db: Vec<f64>,
        efficiencies: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub enum McsName {
    #[serde(rename = "lte-a")]
    LteA,
    #[serde(rename = "shannon")]
    Shannon,
}

/// Antenna at the plane or the ABS.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AntennaSpec {
    Omni {
        gain_dbi: f64,
    },
    Directional {
        azimuth_deg: f64,
        tilt_deg: f64,
        boresight_gain_dbi: f64,
    },
    Upa {
        rows: usize,
        cols: usize,
        element: ElementSpec,
        mount: Mount,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ElementSpec {
    Omni {
        gain_dbi: f64,
    },
    Directional {
        boresight_gain_dbi: f64,
        az_beamwidth_deg: f64,
        el_beamwidth_deg: f64,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Mount {
    /// Horizontal array under the fuselage, broadside down.
    Belly,
    /// Vertical array on a ground mast, broadside up the descent path.
    Mast,
}

impl ElementSpec {
    fn build(&self) -> UpaElement {
        match *self {
            ElementSpec::Omni { gain_dbi } => UpaElement::Omni { gain_dbi },
            ElementSpec::Directional {
                boresight_gain_dbi,
                az_beamwidth_deg,
                el_beamwidth_deg,
            } => UpaElement::Directional {
                boresight_gain_dbi,
                az_beamwidth_deg,
                el_beamwidth_deg,
            },
        }
    }
}

impl AntennaSpec {
    fn build(&self) -> AntennaModel {
        match self {
            AntennaSpec::Omni { gain_dbi } => AntennaModel::Omni { gain_dbi: *gain_dbi },
            AntennaSpec::Directional {
                azimuth_deg,
                tilt_deg,
                boresight_gain_dbi,
            } => AntennaModel::directional(*azimuth_deg, *tilt_deg, *boresight_gain_dbi),
            AntennaSpec::Upa {
                rows,
                cols,
                element,
                mount,
            } => match mount {
                Mount::Belly => AntennaModel::belly_upa(*rows, *cols, element.build()),
                Mount::Mast => AntennaModel::mast_upa(*rows, *cols, element.build()),
            },
        }
    }

    fn element_count(&self) -> usize {
        match self {
            AntennaSpec::Upa { rows, cols, .. } => rows * cols,
            _ => 1,
        }
    }
}

/// Antenna fit-out for generated terrestrial sites.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TbsAntennaSpec {
    TriSector {
        boresight_gain_dbi: f64,
        tilt_deg: f64,
    },
    Upa {
        rows: usize,
        cols: usize,
        element: ElementSpec,
    },
    Omni {
        gain_dbi: f64,
    },
}

impl TbsAntennaSpec {
    fn build(&self) -> TbsAntennaKind {
        match self {
            TbsAntennaSpec::TriSector {
                boresight_gain_dbi,
                tilt_deg,
            } => TbsAntennaKind::TriSector {
                boresight_gain_dbi: *boresight_gain_dbi,
                tilt_deg: *tilt_deg,
            },
            TbsAntennaSpec::Upa { rows, cols, element } => TbsAntennaKind::Upa {
                rows: *rows,
                cols: *cols,
                element: element.build(),
            },
            TbsAntennaSpec::Omni { gain_dbi } => TbsAntennaKind::Omni { gain_dbi: *gain_dbi },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Terrestrial-station placement: seeded generation or an explicit file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum LayoutSpec {
    File {
        file: PathBuf,
    },
    Generate {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        count: Option<usize>,
        #[serde(default)]
        region: Option<RegionSpec>,
        #[serde(default)]
        tbs_antenna: Option<TbsAntennaSpec>,
    },
}

/// Explicit site list accepted via `layout.file`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutFile {
    pub sites: Vec<SiteEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteEntry {
    /// [x, y, z] in meters.
    pub position: [f64; 3],
    pub antenna: TbsAntennaSpec,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub gap_rtol: Option<f64>,
    pub randomization_trials: Option<u32>,
    pub far_field_tol: Option<f64>,
    pub additive_cap_form: Option<bool>,
}

/// On-disk configuration document; every field optional, unknown keys
/// rejected. Absent fields take the standard simulation defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub band: Option<BandSpec>,
    pub scenario: Option<u8>,
    pub ts_s: Option<f64>,
    /// Largest accepted transmission window; raise it explicitly for longer
    /// studies.
    pub window_limit_s: Option<f64>,
    pub delta_dbm: Option<DeltaSpec>,
    pub p_max_w: Option<f64>,
    pub p_ant_w: Option<f64>,
    pub mcs: Option<McsSpec>,
    pub n_sub: Option<u32>,
    pub subchannel_hz: Option<f64>,
    pub slot_duration_s: Option<f64>,
    pub noise_psd_dbm_hz: Option<f64>,
    pub seed: Option<u64>,
    pub decimation: Option<u64>,
    pub refine_last_s: Option<f64>,
    pub refine_divisor: Option<u64>,
    pub layout: Option<LayoutSpec>,
    pub runway_length_m: Option<f64>,
    pub bs_height_m: Option<f64>,
    pub pitch_deg: Option<f64>,
    pub vertical_velocity_m_s: Option<f64>,
    pub cruise_altitude_m: Option<f64>,
    pub plane_antenna: Option<AntennaSpec>,
    pub abs_antenna: Option<AntennaSpec>,
    pub solver: Option<SolverSpec>,
    /// Re-solve the descent in reverse order once, reusing each slot's
    /// neighbor as a warm candidate, and keep the better rate per slot.
    pub second_pass: Option<bool>,
    pub exhaustive_m: Option<bool>,
    pub fixed_m: Option<u32>,
}

impl ConfigFile {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Parses a JSON document, reporting the JSON path of the offending
    /// field on failure.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                format!("{}", e.into_inner())
            } else {
                format!("at `{path}`: {}", e.into_inner())
            }
        })
    }
}

/// Everything the run loop needs, fully resolved and validated.
#[derive(Debug, Clone)]
pub struct Plan {
    pub band_label: String,
    pub fc_mhz: f64,
    pub bandwidth_hz: f64,
    pub absorption_db_per_km: f64,
    pub n_sub: u32,
    pub subchannel_hz: f64,
    pub scenario: Scenario,
    pub ts_s: f64,
    pub slot_duration_s: f64,
    /// Per-subchannel cap in watts; +inf disables the constraint.
    pub delta_w: f64,
    pub p_max_w: f64,
    pub p_ant_w: f64,
    pub rate_map: RateMap,
    pub noise_psd_w_hz: f64,
    pub seed: u64,
    pub decimation: u64,
    pub refine_last_s: f64,
    pub refine_divisor: u64,
    pub trajectory: DescentTrajectory,
    pub layout: NetworkLayout,
    pub plane_antenna: AntennaModel,
    pub abs_antenna: AntennaModel,
    pub randomization_trials: u32,
    pub far_field_tol: f64,
    pub additive_cap_form: bool,
    pub second_pass: bool,
    pub exhaustive_m: bool,
    pub fixed_m: Option<u32>,
    pub sdp: SdpOptions,
    /// The input document after defaulting, echoed into the summary.
    pub echo: ConfigFile,
}

const DEFAULT_WINDOW_S: f64 = 300.0;
const DEFAULT_SLOT_S: f64 = 1e-3;
/// LTE resource-block width; used only to derive a subchannel count for
/// custom bands (the actual width is the band split N_sub ways).
const NOMINAL_SUBCHANNEL_HZ: f64 = 180e3;
const DEFAULT_NOISE_PSD_DBM_HZ: f64 = -174.0;
const DEFAULT_P_MAX_W: f64 = 1.0;
const DEFAULT_P_ANT_W: f64 = 0.2;
const DEFAULT_DELTA_DBM: f64 = -100.0;
const DEFAULT_TBS_COUNT: usize = 120;
const DEFAULT_DECIMATION: u64 = 1000;
const DEFAULT_REFINE_LAST_S: f64 = 30.0;
const DEFAULT_REFINE_DIVISOR: u64 = 10;
const DEFAULT_RUNWAY_M: f64 = 4000.0;
const DEFAULT_BS_HEIGHT_M: f64 = 30.0;
const DEFAULT_PITCH_DEG: f64 = 3.0;
const DEFAULT_VY_MPS: f64 = -12.7;
const DEFAULT_CRUISE_M: f64 = 12_000.0;
const DEFAULT_REGION: RegionSpec = RegionSpec {
    x_min: -4_000.0,
    x_max: 72_000.0,
    y_min: -3_000.0,
    y_max: 3_000.0,
};

struct BandPreset {
    label: &'static str,
    fc_mhz: f64,
    bandwidth_hz: f64,
    absorption_db_per_km: f64,
    n_sub: u32,
}

fn preset(name: BandName) -> BandPreset {
    match name {
        BandName::Microwave => BandPreset {
            label: "microwave",
            fc_mhz: 2_000.0,
            bandwidth_hz: 20e6,
            absorption_db_per_km: 0.01,
            n_sub: 112,
        },
        BandName::Mmwave => BandPreset {
            label: "mmwave",
            fc_mhz: 28_000.0,
            bandwidth_hz: 1e9,
            absorption_db_per_km: 0.1,
            n_sub: 5556,
        },
    }
}

/// Default station antennas per scenario: single antennas are directional
/// (8 dBi at the plane facing the station, 17.7 dBi at the station tilted up
/// by the pitch angle), arrays are a 5x5 belly UPA of 8 dBi elements and a
/// 32x32 mast UPA of omni elements.
fn default_plane_antenna(scenario: Scenario) -> AntennaSpec {
    match scenario {
        Scenario::SingleToSingle | Scenario::SingleToArray => AntennaSpec::Directional {
            azimuth_deg: 180.0,
            tilt_deg: 0.0,
            boresight_gain_dbi: 8.0,
        },
        Scenario::ArrayToSingle | Scenario::ArrayToArray => AntennaSpec::Upa {
            rows: 5,
            cols: 5,
            element: ElementSpec::Directional {
                boresight_gain_dbi: 8.0,
                az_beamwidth_deg: 65.0,
                el_beamwidth_deg: 65.0,
            },
            mount: Mount::Belly,
        },
    }
}

fn default_abs_antenna(scenario: Scenario, pitch_deg: f64) -> AntennaSpec {
    match scenario {
        Scenario::SingleToSingle | Scenario::ArrayToSingle => AntennaSpec::Directional {
            azimuth_deg: 0.0,
            tilt_deg: pitch_deg,
            boresight_gain_dbi: 17.7,
        },
        Scenario::SingleToArray | Scenario::ArrayToArray => AntennaSpec::Upa {
            rows: 32,
            cols: 32,
            element: ElementSpec::Omni { gain_dbi: 0.0 },
            mount: Mount::Mast,
        },
    }
}

/// Macro sectors in the microwave band, beamforming arrays in mmWave.
fn default_tbs_antenna(band: BandName) -> TbsAntennaSpec {
    match band {
        BandName::Microwave => TbsAntennaSpec::TriSector {
            boresight_gain_dbi: 17.7,
            tilt_deg: 0.0,
        },
        BandName::Mmwave => TbsAntennaSpec::Upa {
            rows: 16,
            cols: 16,
            element: ElementSpec::Directional {
                boresight_gain_dbi: 8.0,
                az_beamwidth_deg: 65.0,
                el_beamwidth_deg: 65.0,
            },
        },
    }
}

impl ConfigFile {
    /// Applies defaults, checks physical consistency, and builds the plan.
    /// Collects every problem instead of stopping at the first; warnings
    /// come back alongside the plan.
    pub fn resolve(&self, base_dir: &Path) -> Result<(Plan, Vec<String>), ConfigError> {
        let mut errors: Vec<String> = Vec::new();
        let mut warnings: Vec<String> = Vec::new();

        let band_spec = self
            .band
            .clone()
            .unwrap_or(BandSpec::Named(BandName::Microwave));
        let named = match &band_spec {
            BandSpec::Named(n) => Some(*n),
            BandSpec::Custom { .. } => None,
        };
        let (band_label, fc_mhz, bandwidth_hz, absorption_db_per_km, band_n_sub) = match &band_spec
        {
            BandSpec::Named(n) => {
                let p = preset(*n);
                (p.label.to_string(), p.fc_mhz, p.bandwidth_hz, p.absorption_db_per_km, Some(p.n_sub))
            }
            BandSpec::Custom {
                fc_mhz,
                bandwidth_hz,
                absorption_db_per_km,
            } => ("custom".to_string(), *fc_mhz, *bandwidth_hz, *absorption_db_per_km, None),
        };
        if fc_mhz <= 0.0 {
            errors.push(format!("band.fc_mhz must be positive, got {fc_mhz}"));
        }
        if bandwidth_hz <= 0.0 {
            errors.push(format!("band.bandwidth_hz must be positive, got {bandwidth_hz}"));
        }

        let n_sub = self.n_sub.or(band_n_sub).unwrap_or_else(|| {
            ((bandwidth_hz / NOMINAL_SUBCHANNEL_HZ).round() as u32).max(1)
        });
        if n_sub == 0 {
            errors.push("n_sub must be at least 1".into());
        }
        // The subchannels partition the band, so the default width is B/N_sub
        // (about the nominal 180 kHz); an explicit width may overfill the band,
        // which we allow but call out.
        let subchannel_hz = self
            .subchannel_hz
            .unwrap_or(bandwidth_hz / (n_sub.max(1) as f64));
        if subchannel_hz <= 0.0 {
            errors.push(format!("subchannel_hz must be positive, got {subchannel_hz}"));
        } else if n_sub as f64 * subchannel_hz > bandwidth_hz * (1.0 + 1e-9) {
            warnings.push(format!(
                "n_sub = {n_sub} subchannels of {subchannel_hz} Hz exceed the {bandwidth_hz} Hz band"
            ));
        }

        let scenario_idx = self.scenario.unwrap_or(4);
        let scenario = match Scenario::from_index(scenario_idx) {
            Some(s) => s,
            None => {
                errors.push(format!("scenario must be 1..=4, got {scenario_idx}"));
                Scenario::ArrayToArray
            }
        };

        let ts_s = self.ts_s.unwrap_or(DEFAULT_WINDOW_S);
        let window_limit_s = self.window_limit_s.unwrap_or(DEFAULT_WINDOW_S);
        if !(ts_s >= 0.0) {
            errors.push(format!("ts_s must be nonnegative, got {ts_s}"));
        } else if ts_s > window_limit_s {
            errors.push(format!(
                "ts_s = {ts_s} exceeds window_limit_s = {window_limit_s}; raise window_limit_s to study longer windows"
            ));
        }
        let slot_duration_s = self.slot_duration_s.unwrap_or(DEFAULT_SLOT_S);
        if !(slot_duration_s > 0.0) {
            errors.push(format!("slot_duration_s must be positive, got {slot_duration_s}"));
        }

        let delta_w = match &self.delta_dbm {
            None => dbm_to_watts(DEFAULT_DELTA_DBM),
            Some(DeltaSpec::Dbm(dbm)) => {
                if *dbm > 0.0 {
                    warnings.push(format!(
                        "delta_dbm = {dbm} dBm is above 1 mW; interference caps are usually far below that"
                    ));
                }
                dbm_to_watts(*dbm)
            }
            Some(DeltaSpec::Word(w)) => {
                let lower = w.trim().to_ascii_lowercase();
                if lower == "inf" || lower == "infinity" {
                    f64::INFINITY
                } else {
                    errors.push(format!(
                        "delta_dbm must be a number in dBm or \"inf\", got \"{w}\""
                    ));
                    f64::INFINITY
                }
            }
        };

        let p_max_w = self.p_max_w.unwrap_or(DEFAULT_P_MAX_W);
        if !(p_max_w > 0.0) {
            errors.push(format!("p_max_w must be positive, got {p_max_w}"));
        }

        let pitch_deg = self.pitch_deg.unwrap_or(DEFAULT_PITCH_DEG);
        let plane_spec = self
            .plane_antenna
            .clone()
            .unwrap_or_else(|| default_plane_antenna(scenario));
        let abs_spec = self
            .abs_antenna
            .clone()
            .unwrap_or_else(|| default_abs_antenna(scenario, pitch_deg));
        let n_p = plane_spec.element_count();
        match (scenario, &plane_spec) {
            (Scenario::SingleToSingle | Scenario::SingleToArray, AntennaSpec::Upa { .. }) => {
                errors.push("scenarios 1 and 2 use a single plane antenna, not a UPA".into());
            }
            (Scenario::ArrayToSingle | Scenario::ArrayToArray, a) if a.element_count() == 1 => {
                errors.push("scenarios 3 and 4 need a UPA at the plane".into());
            }
            _ => {}
        }
        match (scenario, &abs_spec) {
            (Scenario::SingleToSingle | Scenario::ArrayToSingle, AntennaSpec::Upa { .. }) => {
                errors.push("scenarios 1 and 3 use a single station antenna, not a UPA".into());
            }
            (Scenario::SingleToArray | Scenario::ArrayToArray, a) if a.element_count() == 1 => {
                errors.push("scenarios 2 and 4 need a UPA at the station".into());
            }
            _ => {}
        }

        // Single-antenna transmitters have no separate per-element cap; for
        // arrays an unset cap defaults to the table value, raised to an even
        // power split when the budget cannot otherwise be spent.
        let p_ant_w = match self.p_ant_w {
            Some(v) => {
                if !(v > 0.0) {
                    errors.push(format!("p_ant_w must be positive, got {v}"));
                }
                v
            }
            None if n_p == 1 => p_max_w,
            None => DEFAULT_P_ANT_W.max(p_max_w / n_p as f64),
        };
        if n_p > 1 && p_ant_w * (n_p as f64) < p_max_w * (1.0 - 1e-9) {
            warnings.push(format!(
                "per-antenna caps limit total power to {} W, below p_max_w = {} W",
                p_ant_w * n_p as f64,
                p_max_w
            ));
        }

        let rate_map = match &self.mcs {
            None | Some(McsSpec::Named(McsName::LteA)) => RateMap::Table(McsTable::lte_a()),
            Some(McsSpec::Named(McsName::Shannon)) => RateMap::Shannon,
            Some(McsSpec::Table {
                thresholds_db,
                efficiencies,
            }) => match McsTable::from_parts(thresholds_db.clone(), efficiencies.clone()) {
                Ok(t) => RateMap::Table(t),
                Err(e) => {
                    errors.push(format!("mcs table: {e}"));
                    RateMap::Table(McsTable::lte_a())
                }
            },
        };

        let noise_psd_w_hz = dbm_to_watts(self.noise_psd_dbm_hz.unwrap_or(DEFAULT_NOISE_PSD_DBM_HZ));

        let decimation = self.decimation.unwrap_or(DEFAULT_DECIMATION);
        let refine_divisor = self.refine_divisor.unwrap_or(DEFAULT_REFINE_DIVISOR);
        if decimation == 0 {
            errors.push("decimation must be at least 1".into());
        }
        if refine_divisor == 0 {
            errors.push("refine_divisor must be at least 1".into());
        }
        let refine_last_s = self.refine_last_s.unwrap_or(DEFAULT_REFINE_LAST_S);

        let runway_length_m = self.runway_length_m.unwrap_or(DEFAULT_RUNWAY_M);
        let bs_height_m = self.bs_height_m.unwrap_or(DEFAULT_BS_HEIGHT_M);
        let vertical_velocity_m_s = self.vertical_velocity_m_s.unwrap_or(DEFAULT_VY_MPS);
        let cruise_altitude_m = self.cruise_altitude_m.unwrap_or(DEFAULT_CRUISE_M);
        let trajectory = match DescentTrajectory::new(
            pitch_deg,
            vertical_velocity_m_s,
            runway_length_m,
            cruise_altitude_m,
        ) {
            Ok(t) => Some(t),
            Err(e) => {
                errors.push(format!("trajectory: {e}"));
                None
            }
        };

        let abs_position = NetworkLayout::standard_abs_position(runway_length_m, bs_height_m);
        let layout_spec = self.layout.clone().unwrap_or(LayoutSpec::Generate {
            seed: None,
            count: None,
            region: None,
            tbs_antenna: None,
        });
        let layout = match &layout_spec {
            LayoutSpec::Generate {
                seed,
                count,
                region,
                tbs_antenna,
            } => {
                let r = region.clone().unwrap_or(DEFAULT_REGION);
                let kind = tbs_antenna
                    .clone()
                    .unwrap_or_else(|| default_tbs_antenna(named.unwrap_or(BandName::Microwave)))
                    .build();
                match generate_tbs_layout(
                    seed.unwrap_or(1),
                    count.unwrap_or(DEFAULT_TBS_COUNT),
                    Region {
                        x_min: r.x_min,
                        x_max: r.x_max,
                        y_min: r.y_min,
                        y_max: r.y_max,
                    },
                    abs_position,
                    bs_height_m,
                    &kind,
                ) {
                    Ok(l) => Some(l),
                    Err(e) => {
                        errors.push(format!("layout: {e}"));
                        None
                    }
                }
            }
            LayoutSpec::File { file } => {
                let path = if file.is_absolute() {
                    file.clone()
                } else {
                    base_dir.join(file)
                };
                match load_layout_file(&path, abs_position, bs_height_m) {
                    Ok(l) => Some(l),
                    Err(e) => {
                        errors.push(format!("layout file {}: {e}", path.display()));
                        None
                    }
                }
            }
        };
        if let (Some(l), Some(t)) = (&layout, &trajectory) {
            if let Err(e) = l.validate_against(t) {
                errors.push(format!("layout: {e}"));
            }
        }

        let solver = self.solver.clone().unwrap_or_default();
        let mut sdp = SdpOptions {
            gap_rtol: solver.gap_rtol.unwrap_or(3e-3),
            max_iter: solver.max_iter.unwrap_or(12_000),
            ..SdpOptions::default()
        };
        if let Some(tol) = solver.tol {
            sdp.tol = tol;
        }

        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }

        let mut echo = self.clone();
        echo.band = Some(band_spec);
        echo.scenario = Some(scenario.index());
        echo.ts_s = Some(ts_s);
        echo.p_max_w = Some(p_max_w);
        echo.p_ant_w = Some(p_ant_w);
        echo.n_sub = Some(n_sub);
        echo.subchannel_hz = Some(subchannel_hz);
        echo.seed = Some(self.seed.unwrap_or(0));
        echo.decimation = Some(decimation);
        echo.plane_antenna = Some(plane_spec.clone());
        echo.abs_antenna = Some(abs_spec.clone());
        echo.layout = Some(layout_spec);

        let plan = Plan {
            band_label,
            fc_mhz,
            bandwidth_hz,
            absorption_db_per_km,
            n_sub,
            subchannel_hz,
            scenario,
            ts_s,
            slot_duration_s,
            delta_w,
            p_max_w,
            p_ant_w,
            rate_map,
            noise_psd_w_hz,
            seed: self.seed.unwrap_or(0),
            decimation,
            refine_last_s,
            refine_divisor,
            trajectory: trajectory.expect("errors were empty"),
            layout: layout.expect("errors were empty"),
            plane_antenna: plane_spec.build(),
            abs_antenna: abs_spec.build(),
            randomization_trials: solver.randomization_trials.unwrap_or(100),
            // Wavefront curvature over a 32x32 aperture reaches ~1.6e-3 at the
            // closest approach to the base station, so the guard needs headroom.
            far_field_tol: solver.far_field_tol.unwrap_or(1e-2),
            additive_cap_form: solver.additive_cap_form.unwrap_or(false),
            second_pass: self.second_pass.unwrap_or(false),
            exhaustive_m: self.exhaustive_m.unwrap_or(false),
            fixed_m: self.fixed_m,
            sdp,
            echo,
        };
        Ok((plan, warnings))
    }
}

fn load_layout_file(
    path: &Path,
    abs_position: Vector3<f64>,
    bs_height_m: f64,
) -> Result<NetworkLayout, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let parsed: LayoutFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        format!("at `{path}`: {}", e.into_inner())
    })?;
    let tbs = parsed
        .sites
        .iter()
        .map(|site| {
            let kind = site.antenna.build();
            let position = Vector3::new(site.position[0], site.position[1], site.position[2]);
            let sectors = match kind {
                TbsAntennaKind::TriSector {
                    boresight_gain_dbi,
                    tilt_deg,
                } => {
                    let primary = if position.y > 0.0 { -90.0 } else { 90.0 };
                    vec![
                        AntennaModel::directional(primary, tilt_deg, boresight_gain_dbi),
                        AntennaModel::directional(primary + 120.0, tilt_deg, boresight_gain_dbi),
                        AntennaModel::directional(primary - 120.0, tilt_deg, boresight_gain_dbi),
                    ]
                }
                TbsAntennaKind::Upa { rows, cols, element } => {
                    vec![AntennaModel::mast_upa(rows, cols, element)]
                }
                TbsAntennaKind::Omni { gain_dbi } => vec![AntennaModel::Omni { gain_dbi }],
            };
            TbsSite { position, sectors }
        })
        .collect();
    Ok(NetworkLayout {
        abs_position,
        bs_height_m,
        tbs,
    })
}

impl Plan {
    /// Unconstrained volume ceiling in bits for a window of `ts` seconds:
    /// the whole band at the top efficiency for the whole window.
    pub fn capacity_bits(&self, ts_s: f64) -> Option<f64> {
        self.rate_map.e_max().map(|e| self.bandwidth_hz * e * ts_s)
    }
}
