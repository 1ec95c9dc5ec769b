//! Link adaptation: the discrete MCS step function mapping per-subchannel SNR
//! to spectral efficiency, smooth concave surrogates used by the relaxation
//! pipeline, and rate arithmetic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::db_to_linear;

#[derive(Debug, Error)]
pub enum RateError {
    #[error("MCS table must have matching, non-empty threshold and efficiency lists")]
    EmptyTable,
    #[error("MCS thresholds must be strictly increasing (index {0})")]
    ThresholdOrder(usize),
    #[error("MCS efficiencies must be strictly increasing (index {0})")]
    EfficiencyOrder(usize),
    #[error("surrogate exponent must satisfy 0 < c < 1 (got {0})")]
    BadExponent(f64),
    #[error("surrogate scale must be positive (got {0})")]
    BadScale(f64),
    #[error("surrogate ceiling e_max={e_max} must exceed offset d={d}")]
    CeilingBelowOffset { e_max: f64, d: f64 },
}

/// LTE-A modulation-and-coding set: per-subchannel SNR thresholds in dB.
pub const LTE_A_THRESHOLDS_DB: [f64; 15] = [
    -9.8, -6.1, -2.2, 1.6, 3.4, 5.4, 7.2, 9.1, 11.0, 12.9, 14.8, 16.8, 18.4, 20.2, 22.5,
];

/// Spectral efficiencies (bps/Hz) paired with [`LTE_A_THRESHOLDS_DB`].
pub const LTE_A_EFFICIENCIES: [f64; 15] = [
    0.11, 0.33, 0.77, 1.33, 1.77, 2.22, 2.50, 3.05, 3.61, 4.16, 4.72, 5.16, 5.72, 6.27, 6.88,
];

/// A step function from linear SNR to spectral efficiency, 0 below the lowest
/// threshold, right-continuous at every threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McsTable {
    thresholds_db: Vec<f64>,
    thresholds: Vec<f64>,
    efficiencies: Vec<f64>,
}

impl McsTable {
    pub fn from_parts(thresholds_db: Vec<f64>, efficiencies: Vec<f64>) -> Result<Self, RateError> {
        if thresholds_db.is_empty() || thresholds_db.len() != efficiencies.len() {
            return Err(RateError::EmptyTable);
        }
        for i in 1..thresholds_db.len() {
            if thresholds_db[i] <= thresholds_db[i - 1] {
                return Err(RateError::ThresholdOrder(i));
            }
            if efficiencies[i] <= efficiencies[i - 1] {
                return Err(RateError::EfficiencyOrder(i));
            }
        }
        let thresholds = thresholds_db.iter().map(|&t| db_to_linear(t)).collect();
        Ok(Self { thresholds_db, thresholds, efficiencies })
    }

    /// The 15-level LTE-A set used as the built-in default.
    pub fn lte_a() -> Self {
        Self::from_parts(LTE_A_THRESHOLDS_DB.to_vec(), LTE_A_EFFICIENCIES.to_vec())
            .expect("built-in table is well formed")
    }

    /// Spectral efficiency at linear SNR `snr`.
    pub fn efficiency(&self, snr: f64) -> f64 {
        let idx = self.thresholds.partition_point(|&t| t <= snr);
        if idx == 0 { 0.0 } else { self.efficiencies[idx - 1] }
    }

    pub fn e_max(&self) -> f64 {
        *self.efficiencies.last().unwrap()
    }

    pub fn thresholds_linear(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn thresholds_db(&self) -> &[f64] {
        &self.thresholds_db
    }

    pub fn efficiencies(&self) -> &[f64] {
        &self.efficiencies
    }
}

/// Rate mapping selected per run: a discrete table or the Shannon formula.
#[derive(Debug, Clone)]
pub enum RateMap {
    Table(McsTable),
    Shannon,
}

impl RateMap {
    pub fn efficiency(&self, snr: f64) -> f64 {
        match self {
            RateMap::Table(t) => t.efficiency(snr),
            RateMap::Shannon => (1.0 + snr).log2(),
        }
    }

    /// Efficiency ceiling; unbounded in Shannon mode.
    pub fn e_max(&self) -> Option<f64> {
        match self {
            RateMap::Table(t) => Some(t.e_max()),
            RateMap::Shannon => None,
        }
    }
}

/// Concave approximation min{a·snr^c + d, e_max} of a step function.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Surrogate {
    pub a: f64,
    pub c: f64,
    pub d: f64,
    pub e_max: f64,
    pub is_upper_bound: bool,
}

impl Surrogate {
    pub fn new(a: f64, c: f64, d: f64, e_max: f64, is_upper_bound: bool) -> Result<Self, RateError> {
        if !(c > 0.0 && c < 1.0) {
            return Err(RateError::BadExponent(c));
        }
        if a <= 0.0 {
            return Err(RateError::BadScale(a));
        }
        if e_max <= d {
            return Err(RateError::CeilingBelowOffset { e_max, d });
        }
        Ok(Self { a, c, d, e_max, is_upper_bound })
    }

    pub fn efficiency(&self, snr: f64) -> f64 {
        (self.a * snr.powf(self.c) + self.d).min(self.e_max)
    }

    /// SNR at which the surrogate saturates: ((e_max - d)/a)^(1/c). Pushing
    /// SNR beyond this value cannot raise the surrogate efficiency.
    pub fn snr_cap(&self) -> f64 {
        ((self.e_max - self.d) / self.a).powf(1.0 / self.c)
    }

    /// Saturation SNR computed with the sign-flipped offset (e_max + d)/a,
    /// kept for comparison runs; `snr_cap` is the consistent form.
    pub fn snr_cap_offset_added(&self) -> f64 {
        let num = self.e_max + self.d;
        if num <= 0.0 {
            return 0.0;
        }
        (num / self.a).powf(1.0 / self.c)
    }
}

/// The surrogate family used for upper bounding (first entry) and feasible
/// search (all entries), for a table with ceiling `e_max`.
pub fn default_surrogates(e_max: f64) -> Vec<Surrogate> {
    vec![
        Surrogate::new(1.9, 0.25, 0.3, e_max, true).unwrap(),
        Surrogate::new(4.0476, 0.185, -2.4405, e_max, false).unwrap(),
        Surrogate::new(0.93, 0.4, 0.3, e_max, false).unwrap(),
        Surrogate::new(1.0, 0.37, 0.3, e_max, false).unwrap(),
    ]
}

/// Grid check that `s` dominates the step function everywhere that matters:
/// at every table threshold (where the step jumps) and on a uniform grid over
/// [0, 10 x last threshold].
pub fn validate_upper_bound(s: &Surrogate, table: &McsTable, grid_points: usize) -> bool {
    let tol = 1e-12;
    for &t in table.thresholds_linear() {
        if s.efficiency(t) + tol < table.efficiency(t) {
            return false;
        }
    }
    let hi = 10.0 * table.thresholds_linear().last().unwrap();
    for k in 0..grid_points {
        let snr = hi * k as f64 / (grid_points - 1).max(1) as f64;
        if s.efficiency(snr) + tol < table.efficiency(snr) {
            return false;
        }
    }
    true
}

/// Aggregate rate over `m` subchannels of width `b_hz` at a given efficiency.
pub fn slot_rate(m: u32, b_hz: f64, efficiency: f64) -> f64 {
    m as f64 * b_hz * efficiency
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lte_a_lookup_matches_table() {
        let t = McsTable::lte_a();
        assert_relative_eq!(t.efficiency(db_to_linear(22.5)), 6.88);
        assert_relative_eq!(t.efficiency(db_to_linear(10.0)), 3.05);
        assert_relative_eq!(t.efficiency(db_to_linear(-12.0)), 0.0);
        assert_relative_eq!(t.e_max(), 6.88);
    }

    #[test]
    fn lookup_is_right_continuous_at_thresholds() {
        let t = McsTable::lte_a();
        for (i, &g) in t.thresholds_linear().to_vec().iter().enumerate() {
            assert_eq!(t.efficiency(g), t.efficiencies()[i]);
            assert!(t.efficiency(g * (1.0 - 1e-12)) < t.efficiencies()[i]);
        }
    }

    #[test]
    fn surrogate_examples() {
        let s = Surrogate::new(1.9, 0.25, 0.3, 6.88, true).unwrap();
        assert_relative_eq!(s.efficiency(1.0), 2.2, max_relative = 1e-12);
        assert_relative_eq!(s.efficiency(0.0), 0.3, max_relative = 1e-12);
        assert_relative_eq!(s.efficiency(1e6), 6.88, max_relative = 1e-12);
        assert_relative_eq!(s.snr_cap(), (6.58f64 / 1.9).powi(4), max_relative = 1e-12);
        assert!((s.snr_cap() - 143.7).abs() < 0.2);
    }

    #[test]
    fn snr_cap_of_unit_ratio_is_one() {
        let s = Surrogate::new(6.58, 0.4, 0.3, 6.88, false).unwrap();
        assert_relative_eq!(s.snr_cap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn snr_cap_matches_bisection() {
        for s in default_surrogates(6.88) {
            let mut lo = 0.0f64;
            let mut hi = 1e9f64;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if s.a * mid.powf(s.c) + s.d < s.e_max {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert_relative_eq!(s.snr_cap(), lo, max_relative = 1e-9);
        }
    }

    #[test]
    fn upper_bound_flags_are_verified() {
        let table = McsTable::lte_a();
        for s in default_surrogates(table.e_max()) {
            if s.is_upper_bound {
                assert!(validate_upper_bound(&s, &table, 20_000));
            }
        }
        let low = Surrogate::new(0.5, 0.25, 0.0, 6.88, false).unwrap();
        assert!(!validate_upper_bound(&low, &table, 1000));
        let flat = Surrogate::new(1e-9, 0.5, 6.88, 7.0, false).unwrap();
        assert!(validate_upper_bound(&flat, &table, 1000));
    }

    #[test]
    fn shannon_mode_is_uncapped() {
        let r = RateMap::Shannon;
        assert!(r.e_max().is_none());
        assert_relative_eq!(r.efficiency(1.0), 1.0);
        assert_relative_eq!(r.efficiency(3.0), 2.0);
    }

    #[test]
    fn slot_rate_products() {
        assert_relative_eq!(slot_rate(111, 180e3, 6.88), 137_462_400.0);
        assert_relative_eq!(slot_rate(7, 180e3, 0.0), 0.0);
        assert_relative_eq!(slot_rate(5556, 180e3, 6.88), 6.8805504e9, max_relative = 1e-12);
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(McsTable::from_parts(vec![], vec![]).is_err());
        assert!(McsTable::from_parts(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(McsTable::from_parts(vec![0.0, 1.0], vec![2.0, 1.0]).is_err());
        assert!(Surrogate::new(1.0, 1.5, 0.0, 6.88, false).is_err());
        assert!(Surrogate::new(-1.0, 0.5, 0.0, 6.88, false).is_err());
        assert!(Surrogate::new(1.0, 0.5, 7.0, 6.88, false).is_err());
    }
}
