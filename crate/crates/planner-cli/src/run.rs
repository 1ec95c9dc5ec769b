//! The descent-time simulation loop: per-slot channel synthesis, the M/power/
//! beamforming solve, and volume accounting over the transmission window.

use a2g_core::channel::{build_snapshot, SnapshotDump};
use a2g_core::geometry::{slot_geometry, GeometryError, SlotGrid, SlotInterval};
use a2g_core::linkrate::default_surrogates;
use a2g_core::optimizer::{
    interference_check, sweep_m, NeighborCache, SlotProblem, SweepContext,
};
use a2g_core::units::{linear_to_db, watts_to_dbm, BITS_PER_GB};
use serde::Serialize;
use thiserror::Error;

use crate::config::Plan;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("slot grid: {0}")]
    Grid(#[from] GeometryError),
}

/// One evaluated slot, in the order solved (descending tau).
#[derive(Debug, Clone, Serialize)]
pub struct SlotRecord {
    /// Interval start: seconds until touchdown at the beginning of the slot.
    pub tau_s: f64,
    /// Air time this evaluation stands for, in seconds.
    pub weight_s: f64,
    pub m_star: u32,
    pub rate_bps: f64,
    pub upper_bound_bps: f64,
    pub snr_db: f64,
    pub tx_power_w: f64,
    /// Worst achieved per-subchannel interference over all TBSs, dBm;
    /// -inf when nothing reaches any TBS.
    pub max_interference_dbm: f64,
    pub rank1: bool,
    pub method: String,
    /// True when this slot fell back to zero rate after a solver error.
    pub degraded: bool,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub v_data_bits: f64,
    pub v_upper_bits: f64,
    /// Unconstrained ceiling B * T_s * e_max; absent in Shannon mode.
    pub v_cap_bits: Option<f64>,
    pub slots: usize,
    pub degraded_slots: usize,
    pub wall_ms: u128,
    pub records: Vec<SlotRecord>,
}

impl RunSummary {
    pub fn v_data_gb(&self) -> f64 {
        self.v_data_bits / BITS_PER_GB
    }

    /// Offloaded volume restricted to the window `[0, ts]` before touchdown:
    /// the transmission window is anchored at landing, so shorter windows are
    /// suffixes of the evaluated descent.
    pub fn volume_within(&self, ts_s: f64) -> (f64, f64) {
        let mut data = 0.0;
        let mut upper = 0.0;
        for r in &self.records {
            let start = r.tau_s.min(ts_s);
            let end = r.tau_s - r.weight_s;
            if start > end {
                let w = start - end;
                data += r.rate_bps * w;
                upper += r.upper_bound_bps * w;
            }
        }
        (data, upper)
    }
}

fn zero_record(interval: &SlotInterval, degraded: bool) -> SlotRecord {
    SlotRecord {
        tau_s: interval.tau_start_s,
        weight_s: interval.weight_s(),
        m_star: 0,
        rate_bps: 0.0,
        upper_bound_bps: 0.0,
        snr_db: f64::NEG_INFINITY,
        tx_power_w: 0.0,
        max_interference_dbm: f64::NEG_INFINITY,
        rank1: true,
        method: "ClosedForm".into(),
        degraded,
    }
}

enum SlotOutcome {
    Solved(SlotRecord),
    /// The solver failed; silence is always feasible, so the slot
    /// contributes zero rate instead of aborting the run.
    Degraded(SlotRecord, String),
}

fn solve_interval(
    plan: &Plan,
    interval: &SlotInterval,
    cache: &mut NeighborCache,
    surrogates: &[a2g_core::linkrate::Surrogate],
) -> SlotOutcome {
    let geo = slot_geometry(*interval, &plan.trajectory, &plan.layout);
    let snap = match build_snapshot(
        &geo,
        &plan.layout,
        &plan.plane_antenna,
        &plan.abs_antenna,
        plan.fc_mhz,
        plan.absorption_db_per_km,
        plan.far_field_tol,
    ) {
        Ok(s) => s,
        Err(e) => {
            return SlotOutcome::Degraded(
                zero_record(interval, true),
                format!("tau {:.3}: {e}", interval.tau_start_s),
            );
        }
    };
    let problem = SlotProblem {
        snapshot: &snap,
        scenario: plan.scenario,
        n_sub: plan.n_sub,
        subchannel_hz: plan.subchannel_hz,
        noise_psd_w_hz: plan.noise_psd_w_hz,
        p_max_w: plan.p_max_w,
        p_ant_w: plan.p_ant_w,
        delta_w: plan.delta_w,
        rate_map: &plan.rate_map,
        surrogates,
    };
    let ctx = SweepContext {
        run_seed: plan.seed,
        end_slot_index: interval.end_slot_index(plan.slot_duration_s),
        randomization_trials: plan.randomization_trials,
        exhaustive_m: plan.exhaustive_m,
        fixed_m: plan.fixed_m,
        sdp: plan.sdp.clone(),
        additive_cap_form: plan.additive_cap_form,
    };
    match sweep_m(&problem, cache, &ctx) {
        Ok(sol) => {
            let report = interference_check(&sol.w, &snap, sol.m_star, plan.delta_w);
            let snr_db = if sol.snr_linear > 0.0 {
                linear_to_db(sol.snr_linear)
            } else {
                f64::NEG_INFINITY
            };
            let interference_dbm = if report.max_w > 0.0 {
                watts_to_dbm(report.max_w)
            } else {
                f64::NEG_INFINITY
            };
            SlotOutcome::Solved(SlotRecord {
                tau_s: interval.tau_start_s,
                weight_s: interval.weight_s(),
                m_star: sol.m_star,
                rate_bps: sol.rate_bps,
                upper_bound_bps: sol.upper_bound_bps,
                snr_db,
                tx_power_w: sol.w.norm_squared(),
                max_interference_dbm: interference_dbm,
                rank1: sol.rank1,
                method: sol.method.to_string(),
                degraded: false,
            })
        }
        Err(e) => SlotOutcome::Degraded(
            zero_record(interval, true),
            format!("tau {:.3}: {e}", interval.tau_start_s),
        ),
    }
}

/// Runs the whole window from tau = T_s down to touchdown and accounts the
/// offloaded volume. Solver failures on single slots degrade to zero rate
/// and are reported in the summary, never fatal.
pub fn run_plan(plan: &Plan, log: &mut dyn FnMut(&str)) -> Result<RunSummary, RunError> {
    let start = std::time::Instant::now();
    let e_max_for_surrogates = match plan.rate_map.e_max() {
        Some(e) => e,
        // Shannon mode never reads the surrogates; any ceiling works here.
        None => 10.0,
    };
    let surrogates = default_surrogates(e_max_for_surrogates);
    let grid = SlotGrid::new(
        plan.slot_duration_s,
        plan.ts_s,
        plan.decimation,
        plan.refine_last_s,
        plan.refine_divisor,
    )?;
    let intervals = grid.intervals();

    let mut cache = NeighborCache::new();
    let mut records: Vec<SlotRecord> = Vec::with_capacity(intervals.len());
    let mut degraded = 0usize;
    for interval in &intervals {
        match solve_interval(plan, interval, &mut cache, &surrogates) {
            SlotOutcome::Solved(r) => records.push(r),
            SlotOutcome::Degraded(r, msg) => {
                log(&msg);
                degraded += 1;
                records.push(r);
            }
        }
    }

    // A second sweep from touchdown upward lets good late-slot beamvectors
    // seed earlier slots; each slot keeps its better of the two passes.
    if plan.second_pass {
        let mut back_cache = NeighborCache::new();
        for (idx, interval) in intervals.iter().enumerate().rev() {
            if let SlotOutcome::Solved(r) =
                solve_interval(plan, interval, &mut back_cache, &surrogates)
            {
                if r.rate_bps > records[idx].rate_bps {
                    records[idx].rate_bps = r.rate_bps;
                    records[idx].m_star = r.m_star;
                    records[idx].snr_db = r.snr_db;
                    records[idx].tx_power_w = r.tx_power_w;
                    records[idx].max_interference_dbm = r.max_interference_dbm;
                    records[idx].rank1 = r.rank1;
                    records[idx].method = r.method;
                }
                // Bounds from either pass are valid; keep the tighter one.
                if r.upper_bound_bps > 0.0 && r.upper_bound_bps < records[idx].upper_bound_bps {
                    records[idx].upper_bound_bps = r.upper_bound_bps;
                }
            }
        }
    }

    let mut v_data_bits = 0.0;
    let mut v_upper_bits = 0.0;
    for r in &records {
        v_data_bits += r.rate_bps * r.weight_s;
        v_upper_bits += r.upper_bound_bps * r.weight_s;
    }

    Ok(RunSummary {
        v_data_bits,
        v_upper_bits,
        v_cap_bits: plan.capacity_bits(plan.ts_s),
        slots: records.len(),
        degraded_slots: degraded,
        wall_ms: start.elapsed().as_millis(),
        records,
    })
}

/// Serializable channel diagnostics for every evaluated slot.
pub fn dump_channels(plan: &Plan) -> Result<Vec<SnapshotDump>, RunError> {
    let grid = SlotGrid::new(
        plan.slot_duration_s,
        plan.ts_s,
        plan.decimation,
        plan.refine_last_s,
        plan.refine_divisor,
    )?;
    let mut out = Vec::new();
    for interval in grid.intervals() {
        let geo = slot_geometry(interval, &plan.trajectory, &plan.layout);
        if let Ok(snap) = build_snapshot(
            &geo,
            &plan.layout,
            &plan.plane_antenna,
            &plan.abs_antenna,
            plan.fc_mhz,
            plan.absorption_db_per_km,
            plan.far_field_tol,
        ) {
            out.push(SnapshotDump::new(&snap, false));
        }
    }
    Ok(out)
}
