//! End-to-end checks of the per-slot pipeline on synthesized descent
//! geometry: every returned beamvector must be feasible, every rate must sit
//! under its certified bound, and the search must be reproducible.

use a2g_core::antennas::{AntennaModel, UpaElement};
use a2g_core::channel::{build_snapshot, ChannelSnapshot, C64};
use a2g_core::geometry::{
    generate_tbs_layout, slot_geometry, DescentTrajectory, NetworkLayout, Region, SlotInterval,
    TbsAntennaKind,
};
use a2g_core::linkrate::{default_surrogates, McsTable, RateMap};
use a2g_core::optimizer::{
    a2g_snr, interference_check, receive_bf, solve_scenario1_slot, sweep_m, upper_bound_slot,
    NeighborCache, Scenario, SlotProblem, SweepContext,
};
use a2g_core::units::dbm_to_watts;
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const FC_MHZ: f64 = 2_000.0;
const ABSORPTION_DB_KM: f64 = 0.01;
const SUBCHANNEL_HZ: f64 = 180e3;
const NOISE_PSD: f64 = 3.9810717055349565e-21;

fn descent() -> DescentTrajectory {
    DescentTrajectory::new(3.0, -12.7, 4_000.0, 12_000.0).unwrap()
}

fn microwave_layout(seed: u64, count: usize) -> NetworkLayout {
    let abs_position = NetworkLayout::standard_abs_position(4_000.0, 30.0);
    generate_tbs_layout(
        seed,
        count,
        Region { x_min: 4_000.0, x_max: 70_000.0, y_min: -3_000.0, y_max: 3_000.0 },
        abs_position,
        30.0,
        &TbsAntennaKind::TriSector { boresight_gain_dbi: 17.7, tilt_deg: 0.0 },
    )
    .unwrap()
}

fn plane_array() -> AntennaModel {
    AntennaModel::belly_upa(
        5,
        5,
        UpaElement::Directional {
            boresight_gain_dbi: 8.0,
            az_beamwidth_deg: 65.0,
            el_beamwidth_deg: 65.0,
        },
    )
}

fn abs_array() -> AntennaModel {
    AntennaModel::mast_upa(32, 32, UpaElement::Omni { gain_dbi: 0.0 })
}

fn snapshot_at(tau_s: f64, layout: &NetworkLayout) -> ChannelSnapshot {
    let interval = SlotInterval { tau_start_s: tau_s, tau_end_s: tau_s - 0.001 };
    let geo = slot_geometry(interval, &descent(), layout);
    build_snapshot(&geo, layout, &plane_array(), &abs_array(), FC_MHZ, ABSORPTION_DB_KM, 1e-3)
        .unwrap()
}

fn assert_feasible(w: &DVector<C64>, snap: &ChannelSnapshot, m: u32, p_max: f64, p_ant: f64, delta: f64) {
    let tol = 1.0 + 1e-9;
    assert!(w.norm_squared() <= p_max * tol);
    for c in w.iter() {
        assert!(c.norm_sqr() <= p_ant * tol);
    }
    if delta.is_finite() {
        for h in &snap.h_tbs {
            assert!(h.dotc(w).norm_sqr() <= m as f64 * delta * tol);
        }
    }
}

#[test]
fn descent_slots_stay_feasible_and_bounded() {
    let layout = microwave_layout(17, 8);
    let map = RateMap::Table(McsTable::lte_a());
    let surrogates = default_surrogates(6.88);
    let delta = dbm_to_watts(-100.0);
    let mut cache = NeighborCache::new();

    for &tau in &[300.0, 120.0, 30.0, 5.0] {
        let snap = snapshot_at(tau, &layout);
        let p = SlotProblem {
            snapshot: &snap,
            scenario: Scenario::ArrayToArray,
            n_sub: 112,
            subchannel_hz: SUBCHANNEL_HZ,
            noise_psd_w_hz: NOISE_PSD,
            p_max_w: 1.0,
            p_ant_w: 0.2,
            delta_w: delta,
            rate_map: &map,
            surrogates: &surrogates,
        };
        let ctx = SweepContext {
            run_seed: 3,
            end_slot_index: (tau / 1e-3).round() as u64,
            ..Default::default()
        };
        let sol = sweep_m(&p, &mut cache, &ctx).unwrap();
        assert!(sol.m_star >= 1 && sol.m_star <= 112);
        assert!(sol.rate_bps <= sol.upper_bound_bps * (1.0 + 1e-9), "sandwich violated at tau {tau}");
        assert_feasible(&sol.w, &snap, sol.m_star, 1.0, 0.2, delta);

        // The reported SNR is exactly the receive-combined SNR of the
        // returned pair.
        let snr = a2g_snr(&sol.w, &sol.v_tilde, &snap.h0, sol.m_star, SUBCHANNEL_HZ, NOISE_PSD);
        let rel = (snr - sol.snr_linear).abs() / sol.snr_linear.max(1e-30);
        assert!(rel < 1e-9, "snr mismatch at tau {tau}: {snr} vs {}", sol.snr_linear);

        // The interference report and the margin agree with the cap.
        let report = interference_check(&sol.w, &snap, sol.m_star, delta);
        assert!(report.max_w <= delta * (1.0 + 1e-9));
        assert!(sol.interference_margin_db >= -1e-9);
    }
}

#[test]
fn certified_bound_dominates_random_feasible_beamvectors() {
    let layout = microwave_layout(99, 6);
    let snap = snapshot_at(40.0, &layout);
    let map = RateMap::Table(McsTable::lte_a());
    let surrogates = default_surrogates(6.88);
    let delta = dbm_to_watts(-100.0);
    let p = SlotProblem {
        snapshot: &snap,
        scenario: Scenario::ArrayToArray,
        n_sub: 112,
        subchannel_hz: SUBCHANNEL_HZ,
        noise_psd_w_hz: NOISE_PSD,
        p_max_w: 1.0,
        p_ant_w: 0.2,
        delta_w: delta,
        rate_map: &map,
        surrogates: &surrogates,
    };
    let ctx = SweepContext::default();
    let mut rng = ChaCha20Rng::from_seed([5u8; 32]);

    for m in [1u32, 7, 56, 112] {
        let mut cache = NeighborCache::new();
        let (ub_rate, _) = upper_bound_slot(&p, m, &mut cache, &ctx).unwrap();
        let noise = m as f64 * SUBCHANNEL_HZ * NOISE_PSD;
        for _ in 0..250 {
            // Gaussian direction pushed to the feasibility boundary.
            let mut w = DVector::from_fn(25, |_, _| {
                C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let mut z = p.p_max_w / w.norm_squared();
            let peak = w.iter().map(|c| c.norm_sqr()).fold(0.0f64, f64::max);
            z = z.min(p.p_ant_w / peak);
            for h in &snap.h_tbs {
                let hit = h.dotc(&w).norm_sqr();
                if hit > 0.0 {
                    z = z.min(m as f64 * delta / hit);
                }
            }
            w *= C64::new(z.sqrt(), 0.0);
            let snr = snap.rx_combined.dotc(&w).norm_sqr() / noise;
            let rate = m as f64 * SUBCHANNEL_HZ * map.efficiency(snr);
            assert!(
                rate <= ub_rate * (1.0 + 1e-9),
                "feasible sample beats the certified bound at M={m}: {rate} > {ub_rate}"
            );
        }
    }
}

#[test]
fn staged_search_matches_exhaustive_on_a_real_slot() {
    let layout = microwave_layout(41, 6);
    let snap = snapshot_at(80.0, &layout);
    let map = RateMap::Table(McsTable::lte_a());
    let surrogates = default_surrogates(6.88);
    for delta in [dbm_to_watts(-100.0), dbm_to_watts(-120.0), f64::INFINITY] {
        let p = SlotProblem {
            snapshot: &snap,
            scenario: Scenario::ArrayToArray,
            n_sub: 16,
            subchannel_hz: SUBCHANNEL_HZ,
            noise_psd_w_hz: NOISE_PSD,
            p_max_w: 1.0,
            p_ant_w: 0.2,
            delta_w: delta,
            rate_map: &map,
            surrogates: &surrogates,
        };
        let staged = sweep_m(&p, &mut NeighborCache::new(), &SweepContext::default()).unwrap();
        let full = sweep_m(
            &p,
            &mut NeighborCache::new(),
            &SweepContext { exhaustive_m: true, ..Default::default() },
        )
        .unwrap();
        assert!(
            staged.rate_bps >= full.rate_bps * (1.0 - 1e-9),
            "staged {} < exhaustive {} at delta {delta:e}",
            staged.rate_bps,
            full.rate_bps
        );
    }
}

#[test]
fn single_antenna_scenarios_use_the_closed_form() {
    let layout = microwave_layout(23, 6);
    let interval = SlotInterval { tau_start_s: 90.0, tau_end_s: 89.999 };
    let geo = slot_geometry(interval, &descent(), &layout);
    let plane = AntennaModel::directional(180.0, 0.0, 8.0);
    let snap = build_snapshot(&geo, &layout, &plane, &abs_array(), FC_MHZ, ABSORPTION_DB_KM, 1e-3)
        .unwrap();
    assert_eq!(snap.n_tx(), 1);
    let map = RateMap::Table(McsTable::lte_a());
    let surrogates = default_surrogates(6.88);
    let delta = dbm_to_watts(-100.0);
    let p = SlotProblem {
        snapshot: &snap,
        scenario: Scenario::SingleToArray,
        n_sub: 112,
        subchannel_hz: SUBCHANNEL_HZ,
        noise_psd_w_hz: NOISE_PSD,
        p_max_w: 1.0,
        p_ant_w: 1.0,
        delta_w: delta,
        rate_map: &map,
        surrogates: &surrogates,
    };
    let direct = solve_scenario1_slot(&p).unwrap();
    let swept = sweep_m(&p, &mut NeighborCache::new(), &SweepContext::default()).unwrap();
    assert_eq!(swept.m_star, direct.m_star);
    assert_eq!(swept.rate_bps, direct.rate_bps);
    assert_eq!(swept.method, direct.method);
    assert_eq!(direct.upper_bound_bps, direct.rate_bps);
    assert_feasible(&direct.w, &snap, direct.m_star, 1.0, 1.0, delta);
}

#[test]
fn transmit_array_to_single_receiver_runs_the_relaxation() {
    let layout = microwave_layout(8, 5);
    let interval = SlotInterval { tau_start_s: 60.0, tau_end_s: 59.999 };
    let geo = slot_geometry(interval, &descent(), &layout);
    let abs_antenna = AntennaModel::directional(0.0, 3.0, 17.7);
    let snap = build_snapshot(
        &geo,
        &layout,
        &plane_array(),
        &abs_antenna,
        FC_MHZ,
        ABSORPTION_DB_KM,
        1e-3,
    )
    .unwrap();
    assert_eq!(snap.n_tx(), 25);
    assert_eq!(snap.n_rx(), 1);
    let map = RateMap::Table(McsTable::lte_a());
    let surrogates = default_surrogates(6.88);
    let delta = dbm_to_watts(-110.0);
    let p = SlotProblem {
        snapshot: &snap,
        scenario: Scenario::ArrayToSingle,
        n_sub: 112,
        subchannel_hz: SUBCHANNEL_HZ,
        noise_psd_w_hz: NOISE_PSD,
        p_max_w: 1.0,
        p_ant_w: 0.2,
        delta_w: delta,
        rate_map: &map,
        surrogates: &surrogates,
    };
    let sol = sweep_m(&p, &mut NeighborCache::new(), &SweepContext::default()).unwrap();
    assert!(sol.rate_bps > 0.0);
    assert!(sol.rate_bps <= sol.upper_bound_bps * (1.0 + 1e-9));
    assert_feasible(&sol.w, &snap, sol.m_star, 1.0, 0.2, delta);
    // One receive element: the combiner is the trivial scalar.
    assert_eq!(sol.v_tilde.len(), 1);
    assert!((sol.v_tilde[0].norm() - 1.0).abs() < 1e-12);
}

#[test]
fn shannon_runs_end_to_end() {
    let layout = microwave_layout(3, 4);
    let snap = snapshot_at(100.0, &layout);
    let map = RateMap::Shannon;
    let delta = dbm_to_watts(-100.0);
    let p = SlotProblem {
        snapshot: &snap,
        scenario: Scenario::ArrayToArray,
        n_sub: 112,
        subchannel_hz: SUBCHANNEL_HZ,
        noise_psd_w_hz: NOISE_PSD,
        p_max_w: 1.0,
        p_ant_w: 0.2,
        delta_w: delta,
        rate_map: &map,
        surrogates: &[],
    };
    let sol = sweep_m(&p, &mut NeighborCache::new(), &SweepContext::default()).unwrap();
    assert!(sol.rate_bps > 0.0);
    assert!(sol.rate_bps <= sol.upper_bound_bps * (1.0 + 1e-9));
    assert_feasible(&sol.w, &snap, sol.m_star, 1.0, 0.2, delta);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let layout = microwave_layout(12, 6);
    let snap = snapshot_at(50.0, &layout);
    let map = RateMap::Table(McsTable::lte_a());
    let surrogates = default_surrogates(6.88);
    let p = SlotProblem {
        snapshot: &snap,
        scenario: Scenario::ArrayToArray,
        n_sub: 112,
        subchannel_hz: SUBCHANNEL_HZ,
        noise_psd_w_hz: NOISE_PSD,
        p_max_w: 1.0,
        p_ant_w: 0.2,
        delta_w: dbm_to_watts(-120.0),
        rate_map: &map,
        surrogates: &surrogates,
    };
    let ctx = SweepContext { run_seed: 77, end_slot_index: 50_000, ..Default::default() };
    let a = sweep_m(&p, &mut NeighborCache::new(), &ctx).unwrap();
    let b = sweep_m(&p, &mut NeighborCache::new(), &ctx).unwrap();
    assert_eq!(a.m_star, b.m_star);
    assert_eq!(a.rate_bps.to_bits(), b.rate_bps.to_bits());
    assert_eq!(a.upper_bound_bps.to_bits(), b.upper_bound_bps.to_bits());
    assert_eq!(a.w, b.w);
    assert_eq!(a.method, b.method);
}

#[test]
fn matched_receive_combining_is_reported() {
    let layout = microwave_layout(31, 3);
    let snap = snapshot_at(150.0, &layout);
    let v = receive_bf(&snap.u_a);
    assert!((v.norm() - 1.0).abs() < 1e-12);
    // Matched combining attains the full receive array gain on the
    // rank-one link.
    let w = DVector::from_element(25, C64::new(0.1, 0.0));
    let matched = a2g_snr(&w, &v, &snap.h0, 1, SUBCHANNEL_HZ, NOISE_PSD);
    let mut rng = ChaCha20Rng::from_seed([9u8; 32]);
    for _ in 0..10 {
        let probe = DVector::from_fn(1024, |_, _| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        assert!(a2g_snr(&w, &probe, &snap.h0, 1, SUBCHANNEL_HZ, NOISE_PSD) <= matched * (1.0 + 1e-9));
    }
}
