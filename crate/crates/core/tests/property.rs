//! Randomized structural checks: monotone link adaptation, surrogate
//! dominance, factorization roundtrips, generator purity, and angle
//! geometry against an independent construction.

use a2g_core::channel::rank_one_factors;
use a2g_core::geometry::{generate_tbs_layout, relative_angles, Region, TbsAntennaKind};
use a2g_core::linkrate::{default_surrogates, McsTable};
use nalgebra::{Complex, DMatrix, DVector, Vector3};
use proptest::prelude::*;

type C64 = Complex<f64>;

proptest! {
    /// More signal power never maps to a lower spectral efficiency.
    #[test]
    fn table_efficiency_is_monotone(a in -80.0f64..80.0, b in -80.0f64..80.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let t = McsTable::lte_a();
        let e_lo = t.efficiency(10f64.powf(lo / 10.0));
        let e_hi = t.efficiency(10f64.powf(hi / 10.0));
        prop_assert!(e_lo <= e_hi);
        prop_assert!(e_hi <= t.e_max());
        prop_assert!(e_lo >= 0.0);
    }

    /// Every surrogate marked as an upper bound stays above the table it
    /// approximates, at any power level.
    #[test]
    fn upper_surrogates_dominate_the_table(snr_db in -60.0f64..60.0) {
        let t = McsTable::lte_a();
        let snr = 10f64.powf(snr_db / 10.0);
        let table_eff = t.efficiency(snr);
        for s in default_surrogates(t.e_max()).iter().filter(|s| s.is_upper_bound) {
            prop_assert!(
                s.efficiency(snr) >= table_eff - 1e-12,
                "surrogate below table at snr {} dB: {} < {}",
                snr_db, s.efficiency(snr), table_eff
            );
        }
    }

    /// An exact outer product factors back into itself: unit-power factor
    /// conventions, the claimed gain, and the reconstruction all agree.
    #[test]
    fn rank_one_factor_roundtrip(
        n_a in 2usize..8,
        n_p in 1usize..6,
        seed_a in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8),
        seed_p in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6),
        scale in 1e-8f64..1e2,
    ) {
        let a = DVector::from_iterator(n_a, seed_a.into_iter().take(n_a).map(|(re, im)| C64::new(re, im)));
        let b = DVector::from_iterator(n_p, seed_p.into_iter().take(n_p).map(|(re, im)| C64::new(re, im)));
        prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
        let h0: DMatrix<C64> = &a * b.adjoint() * C64::new(scale, 0.0);
        let f = rank_one_factors(&h0, 1e-6).unwrap();
        prop_assert!((f.u_a.norm_squared() - n_a as f64).abs() < 1e-9 * n_a as f64);
        prop_assert!((f.u_p.norm_squared() - n_p as f64).abs() < 1e-9 * n_p as f64);
        let rebuilt = &f.u_a * f.u_p.adjoint() * C64::new(f.link_gain.sqrt(), 0.0);
        let err = (&rebuilt - &h0).norm() / h0.norm();
        prop_assert!(err < 1e-9, "reconstruction error {}", err);
        let expected_gain = h0.norm_squared() / (n_a * n_p) as f64;
        prop_assert!((f.link_gain - expected_gain).abs() <= 1e-9 * expected_gain);
    }

    /// Same seed, same layout; every site lands inside the region at
    /// base-station height.
    #[test]
    fn layout_generation_is_pure_and_in_region(
        seed in any::<u64>(),
        count in 1usize..40,
        x0 in -10_000.0f64..10_000.0,
        w in 100.0f64..80_000.0,
        y0 in -5_000.0f64..0.0,
        h in 100.0f64..10_000.0,
    ) {
        let region = Region { x_min: x0, x_max: x0 + w, y_min: y0, y_max: y0 + h };
        let abs = Vector3::new(-2_000.0, 0.0, 30.0);
        let kind = TbsAntennaKind::Omni { gain_dbi: 0.0 };
        let l1 = generate_tbs_layout(seed, count, region.clone(), abs, 30.0, &kind).unwrap();
        let l2 = generate_tbs_layout(seed, count, region.clone(), abs, 30.0, &kind).unwrap();
        prop_assert_eq!(l1.tbs.len(), count);
        for (a, b) in l1.tbs.iter().zip(l2.tbs.iter()) {
            prop_assert_eq!(a.position, b.position);
        }
        for site in &l1.tbs {
            let p = site.position;
            prop_assert!(p.x >= region.x_min && p.x < region.x_max);
            prop_assert!(p.y >= region.y_min && p.y < region.y_max);
            prop_assert_eq!(p.z, 30.0);
        }
    }

    /// Place a target at a known azimuth/elevation offset from a boresight
    /// and require the angle decomposition to read those numbers back.
    #[test]
    fn relative_angles_reads_back_construction(
        obs_x in -5_000.0f64..5_000.0,
        obs_y in -5_000.0f64..5_000.0,
        obs_z in 0.0f64..10_000.0,
        bore_az_deg in -180.0f64..180.0,
        az_deg in -179.0f64..179.0,
        el_deg in -89.0f64..89.0,
        dist in 1.0f64..50_000.0,
    ) {
        let obs = Vector3::new(obs_x, obs_y, obs_z);
        let bore_az = bore_az_deg.to_radians();
        let bore = Vector3::new(bore_az.cos(), bore_az.sin(), -0.3);
        let ray_az = (bore_az_deg + az_deg).to_radians();
        let el = el_deg.to_radians();
        let target = obs + Vector3::new(
            el.cos() * ray_az.cos(),
            el.cos() * ray_az.sin(),
            el.sin(),
        ) * dist;
        let (got_az, got_el) = relative_angles(&obs, &bore, &target).unwrap();
        let wrap = |d: f64| {
            let mut v = d % 360.0;
            if v > 180.0 { v -= 360.0; }
            if v <= -180.0 { v += 360.0; }
            v
        };
        prop_assert!(wrap(got_az - az_deg).abs() < 1e-6, "az {} vs {}", got_az, az_deg);
        prop_assert!((got_el - el_deg).abs() < 1e-6, "el {} vs {}", got_el, el_deg);
    }
}

/// Factorization rejects matrices that are clearly not rank one.
#[test]
fn rank_two_matrix_is_rejected() {
    let a1 = DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
    let a2 = DVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
    let b1 = DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
    let b2 = DVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
    let h: DMatrix<C64> = &a1 * b1.adjoint() + &a2 * b2.adjoint();
    assert!(rank_one_factors(&h, 1e-3).is_err());
}
