use proptest::prelude::*;

use oedipus_core::baselines::{generate, target_groups, BaselineSpec};
use oedipus_core::crb::{self, GroupBlock};
use oedipus_core::design::{sbs_design, DesignObjective};
use oedipus_core::encoding::{build_cartesian_candidates, ImageGrid};
use oedipus_core::pattern::SamplingPattern;
use oedipus_core::recon::nrmse;
use oedipus_core::sparsity::{largest_magnitudes, support_size};
use oedipus_core::verify;
use oedipus_core::wavelet::{TransformSpec, Wavelet2d, WaveletFamily};
use oedipus_core::C64;

fn complex_vec(n: usize) -> impl Strategy<Value = Vec<C64>> {
    proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| C64::new(a, b)), n)
}

fn family() -> impl Strategy<Value = WaveletFamily> {
    prop_oneof![Just(WaveletFamily::Daubechies4), Just(WaveletFamily::Haar)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wavelet_is_orthonormal(f in complex_vec(16 * 8), fam in family(), levels in 1usize..=3) {
        let w = Wavelet2d::new([16, 8], &TransformSpec::new(fam, levels)).unwrap();
        let c = w.forward(&f).unwrap();
        let e_img: f64 = f.iter().map(|z| z.norm_sqr()).sum();
        let e_coef: f64 = c.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((e_img - e_coef).abs() <= 1e-12 * e_img.max(1.0));
        let back = w.inverse(&c).unwrap();
        prop_assert!(back.iter().zip(&f).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn support_ignores_global_gain_and_phase(c in complex_vec(64), fraction in 0.01f64..=1.0, gain in 0.1f64..10.0, phase in 0.0f64..std::f64::consts::TAU) {
        let s = largest_magnitudes(&c, fraction).unwrap();
        prop_assert_eq!(s.len(), support_size(fraction, 64));
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        let rot = C64::from_polar(gain, phase);
        let scaled: Vec<C64> = c.iter().map(|z| z * rot).collect();
        // magnitudes change by one common factor, so the ranking is unchanged up to rounding
        let t = largest_magnitudes(&scaled, fraction).unwrap();
        let kept_min = s.iter().map(|&i| c[i].norm()).fold(f64::INFINITY, f64::min);
        let dropped_max = (0..64).filter(|i| !s.contains(i)).map(|i| c[i].norm()).fold(0.0, f64::max);
        if kept_min > dropped_max * (1.0 + 1e-9) {
            prop_assert_eq!(s, t);
        }
    }

    #[test]
    fn deleting_a_group_never_lowers_the_bound(seed in 0u64..1000, coils in 1usize..=3, s in 4usize..=12, pick in 0usize..64) {
        let inst = verify::random_instance(seed, [8, 8], &[0, 1], coils, s, &TransformSpec::haar(2)).unwrap();
        let state = crb::build_full_crb(&inst.model, &inst.support, &inst.wavelet, 0, 0).unwrap();
        let block = GroupBlock::new(&inst.model, &inst.support, &inst.wavelet, 0, 0, pick).unwrap();
        let short = crb::downdate_trace(&state, &block).unwrap();
        let next = crb::smw_downdate(&state, &block).unwrap();
        prop_assert!(short >= state.trace * (1.0 - 1e-12));
        prop_assert!((short - next.trace).abs() <= 1e-10 * next.trace);
    }

    #[test]
    fn greedy_log_is_monotone_and_hits_the_budget(seed in 0u64..1000, target in 6usize..=12) {
        let inst = verify::random_instance(seed, [4, 4], &[0, 1], 1, 5, &TransformSpec::haar(1)).unwrap();
        let report = sbs_design(&inst.model, std::slice::from_ref(&inst.support), &inst.wavelet, DesignObjective::AverageCase, target).unwrap();
        prop_assert_eq!(report.pattern.kept_groups.len(), target);
        prop_assert_eq!(report.removal_order.len(), 16 - target);
        prop_assert!(report.pattern.log.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)));
    }

    #[test]
    fn group_budget_rounds(l in 1usize..500, r in 1.0f64..8.0) {
        prop_assume!(r <= l as f64);
        let m = target_groups(l, r).unwrap();
        prop_assert!(m >= 1 && m <= l);
        prop_assert!((m as f64 - l as f64 / r).abs() <= 0.5 + 1e-9 || m == 1);
    }

    #[test]
    fn poisson_disc_meets_budget_and_keeps_center(seed in 0u64..1000, r in 2.0f64..5.0) {
        let grid = ImageGrid::square(32, 32).unwrap();
        let cs = build_cartesian_candidates(&grid, 1.0, &[0, 1], 1).unwrap();
        let p = generate(&BaselineSpec::poisson_disc(r, 8, seed), &cs).unwrap();
        let m = target_groups(1024, r).unwrap() as f64;
        prop_assert!((p.kept_groups.len() as f64 - m).abs() <= (0.01 * m).max(1.0));
        let center = (0..1024).filter(|&g| cs.frequency_index(g).iter().all(|&k| (-4..4).contains(&k)));
        for g in center {
            prop_assert!(p.kept_groups.contains(&g));
        }
    }

    #[test]
    fn pattern_json_roundtrips(kept in proptest::collection::btree_set(0usize..40, 1..40)) {
        let grid = ImageGrid::square(4, 40).unwrap();
        let cs = build_cartesian_candidates(&grid, 1.0, &[1], 1).unwrap();
        let p = SamplingPattern::from_groups(&cs, kept.into_iter().collect(), "t", vec![1.0, 2.5]).unwrap();
        let q = SamplingPattern::from_json(&p.to_json().unwrap()).unwrap();
        prop_assert_eq!(p, q);
    }

    #[test]
    fn nrmse_of_a_scaled_image(g in complex_vec(20), a in -3.0f64..3.0) {
        prop_assume!(g.iter().any(|z| z.norm() > 1e-3));
        let scaled: Vec<C64> = g.iter().map(|z| z * a).collect();
        prop_assert!((nrmse(&scaled, &g).unwrap() - (a - 1.0).abs()).abs() < 1e-12);
    }
}
