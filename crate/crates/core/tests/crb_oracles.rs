mod common;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{conj_t, dense_wavelet, gauss_jordan_inverse, rel_frob, trace_re};
use oedipus_core::baselines::{uniform_pattern, BaselineSpec};
use oedipus_core::crb::{self, GroupBlock};
use oedipus_core::design::{evaluate_pattern_crb, DesignObjective};
use oedipus_core::encoding::{build_cartesian_candidates, EncodingModel, ImageGrid};
use oedipus_core::sparsity::SupportSet;
use oedipus_core::verify::{self, Instance};
use oedipus_core::wavelet::{TransformSpec, Wavelet2d};
use oedipus_core::C64;

/// `A Psi^H U` from dense matrices, for the rows of `groups`.
fn dense_restricted(inst: &Instance, groups: &[usize]) -> Array2<C64> {
    let a = inst.model.dense_matrix(0).unwrap();
    let w = dense_wavelet(&inst.wavelet);
    let psi_h = conj_t(&w);
    let cs = &inst.model.candidates;
    let rows: Vec<usize> = groups.iter().flat_map(|&g| cs.group(g).to_vec()).collect();
    let s = inst.support.indices();
    Array2::from_shape_fn((rows.len(), s.len()), |(i, j)| {
        (0..a.ncols()).map(|n| a[(rows[i], n)] * psi_h[(n, s[j])]).sum()
    })
}

fn dense_bound(inst: &Instance, groups: &[usize]) -> Array2<C64> {
    let b = dense_restricted(inst, groups);
    gauss_jordan_inverse(&conj_t(&b).dot(&b))
}

#[test]
fn full_bound_matches_dense_inverse() {
    for (seed, coils) in [(1u64, 1usize), (2, 2)] {
        let inst = verify::random_instance(seed, [8, 8], &[0, 1], coils, 10, &TransformSpec::daubechies4(2)).unwrap();
        let state = crb::build_full_crb(&inst.model, &inst.support, &inst.wavelet, 0, 0).unwrap();
        let all: Vec<usize> = (0..inst.model.candidates.n_groups()).collect();
        let oracle = dense_bound(&inst, &all);
        assert!(rel_frob(&state.inv_gram, &oracle) < 1e-8);
        assert!((state.trace - trace_re(&oracle)).abs() < 1e-8 * state.trace);
    }
}

#[test]
fn two_coil_downdate_matches_rebuild() {
    let inst = verify::random_instance(4, [8, 8], &[1], 2, 10, &TransformSpec::daubechies4(1)).unwrap();
    let state = crb::build_full_crb(&inst.model, &inst.support, &inst.wavelet, 0, 0).unwrap();
    let block = GroupBlock::new(&inst.model, &inst.support, &inst.wavelet, 0, 0, 3).unwrap();
    let next = crb::smw_downdate(&state, &block).unwrap();
    let rest: Vec<usize> = (0..8).filter(|&g| g != 3).collect();
    assert!(rel_frob(&next.inv_gram, &dense_bound(&inst, &rest)) < 1e-8);
    let shortcut = crb::downdate_trace(&state, &block).unwrap();
    assert!((shortcut - next.trace).abs() <= 1e-10 * next.trace);
}

#[test]
fn chained_downdates_match_direct_inversion() {
    for seed in 0..12u64 {
        let coils = [1, 2, 4][seed as usize % 3];
        let inst = verify::random_instance(
            seed,
            [8, 8],
            &[0, 1],
            coils,
            8 + seed as usize,
            &TransformSpec::daubechies4(2),
        )
        .unwrap();
        let chain = verify::smw_chain(&inst, 20, seed + 100).unwrap();
        assert_eq!(chain.steps, 20, "seed {seed}");
        assert!(chain.inverse <= 1e-7, "seed {seed}: {chain:?}");
        assert!(chain.trace <= 1e-10, "seed {seed}: {chain:?}");
    }
}

#[test]
fn deleting_groups_never_lowers_the_trace() {
    let inst = verify::random_instance(9, [8, 8], &[0, 1], 2, 12, &TransformSpec::haar(2)).unwrap();
    let mut state = crb::build_full_crb(&inst.model, &inst.support, &inst.wavelet, 0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let active: Vec<usize> = state.active_groups.iter().copied().collect();
        let g = active[rng.random_range(0..active.len())];
        let block = GroupBlock::new(&inst.model, &inst.support, &inst.wavelet, 0, 0, g).unwrap();
        let next = crb::smw_downdate(&state, &block).unwrap();
        assert!(next.trace >= state.trace - 1e-10);
        state = next;
    }
}

#[test]
fn three_bound_forms_share_their_trace() {
    for (spec, s) in [(TransformSpec::daubechies4(1), 6), (TransformSpec::haar(1), 4)] {
        let inst = verify::random_instance(11, [8, 8], &[0, 1], 1, s, &spec).unwrap();
        let all: Vec<usize> = (0..64).collect();
        let c = dense_bound(&inst, &all);
        // image domain, explicit Psi^H U C U^H Psi
        let w = dense_wavelet(&inst.wavelet);
        let idx = inst.support.indices();
        let z = Array2::from_shape_fn((64, s), |(n, j)| w[(idx[j], n)].conj());
        let image = z.dot(&c).dot(&conj_t(&z));
        let forms = verify::trace_forms(&inst).unwrap();
        for f in forms {
            assert!((f - trace_re(&image)).abs() <= 1e-8 * f, "{forms:?}");
        }
    }
    for seed in 0..10u64 {
        let spec = if seed % 2 == 0 {
            TransformSpec::daubechies4(2)
        } else {
            TransformSpec::haar(3)
        };
        let inst = verify::random_instance(seed, [8, 8], &[0, 1], 2, 16, &spec).unwrap();
        assert!(verify::trace_spread(&verify::trace_forms(&inst).unwrap()) < 1e-8);
    }
}

#[test]
fn oracle_estimator_attains_the_bound() {
    let mc = verify::monte_carlo_covariance(3, 8, 100_000, 21).unwrap();
    assert!(mc.covariance_z < 5.0, "{mc:?}");
    assert!(mc.bias_z < 5.0, "{mc:?}");
}

#[test]
fn aliased_support_is_unidentifiable_under_uniform_undersampling() {
    // voxels n and n + N/2 along the undersampled axis produce identical samples on
    // every other line
    let grid = ImageGrid::square(8, 8).unwrap();
    let cs = build_cartesian_candidates(&grid, 1.0, &[1], 1).unwrap();
    let model = EncodingModel::single_channel(grid, cs.clone()).unwrap();
    let identity = Wavelet2d::identity([8, 8]);
    let support = SupportSet::new(vec![2 * 8 + 1, 2 * 8 + 5], 64, "aliased pair").unwrap();
    let uniform = uniform_pattern(&BaselineSpec::uniform(2.0), &cs).unwrap();
    let v = evaluate_pattern_crb(
        &uniform,
        &model,
        std::slice::from_ref(&support),
        &identity,
        DesignObjective::AverageCase,
    )
    .unwrap();
    assert_eq!(v, f64::INFINITY);
    // a non-aliased pair on the same lines is fine
    let ok = SupportSet::new(vec![2 * 8 + 1, 2 * 8 + 4], 64, "distinct").unwrap();
    let v = evaluate_pattern_crb(&uniform, &model, &[ok], &identity, DesignObjective::AverageCase).unwrap();
    assert!(v.is_finite());
    // dense wavelet support with half the lines
    let d4 = Wavelet2d::new([8, 8], &TransformSpec::daubechies4(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dense = SupportSet::new(sample(&mut rng, 64, 40).into_vec(), 64, "dense").unwrap();
    let v = evaluate_pattern_crb(&uniform, &model, &[dense], &d4, DesignObjective::AverageCase).unwrap();
    assert_eq!(v, f64::INFINITY);
}
