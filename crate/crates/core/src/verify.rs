//! Numerical cross-checks shared by the command-line self-test and the test suites.
//!
//! Every check compares a fast path against an independent reference: recursive
//! downdates against fresh inversions, the three forms of the bound against each
//! other, operators against their adjoints, greedy choices against brute force, and
//! the analytic bound against the empirical covariance of the oracle estimator.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::crb::{self, GroupBlock};
use crate::design::{self, DesignObjective, DesignOptions, TIE_TOLERANCE};
use crate::encoding::{build_cartesian_candidates, synthesize_coil_maps, EncodingModel, ImageGrid, VoxelBasis};
use crate::linalg::real_trace;
use crate::pattern::SamplingPattern;
use crate::recon::{EncodingOperator, FiniteDifference};
use crate::sparsity::SupportSet;
use crate::wavelet::{TransformSpec, Wavelet2d};
use crate::{Error, Result, C64};

/// A small random design problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: EncodingModel,
    pub support: SupportSet,
    pub wavelet: Wavelet2d,
}

/// Random support of size `s` on a `dims` grid with `n_coils` synthetic coils.
pub fn random_instance(
    seed: u64,
    dims: [usize; 2],
    undersample: &[usize],
    n_coils: usize,
    s: usize,
    spec: &TransformSpec,
) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = ImageGrid::new(dims, [200.0, 200.0])?;
    let cs = build_cartesian_candidates(&grid, 1.0, undersample, n_coils)?;
    let maps = synthesize_coil_maps(&grid, n_coils, 2.0, rng.random())?;
    let model = EncodingModel::new(grid, VoxelBasis::Dirac, vec![maps], cs)?;
    let q = grid.len();
    if s > q {
        return Err(Error::invalid("support larger than the grid"));
    }
    let indices = sample(&mut rng, q, s).into_vec();
    let support = SupportSet::new(indices, q, format!("random-{seed}"))?;
    let wavelet = Wavelet2d::new(dims, spec)?;
    Ok(Instance {
        model,
        support,
        wavelet,
    })
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n)
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn l2(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn frob_rel(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
    let base: f64 = b.iter().map(|z| z.norm_sqr()).sum();
    (diff / base).sqrt()
}

/// Worst errors over a chain of random deletions.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChainErrors {
    /// Relative Frobenius error of the downdated inverse against a fresh build.
    pub inverse: f64,
    /// Relative error of the trace-only shortcut against the full downdate.
    pub trace: f64,
    /// Deletions actually performed (chains stop early at an infeasible step).
    pub steps: usize,
}

/// Deletes up to `deletions` random groups by chained downdates, comparing each step
/// with a from-scratch inversion of the remaining groups.
pub fn smw_chain(inst: &Instance, deletions: usize, seed: u64) -> Result<ChainErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = &inst.model;
    let mut state = crb::build_full_crb(m, &inst.support, &inst.wavelet, 0, 0)?;
    let mut out = ChainErrors::default();
    let mut remaining: Vec<usize> = (0..m.candidates.n_groups()).collect();
    for _ in 0..deletions {
        let pick = remaining.remove(rng.random_range(0..remaining.len()));
        let block = GroupBlock::new(m, &inst.support, &inst.wavelet, 0, 0, pick)?;
        let fresh = match crb::build_crb_for_groups(m, &inst.support, &inst.wavelet, 0, 0, &remaining) {
            Ok(s) => s,
            Err(e) if e.is_infeasible() => break,
            Err(e) => return Err(e),
        };
        let shortcut = crb::downdate_trace(&state, &block)?;
        let next = crb::smw_downdate(&state, &block)?;
        out.inverse = out.inverse.max(frob_rel(&next.inv_gram, &fresh.inv_gram));
        out.trace = out.trace.max((shortcut - next.trace).abs() / next.trace);
        out.steps += 1;
        state = next;
    }
    Ok(out)
}

/// Traces of the bound in the support, coefficient and image domains.
pub fn trace_forms(inst: &Instance) -> Result<[f64; 3]> {
    let state = crb::build_full_crb(&inst.model, &inst.support, &inst.wavelet, 0, 0)?;
    let coeff = crb::coefficient_domain_crb(&state, &inst.support, inst.wavelet.len());
    Ok([
        real_trace(&state.inv_gram),
        real_trace(&coeff),
        crb::image_domain_crb_trace(&state, &inst.support, &inst.wavelet)?,
    ])
}

/// Largest relative spread between the three trace forms.
pub fn trace_spread(traces: &[f64; 3]) -> f64 {
    let hi = traces.iter().cloned().fold(f64::MIN, f64::max);
    let lo = traces.iter().cloned().fold(f64::MAX, f64::min);
    (hi - lo) / lo.abs()
}

/// Relative error of Parseval's identity and of perfect reconstruction on random
/// images.
pub fn wavelet_parseval_error(wavelet: &Wavelet2d, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = random_vec(&mut rng, wavelet.len());
        let c = wavelet.forward(&x)?;
        let back = wavelet.inverse(&c)?;
        let diff: Vec<C64> = back.iter().zip(&x).map(|(a, b)| a - b).collect();
        worst = worst.max((l2(&c) - l2(&x)).abs() / l2(&x)).max(l2(&diff) / l2(&x));
    }
    Ok(worst)
}

/// Worst relative inner-product mismatch `|<Ax, y> - <x, A^H y>| / (|Ax| |y|)`.
fn adjoint_mismatch<F, G>(n_in: usize, n_out: usize, trials: usize, rng: &mut ChaCha8Rng, fwd: F, adj: G) -> f64
where
    F: Fn(&[C64]) -> Vec<C64>,
    G: Fn(&[C64]) -> Vec<C64>,
{
    (0..trials)
        .map(|_| {
            let x = random_vec(rng, n_in);
            let y = random_vec(rng, n_out);
            let ax = fwd(&x);
            let lhs = dot(&ax, &y);
            let rhs = dot(&x, &adj(&y));
            (lhs - rhs).norm() / (l2(&ax) * l2(&y)).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

/// Adjoint mismatches of the encoding, wavelet and finite-difference operators.
#[derive(Debug, Clone, Copy)]
pub struct AdjointErrors {
    pub encoding: f64,
    pub wavelet: f64,
    pub finite_difference: f64,
}

impl AdjointErrors {
    pub fn worst(&self) -> f64 {
        self.encoding.max(self.wavelet).max(self.finite_difference)
    }
}

/// Randomized inner-product tests on a multi-coil, oversampled encoding with a random
/// pattern, the given wavelet and the finite-difference operator.
pub fn adjoint_errors(wavelet: &Wavelet2d, trials: usize, seed: u64) -> Result<AdjointErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = wavelet.dims();
    let grid = ImageGrid::new(dims, [180.0, 240.0])?;
    let cs = build_cartesian_candidates(&grid, 1.25, &[0, 1], 3)?;
    let maps = synthesize_coil_maps(&grid, 3, 2.0, rng.random())?;
    let model = EncodingModel::new(grid, VoxelBasis::Rect, vec![maps], cs.clone())?;
    let kept: Vec<usize> = (0..cs.n_groups()).filter(|_| rng.random_bool(0.4)).collect();
    let pattern = SamplingPattern::from_groups(&cs, kept, "random", Vec::new())?;
    let op = EncodingOperator::new(&model, &pattern, 0)?;
    let n = grid.len();
    let encoding = adjoint_mismatch(n, op.len(), trials, &mut rng, |x| op.forward(x), |y| op.adjoint(y));
    let wavelet_err = adjoint_mismatch(
        n,
        n,
        trials,
        &mut rng,
        |x| wavelet.forward(x).expect("grid matches"),
        |y| wavelet.inverse(y).expect("grid matches"),
    );
    let fd = FiniteDifference::new(dims)?;
    let finite_difference = adjoint_mismatch(n, 2 * n, trials, &mut rng, |x| fd.forward(x), |y| fd.adjoint(y));
    Ok(AdjointErrors {
        encoding,
        wavelet: wavelet_err,
        finite_difference,
    })
}

/// Outcome of one greedy-versus-brute-force comparison.
#[derive(Debug, Clone)]
pub struct GreedyCheck {
    /// Steps whose greedy choice matched the brute-force minimizer.
    pub matched_steps: usize,
    pub steps: usize,
    pub greedy_objective: f64,
    pub optimal_objective: f64,
}

impl GreedyCheck {
    pub fn passed(&self) -> bool {
        self.matched_steps == self.steps && self.greedy_objective >= self.optimal_objective * (1.0 - 1e-9)
    }

    /// Relative suboptimality of the greedy design.
    pub fn gap(&self) -> f64 {
        self.greedy_objective / self.optimal_objective - 1.0
    }
}

/// Runs the greedy design, re-deriving each deletion by rebuilding the bound for every
/// candidate deletion, and compares the final objective with exhaustive search.
pub fn greedy_vs_exhaustive(inst: &Instance, target_groups: usize) -> Result<GreedyCheck> {
    let supports = std::slice::from_ref(&inst.support);
    let objective = DesignObjective::AverageCase;
    let report = design::sbs_design_with(
        &inst.model,
        supports,
        &inst.wavelet,
        objective,
        target_groups,
        &DesignOptions::default(),
    )?;
    let mut active: BTreeSet<usize> = (0..inst.model.candidates.n_groups()).collect();
    let mut matched = 0;
    for &chosen in &report.removal_order {
        let costs: Vec<(usize, f64)> = active
            .iter()
            .map(|&g| {
                let rest: Vec<usize> = active.iter().copied().filter(|&h| h != g).collect();
                let cost = match crb::build_crb_for_groups(&inst.model, &inst.support, &inst.wavelet, 0, 0, &rest) {
                    Ok(s) => s.trace,
                    Err(_) => f64::INFINITY,
                };
                (g, cost)
            })
            .collect();
        let min = costs.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        // candidates the reference cannot separate from the minimum at working precision
        let ties: Vec<usize> = costs
            .iter()
            .filter(|c| c.1 <= min * (1.0 + TIE_TOLERANCE.max(1e-9)))
            .map(|c| c.0)
            .collect();
        if ties.contains(&chosen) {
            matched += 1;
        }
        active.remove(&chosen);
    }
    let exhaustive = design::exhaustive_design(&inst.model, supports, &inst.wavelet, objective, target_groups)?;
    Ok(GreedyCheck {
        matched_steps: matched,
        steps: report.removal_order.len(),
        greedy_objective: report.pattern.log.last().copied().unwrap_or(report.initial_objective),
        optimal_objective: exhaustive.pattern.log[0],
    })
}

/// Empirical behavior of the oracle least-squares estimator under unit complex noise.
#[derive(Debug, Clone, Copy)]
pub struct MonteCarloCheck {
    /// Largest |empirical - bound| over covariance entries (real and imaginary parts),
    /// in standard errors.
    pub covariance_z: f64,
    /// Largest |mean error| over coefficients, in standard errors.
    pub bias_z: f64,
    pub draws: usize,
}

/// Draws `draws` noisy acquisitions of a random S-sparse signal through `m` random
/// rows of a single-coil encoding and compares the estimator's error covariance with
/// the bound.
pub fn monte_carlo_covariance(s: usize, m: usize, draws: usize, seed: u64) -> Result<MonteCarloCheck> {
    let inst = random_instance(seed, [4, 4], &[0, 1], 1, s, &TransformSpec::haar(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let cs = &inst.model.candidates;
    let kept = sample(&mut rng, cs.n_groups(), m).into_vec();
    let rows: Vec<usize> = kept.iter().flat_map(|&g| cs.group(g).iter().copied()).collect();
    let b = crb::restricted_rows(&inst.model, &inst.support, &inst.wavelet, 0, &rows)?;
    let est = crb::oracle_estimator_matrix(&b.view())?;
    let bound = crb::build_crb_for_groups(&inst.model, &inst.support, &inst.wavelet, 0, 0, &kept)?.inv_gram;
    let truth = Array1::from(random_vec(&mut rng, s));
    let clean = b.dot(&truth);

    let mut sum = Array1::<C64>::zeros(s);
    let mut sum_sq = Array1::<f64>::zeros(s);
    let mut prod = Array2::<C64>::zeros((s, s));
    let mut prod_sq_re = Array2::<f64>::zeros((s, s));
    let mut prod_sq_im = Array2::<f64>::zeros((s, s));
    let unit = std::f64::consts::FRAC_1_SQRT_2;
    for _ in 0..draws {
        let noise: Array1<C64> = (0..clean.len())
            .map(|_| {
                C64::new(
                    unit * rng.sample::<f64, _>(StandardNormal),
                    unit * rng.sample::<f64, _>(StandardNormal),
                )
            })
            .collect();
        let err = est.dot(&(&clean + &noise)) - &truth;
        for i in 0..s {
            sum[i] += err[i];
            sum_sq[i] += err[i].norm_sqr();
            for j in 0..s {
                let p = err[i] * err[j].conj();
                prod[(i, j)] += p;
                prod_sq_re[(i, j)] += p.re * p.re;
                prod_sq_im[(i, j)] += p.im * p.im;
            }
        }
    }
    let d = draws as f64;
    let mut bias_z: f64 = 0.0;
    for i in 0..s {
        let mean = sum[i] / d;
        // each component of a circular error carries half the variance
        let se = (sum_sq[i] / d / 2.0 / d).sqrt();
        bias_z = bias_z.max(mean.re.abs() / se).max(mean.im.abs() / se);
    }
    let mut covariance_z: f64 = 0.0;
    for i in 0..s {
        for j in 0..s {
            let mean = prod[(i, j)] / d;
            let se_re = ((prod_sq_re[(i, j)] / d - mean.re * mean.re) / d).sqrt();
            let diff = mean - bound[(i, j)];
            covariance_z = covariance_z.max(diff.re.abs() / se_re);
            if i != j {
                let se_im = ((prod_sq_im[(i, j)] / d - mean.im * mean.im) / d).sqrt();
                covariance_z = covariance_z.max(diff.im.abs() / se_im);
            }
        }
    }
    Ok(MonteCarloCheck {
        covariance_z,
        bias_z,
        draws,
    })
}
