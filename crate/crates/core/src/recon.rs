//! Retrospective undersampling and sparsity-regularized reconstruction.
//!
//! The solver minimizes `||A f - d||^2 + lambda * sum_j rho_eps(|(T f)_j|)` where `T` is
//! the orthonormal wavelet transform or anisotropic finite differences and `rho_eps` is
//! the Huber-smoothed magnitude (`x^2 / (2 eps) + eps / 2` below `eps`, `x` above).
//! Each outer iteration minimizes the quadratic majorizer
//! `||A f - d||^2 + (lambda / 2) sum_j w_j |(T f)_j|^2` with `w_j = 1 / max(|(T f_i)_j|, eps)`
//! by preconditioned conjugate gradients warm-started at the current iterate, so the
//! objective never increases.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::encoding::{sum_of_squares, EncodingModel};
use crate::pattern::SamplingPattern;
use crate::wavelet::{TransformSpec, Wavelet2d};
use crate::{Error, Result, C64};

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm_sq(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `||estimate - gold|| / ||gold||`.
pub fn nrmse(estimate: &[C64], gold: &[C64]) -> Result<f64> {
    if estimate.len() != gold.len() {
        return Err(Error::invalid("estimate and gold differ in length"));
    }
    let g = norm(gold);
    if g == 0.0 {
        return Err(Error::invalid("gold standard has zero norm"));
    }
    let diff: f64 = estimate.iter().zip(gold).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(diff.sqrt() / g)
}

/// Separable 2D DFT over a `dims` array stored row-major.
struct Fft2 {
    dims: [usize; 2],
    fwd: [Arc<dyn Fft<f64>>; 2],
    inv: [Arc<dyn Fft<f64>>; 2],
}

impl Fft2 {
    fn new(dims: [usize; 2]) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            dims,
            fwd: [planner.plan_fft_forward(dims[0]), planner.plan_fft_forward(dims[1])],
            inv: [planner.plan_fft_inverse(dims[0]), planner.plan_fft_inverse(dims[1])],
        }
    }

    /// Unnormalized transform in place; `inverse` flips the exponent sign.
    fn run(&self, data: &mut [C64], inverse: bool) {
        let [n0, n1] = self.dims;
        let plans = if inverse { &self.inv } else { &self.fwd };
        plans[1].process(data);
        let mut col = vec![C64::new(0.0, 0.0); n0];
        for j in 0..n1 {
            for i in 0..n0 {
                col[i] = data[i * n1 + j];
            }
            plans[0].process(&mut col);
            for i in 0..n0 {
                data[i * n1 + j] = col[i];
            }
        }
    }
}

/// Restriction `A_Omega` of the encoding model to a pattern's rows for one map set,
/// applied with FFTs. Data are ordered like the candidate rows: kept location
/// (ascending), then coil.
pub struct EncodingOperator {
    dims: [usize; 2],
    kgrid: [usize; 2],
    maps: Vec<Vec<C64>>,
    /// Kept locations with their FFT-grid offset and basis weight.
    samples: Vec<(usize, f64)>,
    fft: Fft2,
    /// Diagonal of `A^H A` and of the fully sampled `A_full^H A_full`.
    diag: Vec<f64>,
    full_diag: Vec<f64>,
}

impl EncodingOperator {
    pub fn new(model: &EncodingModel, pattern: &SamplingPattern, t: usize) -> Result<Self> {
        pattern.check_compatible(&model.candidates)?;
        if t >= model.n_map_sets() {
            return Err(Error::invalid(format!("map set {t} out of range")));
        }
        let cs = &model.candidates;
        let kgrid = cs.kgrid;
        let fft_offset = |loc: usize| {
            let m = cs.frequency_index(loc);
            let i0 = m[0].rem_euclid(kgrid[0] as i64) as usize;
            let i1 = m[1].rem_euclid(kgrid[1] as i64) as usize;
            i0 * kgrid[1] + i1
        };
        let samples: Vec<(usize, f64)> = pattern
            .kept_locations()
            .into_iter()
            .map(|loc| (fft_offset(loc), model.location_weight(loc)))
            .collect();
        let sos = sum_of_squares(&model.coil_maps[t]);
        let kept_w: f64 = samples.iter().map(|s| s.1 * s.1).sum();
        let all_w: f64 = (0..cs.n_locations()).map(|l| model.location_weight(l).powi(2)).sum();
        let maps = model.coil_maps[t].outer_iter().map(|r| r.to_vec()).collect();
        Ok(EncodingOperator {
            dims: model.grid.dims,
            kgrid,
            maps,
            samples,
            fft: Fft2::new(kgrid),
            diag: sos.iter().map(|s| s * kept_w).collect(),
            full_diag: sos.iter().map(|s| s * all_w).collect(),
        })
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    /// Measurement count `M`.
    pub fn len(&self) -> usize {
        self.samples.len() * self.n_coils()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn forward(&self, f: &[C64]) -> Vec<C64> {
        let nc = self.n_coils();
        let [n0, n1] = self.dims;
        let mut out = vec![C64::new(0.0, 0.0); self.len()];
        let mut buf = vec![C64::new(0.0, 0.0); self.kgrid[0] * self.kgrid[1]];
        for (coil, map) in self.maps.iter().enumerate() {
            buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            for i in 0..n0 {
                for j in 0..n1 {
                    buf[i * self.kgrid[1] + j] = map[i * n1 + j] * f[i * n1 + j];
                }
            }
            self.fft.run(&mut buf, false);
            for (s, &(off, w)) in self.samples.iter().enumerate() {
                out[s * nc + coil] = buf[off] * w;
            }
        }
        out
    }

    pub fn adjoint(&self, d: &[C64]) -> Vec<C64> {
        let nc = self.n_coils();
        let [n0, n1] = self.dims;
        let mut out = vec![C64::new(0.0, 0.0); n0 * n1];
        let mut buf = vec![C64::new(0.0, 0.0); self.kgrid[0] * self.kgrid[1]];
        for (coil, map) in self.maps.iter().enumerate() {
            buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            for (s, &(off, w)) in self.samples.iter().enumerate() {
                buf[off] = d[s * nc + coil] * w;
            }
            self.fft.run(&mut buf, true);
            for i in 0..n0 {
                for j in 0..n1 {
                    out[i * n1 + j] += map[i * n1 + j].conj() * buf[i * self.kgrid[1] + j];
                }
            }
        }
        out
    }

    pub fn normal(&self, f: &[C64]) -> Vec<C64> {
        self.adjoint(&self.forward(f))
    }

    /// Zero-filled estimate `A^H d ./ diag(A_full^H A_full)`.
    pub fn zero_filled(&self, d: &[C64]) -> Vec<C64> {
        let mut x = self.adjoint(d);
        for (v, &g) in x.iter_mut().zip(&self.full_diag) {
            *v = if g > 0.0 { *v / g } else { C64::new(0.0, 0.0) };
        }
        x
    }
}

/// Simulated acquisition `A_Omega f + n`, with complex white noise of variance
/// `E|n|^2 = sigma^2` per sample.
pub fn retrospective_undersample(
    full_image: &[C64],
    pattern: &SamplingPattern,
    model: &EncodingModel,
    t: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<C64>> {
    if full_image.len() != model.grid.len() {
        return Err(Error::invalid("image length does not match the grid"));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::invalid("noise sigma must be non-negative"));
    }
    let op = EncodingOperator::new(model, pattern, t)?;
    let mut d = op.forward(full_image);
    if noise_sigma > 0.0 {
        add_noise(&mut d, noise_sigma, seed);
    }
    Ok(d)
}

/// Rows of `pattern` taken from data acquired with the full pattern, so that every
/// pattern sees the same noise realization at shared locations.
pub fn restrict_full_data(full_data: &[C64], pattern: &SamplingPattern, n_coils: usize) -> Result<Vec<C64>> {
    if n_coils == 0 || full_data.len() != pattern.mask.len() * n_coils {
        return Err(Error::invalid("full data length does not match the pattern"));
    }
    Ok(pattern
        .kept_locations()
        .into_iter()
        .flat_map(|loc| full_data[loc * n_coils..(loc + 1) * n_coils].iter().copied())
        .collect())
}

pub fn add_noise(d: &mut [C64], sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma / std::f64::consts::SQRT_2).expect("finite sigma");
    for z in d.iter_mut() {
        *z += C64::new(normal.sample(&mut rng), normal.sample(&mut rng));
    }
}

/// Forward differences along both axes with replicated boundaries; output `[D0 f; D1 f]`.
#[derive(Debug, Clone, Copy)]
pub struct FiniteDifference {
    pub dims: [usize; 2],
}

impl FiniteDifference {
    pub fn new(dims: [usize; 2]) -> Result<Self> {
        if dims[0] < 2 || dims[1] < 2 {
            return Err(Error::invalid("finite differences need at least a 2x2 grid"));
        }
        Ok(FiniteDifference { dims })
    }

    pub fn forward(&self, f: &[C64]) -> Vec<C64> {
        let [n0, n1] = self.dims;
        let n = n0 * n1;
        let mut out = vec![C64::new(0.0, 0.0); 2 * n];
        for i in 0..n0 {
            for j in 0..n1 {
                let k = i * n1 + j;
                if i + 1 < n0 {
                    out[k] = f[k + n1] - f[k];
                }
                if j + 1 < n1 {
                    out[n + k] = f[k + 1] - f[k];
                }
            }
        }
        out
    }

    pub fn adjoint(&self, g: &[C64]) -> Vec<C64> {
        let [n0, n1] = self.dims;
        let n = n0 * n1;
        let mut out = vec![C64::new(0.0, 0.0); n];
        for i in 0..n0 {
            for j in 0..n1 {
                let k = i * n1 + j;
                if i + 1 < n0 {
                    out[k + n1] += g[k];
                    out[k] -= g[k];
                }
                if j + 1 < n1 {
                    out[k + 1] += g[n + k];
                    out[k] -= g[n + k];
                }
            }
        }
        out
    }

    /// Diagonal of `D^H diag(w) D`.
    fn weighted_diag(&self, w: &[f64]) -> Vec<f64> {
        let [n0, n1] = self.dims;
        let n = n0 * n1;
        let mut out = vec![0.0; n];
        for i in 0..n0 {
            for j in 0..n1 {
                let k = i * n1 + j;
                if i + 1 < n0 {
                    out[k] += w[k];
                    out[k + n1] += w[k];
                }
                if j + 1 < n1 {
                    out[k] += w[n + k];
                    out[k + 1] += w[n + k];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    WaveletL1(TransformSpec),
    Tv,
}

impl Regularizer {
    pub fn label(&self) -> &'static str {
        match self {
            Regularizer::WaveletL1(_) => "wavelet-l1",
            Regularizer::Tv => "tv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlsSettings {
    pub lambda: f64,
    pub max_iters: usize,
    /// Relative-change stopping threshold on the outer iterates.
    pub tol: f64,
    /// Relative residual target of the inner solve.
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// Smoothing corner; `None` uses `1e-6 * max |T f0|`.
    pub epsilon: Option<f64>,
}

impl Default for IrlsSettings {
    fn default() -> Self {
        IrlsSettings {
            lambda: 0.01,
            max_iters: 50,
            tol: 1e-6,
            cg_tol: 1e-6,
            cg_max_iters: 200,
            epsilon: None,
        }
    }
}

pub struct ReconProblem<'a> {
    pub data: Vec<C64>,
    pub operator: &'a EncodingOperator,
    pub regularizer: Regularizer,
    pub settings: IrlsSettings,
    /// Optional reference for reporting NRMSE.
    pub gold: Option<&'a [C64]>,
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub image: Vec<C64>,
    /// Smoothed objective at the initial estimate and after every outer iteration.
    pub objective_log: Vec<f64>,
    pub iterations: usize,
    /// Inner iterations of each outer step.
    pub cg_iterations: Vec<usize>,
    pub epsilon: f64,
    pub nrmse_vs: Option<f64>,
}

fn huber(x: f64, eps: f64) -> f64 {
    if x < eps {
        x * x / (2.0 * eps) + eps / 2.0
    } else {
        x
    }
}

enum Sparsifier {
    Wavelet(Wavelet2d),
    Tv(FiniteDifference),
}

impl Sparsifier {
    fn apply(&self, f: &[C64]) -> Vec<C64> {
        match self {
            Sparsifier::Wavelet(w) => w.forward(f).expect("length checked"),
            Sparsifier::Tv(d) => d.forward(f),
        }
    }
}

struct CgOutcome {
    iterations: usize,
    converged: bool,
}

/// Preconditioned CG for `H x = b` from `x`, stopping at `||r|| <= tol ||b||`.
fn pcg(
    apply: impl Fn(&[C64]) -> Vec<C64>,
    precond: &[f64],
    b: &[C64],
    x: &mut [C64],
    tol: f64,
    max_iters: usize,
) -> CgOutcome {
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        return CgOutcome {
            iterations: 0,
            converged: true,
        };
    }
    let hx = apply(x);
    let mut r: Vec<C64> = b.iter().zip(&hx).map(|(bi, hi)| bi - hi).collect();
    if norm(&r) <= tol * b_norm {
        return CgOutcome {
            iterations: 0,
            converged: true,
        };
    }
    let mut z: Vec<C64> = r.iter().zip(precond).map(|(ri, pi)| ri / pi).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z).re;
    for it in 1..=max_iters {
        let hp = apply(&p);
        let php = dot(&p, &hp).re;
        if !(php > 0.0) {
            return CgOutcome {
                iterations: it,
                converged: false,
            };
        }
        let alpha = rz / php;
        for i in 0..x.len() {
            x[i] += p[i] * alpha;
            r[i] -= hp[i] * alpha;
        }
        if norm(&r) <= tol * b_norm {
            return CgOutcome {
                iterations: it,
                converged: true,
            };
        }
        for i in 0..z.len() {
            z[i] = r[i] / precond[i];
        }
        let rz_next = dot(&r, &z).re;
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..p.len() {
            p[i] = z[i] + p[i] * beta;
        }
    }
    CgOutcome {
        iterations: max_iters,
        converged: false,
    }
}

impl ReconProblem<'_> {
    fn sparsifier(&self) -> Result<Sparsifier> {
        let dims = self.operator.dims;
        Ok(match self.regularizer {
            Regularizer::WaveletL1(spec) => Sparsifier::Wavelet(Wavelet2d::new(dims, &spec)?),
            Regularizer::Tv => Sparsifier::Tv(FiniteDifference::new(dims)?),
        })
    }

    /// Smoothed objective at `f`.
    pub fn objective(&self, f: &[C64], epsilon: f64) -> Result<f64> {
        let t = self.sparsifier()?;
        Ok(objective(
            self.operator,
            &self.data,
            &t,
            self.settings.lambda,
            f,
            epsilon,
        ))
    }
}

fn objective(op: &EncodingOperator, d: &[C64], t: &Sparsifier, lambda: f64, f: &[C64], eps: f64) -> f64 {
    let af = op.forward(f);
    let data: f64 = af.iter().zip(d).map(|(a, b)| (a - b).norm_sqr()).sum();
    let reg: f64 = t.apply(f).iter().map(|z| huber(z.norm(), eps)).sum();
    data + lambda * reg
}

/// Half-quadratic (IRLS) solve of the regularized least-squares problem.
///
/// Starts from the zero-filled estimate. An inner solve that reaches its iteration cap
/// still lowers the objective and is accepted; it is a [`Error::SolverFailure`] only
/// when it fails to reduce the residual at all or breaks down numerically.
pub fn irls_solve(problem: &ReconProblem) -> Result<ReconResult> {
    let s = &problem.settings;
    let op = problem.operator;
    if !(s.lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    if problem.data.len() != op.len() {
        return Err(Error::invalid(format!(
            "{} data samples for an operator with {} rows",
            problem.data.len(),
            op.len()
        )));
    }
    if let Some(e) = s.epsilon {
        if !(e > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
    }
    let t = problem.sparsifier()?;
    let n = op.image_len();
    let rhs_image = op.adjoint(&problem.data);
    let mut f = op.zero_filled(&problem.data);
    let eps = s.epsilon.unwrap_or_else(|| {
        let m = t.apply(&f).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if m > 0.0 {
            1e-6 * m
        } else {
            1e-12
        }
    });
    let half_lambda = 0.5 * s.lambda;
    let mut log = vec![objective(op, &problem.data, &t, s.lambda, &f, eps)];
    let mut cg_iterations = Vec::new();
    let mut iterations = 0;

    for _ in 0..s.max_iters {
        let prev = f.clone();
        let z = t.apply(&f);
        let w: Vec<f64> = z.iter().map(|v| 1.0 / v.norm().max(eps)).collect();
        let outcome = match &t {
            Sparsifier::Wavelet(psi) => {
                // unknowns are the coefficients c = Psi f
                let a0 = op.diag.iter().sum::<f64>() / n as f64;
                let precond: Vec<f64> = w.iter().map(|wi| a0 + half_lambda * wi).collect();
                let b = psi.forward(&rhs_image)?;
                let mut c = z;
                let apply = |x: &[C64]| {
                    let img = psi.inverse(x).expect("length checked");
                    let mut y = psi.forward(&op.normal(&img)).expect("length checked");
                    for ((yi, xi), wi) in y.iter_mut().zip(x).zip(&w) {
                        *yi += xi * (half_lambda * wi);
                    }
                    y
                };
                let out = pcg(apply, &precond, &b, &mut c, s.cg_tol, s.cg_max_iters);
                f = psi.inverse(&c)?;
                out
            }
            Sparsifier::Tv(dop) => {
                let reg_diag = dop.weighted_diag(&w);
                let precond: Vec<f64> = op
                    .diag
                    .iter()
                    .zip(&reg_diag)
                    .map(|(a, r)| (a + half_lambda * r).max(f64::MIN_POSITIVE))
                    .collect();
                let apply = |x: &[C64]| {
                    let mut y = op.normal(x);
                    let mut g = dop.forward(x);
                    for (gi, wi) in g.iter_mut().zip(&w) {
                        *gi *= half_lambda * wi;
                    }
                    for (yi, ri) in y.iter_mut().zip(dop.adjoint(&g)) {
                        *yi += ri;
                    }
                    y
                };
                pcg(apply, &precond, &rhs_image, &mut f, s.cg_tol, s.cg_max_iters)
            }
        };
        iterations += 1;
        cg_iterations.push(outcome.iterations);
        let value = objective(op, &problem.data, &t, s.lambda, &f, eps);
        if !value.is_finite() || (!outcome.converged && value > log[log.len() - 1]) {
            return Err(Error::SolverFailure {
                iterations,
                reason: format!(
                    "inner conjugate-gradient solve failed after {} iterations",
                    outcome.iterations
                ),
                objective_log: log,
            });
        }
        log.push(value);
        let denom = norm(&prev);
        let change = f.iter().zip(&prev).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        if denom == 0.0 || change / denom < s.tol {
            break;
        }
    }
    let nrmse_vs = match problem.gold {
        Some(g) => Some(nrmse(&f, g)?),
        None => None,
    };
    Ok(ReconResult {
        image: f,
        objective_log: log,
        iterations,
        cg_iterations,
        epsilon: eps,
        nrmse_vs,
    })
}

/// Convenience: simulate data for `pattern` and reconstruct.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_pattern(
    gold: &[C64],
    pattern: &SamplingPattern,
    model: &EncodingModel,
    t: usize,
    regularizer: Regularizer,
    settings: IrlsSettings,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<ReconResult> {
    let op = EncodingOperator::new(model, pattern, t)?;
    let mut data = op.forward(gold);
    if noise_sigma > 0.0 {
        add_noise(&mut data, noise_sigma, noise_seed);
    }
    irls_solve(&ReconProblem {
        data,
        operator: &op,
        regularizer,
        settings,
        gold: Some(gold),
    })
}
