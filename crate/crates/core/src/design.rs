//! Sequential backward selection of acquisition groups under an oracle-CRB objective,
//! plus an exhaustive-search reference for tiny instances.
//!
//! Every (exemplar k, map set t) pair keeps its inverse restricted Gram `C` together with
//! the stacked restricted rows `B` of all remaining groups and the product `X = B C`.
//! With these, the trace after deleting group `j` is
//! `trace + Trace[(I - B_j X_j^H)^{-1} X_j X_j^H]`, which costs `O(C^2 S)` per group.
//! Committing a deletion updates `C` by the Woodbury identity and `X` by the matching
//! rank-`C` correction; `X` is periodically recomputed from scratch to bound drift.

use itertools::Itertools;
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crb::{self, CrbState};
use crate::encoding::EncodingModel;
use crate::linalg::{self, conj_t, hermitize, real_trace};
use crate::pattern::SamplingPattern;
use crate::sparsity::SupportSet;
use crate::wavelet::Wavelet2d;
use crate::{Error, Result, C64};

/// Relative slack under which two costs count as tied (lowest group index wins).
pub const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignObjective {
    /// Sum of the traces over all (k, t) pairs.
    #[default]
    AverageCase,
    /// Largest trace over all (k, t) pairs.
    WorstCase,
}

impl DesignObjective {
    pub fn combine(&self, traces: impl IntoIterator<Item = f64>) -> f64 {
        match self {
            DesignObjective::AverageCase => traces.into_iter().sum(),
            DesignObjective::WorstCase => traces.into_iter().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DesignObjective::AverageCase => "average",
            DesignObjective::WorstCase => "worst",
        }
    }
}

/// How candidate deletions are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DesignEngine {
    /// Recursive Woodbury downdates (the production path).
    #[default]
    Recursive,
    /// Re-inverts the reduced Gram for every candidate deletion; a slow reference.
    FromScratch,
}

#[derive(Debug, Clone, Default)]
pub struct DesignOptions {
    pub engine: DesignEngine,
    /// Keep the objective of every candidate deletion at every step.
    pub record_step_costs: bool,
    /// Commits between full recomputations of `X = B C`; `None` picks `max(1, S / C)`.
    pub refresh_interval: Option<usize>,
    /// Label written into the pattern's `mode` field.
    pub mode_label: Option<String>,
}

#[derive(Debug, Clone)]
pub struct DesignReport {
    pub pattern: SamplingPattern,
    /// Objective with every candidate kept.
    pub initial_objective: f64,
    /// Deleted groups in deletion order.
    pub removal_order: Vec<usize>,
    /// Per step, the objective after deleting each group (indexed by group id, `NaN`
    /// for groups already deleted). Empty unless requested.
    pub step_costs: Vec<Vec<f64>>,
}

/// One (k, t) pair in the recursive engine.
struct PairCache {
    state: CrbState,
    s: usize,
    /// Restricted rows of the remaining groups, slot-major, `rows x s`.
    b: Vec<C64>,
    /// `B C`, same layout as `b`.
    x: Vec<C64>,
}

impl PairCache {
    fn rows(&self) -> usize {
        self.b.len() / self.s
    }

    fn block<'a>(&self, buf: &'a [C64], slot: usize, c: usize) -> ArrayView2<'a, C64> {
        let start = slot * c * self.s;
        ArrayView2::from_shape((c, self.s), &buf[start..start + c * self.s]).expect("block shape")
    }

    fn refresh_x(&mut self) {
        let b = ArrayView2::from_shape((self.rows(), self.s), &self.b).expect("shape");
        let x = b.dot(&self.state.inv_gram);
        self.x = x.into_raw_vec_and_offset().0;
    }

    /// Trace after deleting the group held in `slot`, `+inf` when not removable.
    fn trial_trace(&self, slot: usize, c: usize) -> f64 {
        let bj = self.block(&self.b, slot, c);
        let xj = self.block(&self.x, slot, c);
        if c == 1 {
            let mut h1 = C64::new(0.0, 0.0);
            let mut h2 = 0.0;
            for (xv, bv) in xj.iter().zip(bj.iter()) {
                h1 += xv * bv.conj();
                h2 += xv.norm_sqr();
            }
            let denom = 1.0 - h1.re;
            if !(denom > 0.0) {
                return f64::INFINITY;
            }
            let trace = self.state.trace + h2 / denom;
            return if trace.is_finite() && self.state.gram_norm * trace <= linalg::MAX_CONDITION {
                trace
            } else {
                f64::INFINITY
            };
        }
        let mut h1 = xj.dot(&conj_t(&bj));
        hermitize(&mut h1);
        let mut h2 = xj.dot(&conj_t(&xj));
        hermitize(&mut h2);
        crb::trace_after(self.state.trace, self.state.gram_norm, &h1, &h2)
    }

    /// Deletes the group in `slot`; the last slot moves into its place.
    fn commit(&mut self, slot: usize, c: usize, refresh: bool) -> Result<()> {
        let bj = self.block(&self.b, slot, c).to_owned();
        let (next, parts) = crb::downdate_parts(&self.state, &bj.view())?;
        let group_len = c * self.s;
        let last = self.rows() / c - 1;
        for buf in [&mut self.b, &mut self.x] {
            if slot != last {
                let (head, tail) = buf.split_at_mut(last * group_len);
                head[slot * group_len..(slot + 1) * group_len].copy_from_slice(&tail[..group_len]);
            }
            buf.truncate(last * group_len);
        }
        self.state.inv_gram = next.inv_gram;
        self.state.trace = next.trace;
        self.state.condition = next.condition;
        if refresh {
            self.refresh_x();
        } else if !self.b.is_empty() {
            // X' = B C' = X + (B G) M G^H
            let rows = self.rows();
            let b = ArrayView2::from_shape((rows, self.s), &self.b).expect("shape");
            let u = b.dot(&parts.g).dot(&parts.m);
            let delta = u.dot(&conj_t(&parts.g.view()));
            let mut x = ndarray::ArrayViewMut2::from_shape((rows, self.s), &mut self.x).expect("shape");
            x += &delta;
        }
        Ok(())
    }
}

fn validate(model: &EncodingModel, supports: &[SupportSet], wavelet: &Wavelet2d, target_groups: usize) -> Result<()> {
    let l = model.candidates.n_groups();
    if supports.is_empty() {
        return Err(Error::invalid("at least one exemplar support is required"));
    }
    if target_groups == 0 || target_groups > l {
        return Err(Error::invalid(format!(
            "target group count {target_groups} must lie in [1, {l}]"
        )));
    }
    if wavelet.dims() != model.grid.dims {
        return Err(Error::invalid("transform and encoding grids differ"));
    }
    let budget = target_groups * model.candidates.group_size();
    for s in supports {
        if s.len() > budget {
            return Err(Error::infeasible(format!(
                "support '{}' has S = {} unknowns but only {} measurements are kept",
                s.source_label,
                s.len(),
                budget
            )));
        }
    }
    Ok(())
}

fn pairs(model: &EncodingModel, supports: &[SupportSet]) -> Vec<(usize, usize)> {
    (0..supports.len())
        .flat_map(|k| (0..model.n_map_sets()).map(move |t| (k, t)))
        .collect()
}

fn at_iteration(err: Error, iteration: usize) -> Error {
    match err {
        Error::InfeasibleDesign { reason, .. } => Error::InfeasibleDesign {
            iteration: Some(iteration),
            reason,
        },
        other => other,
    }
}

/// Greedy choice: lowest group id among those within the tie tolerance of the minimum.
/// `costs` pairs group ids with objectives; returns `None` if every cost is infinite.
fn choose(costs: &[(usize, f64)]) -> Option<(usize, f64)> {
    let min = costs.iter().map(|&(_, c)| c).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let limit = min + TIE_TOLERANCE * min.abs();
    costs
        .iter()
        .filter(|&&(_, c)| c <= limit)
        .min_by_key(|&&(g, _)| g)
        .copied()
}

/// Greedy backward selection down to `target_groups` retained groups.
pub fn sbs_design(
    model: &EncodingModel,
    supports: &[SupportSet],
    wavelet: &Wavelet2d,
    objective: DesignObjective,
    target_groups: usize,
) -> Result<DesignReport> {
    sbs_design_with(
        model,
        supports,
        wavelet,
        objective,
        target_groups,
        &DesignOptions::default(),
    )
}

pub fn sbs_design_with(
    model: &EncodingModel,
    supports: &[SupportSet],
    wavelet: &Wavelet2d,
    objective: DesignObjective,
    target_groups: usize,
    options: &DesignOptions,
) -> Result<DesignReport> {
    validate(model, supports, wavelet, target_groups)?;
    let label = options
        .mode_label
        .clone()
        .unwrap_or_else(|| format!("sbs-{}", objective.label()));
    match options.engine {
        DesignEngine::Recursive => recursive_sbs(model, supports, wavelet, objective, target_groups, options, label),
        DesignEngine::FromScratch => scratch_sbs(model, supports, wavelet, objective, target_groups, options, label),
    }
}

fn recursive_sbs(
    model: &EncodingModel,
    supports: &[SupportSet],
    wavelet: &Wavelet2d,
    objective: DesignObjective,
    target_groups: usize,
    options: &DesignOptions,
    label: String,
) -> Result<DesignReport> {
    let cs = &model.candidates;
    let l = cs.n_groups();
    let c = cs.group_size();
    let all_rows: Vec<usize> = (0..l).flat_map(|g| cs.group(g).iter().copied()).collect();

    let mut caches = Vec::new();
    for (k, t) in pairs(model, supports) {
        let support = &supports[k];
        if support.len() > all_rows.len() {
            return Err(at_iteration(
                Error::infeasible(format!("S = {} exceeds the candidate count", support.len())),
                0,
            ));
        }
        let b = crb::restricted_rows(model, support, wavelet, t, &all_rows)?;
        let gram = linalg::gram(&b.view());
        let state = CrbState::from_gram(&gram, k, t, (0..l).collect()).map_err(|e| at_iteration(e, 0))?;
        let mut cache = PairCache {
            state,
            s: support.len(),
            b: b.into_raw_vec_and_offset().0,
            x: Vec::new(),
        };
        cache.refresh_x();
        caches.push(cache);
    }
    let max_s = supports.iter().map(|s| s.len()).max().unwrap_or(1);
    let interval = options.refresh_interval.unwrap_or((max_s / c).max(1)).max(1);

    // slot i holds group slot_group[i]
    let mut slot_group: Vec<usize> = (0..l).collect();
    let initial_objective = objective.combine(caches.iter().map(|p| p.state.trace));
    let mut log = Vec::new();
    let mut removal_order = Vec::new();
    let mut step_costs = Vec::new();
    let mut since_refresh = 0usize;

    for iteration in 1..=(l - target_groups) {
        let costs: Vec<(usize, f64)> = (0..slot_group.len())
            .into_par_iter()
            .map(|slot| {
                let cost = objective.combine(caches.iter().map(|p| p.trial_trace(slot, c)));
                (slot_group[slot], cost)
            })
            .collect();
        if options.record_step_costs {
            let mut row = vec![f64::NAN; l];
            for &(g, v) in &costs {
                row[g] = v;
            }
            step_costs.push(row);
        }
        let (group, _) = choose(&costs).ok_or_else(|| Error::InfeasibleDesign {
            iteration: Some(iteration),
            reason: format!(
                "every one of the {} remaining groups is required for identifiability",
                slot_group.len()
            ),
        })?;
        let slot = slot_group.iter().position(|&g| g == group).expect("group present");
        since_refresh += 1;
        let refresh = since_refresh >= interval;
        if refresh {
            since_refresh = 0;
        }
        caches
            .par_iter_mut()
            .try_for_each(|p| p.commit(slot, c, refresh))
            .map_err(|e| at_iteration(e, iteration))?;
        slot_group.swap_remove(slot);
        removal_order.push(group);
        log.push(objective.combine(caches.iter().map(|p| p.state.trace)));
    }

    let pattern = SamplingPattern::from_groups(cs, slot_group, label, log)?;
    Ok(DesignReport {
        pattern,
        initial_objective,
        removal_order,
        step_costs,
    })
}

/// Per-pair Gram contributions of each group, used by the reference engines.
struct GroupGrams {
    /// `grams[pair][group]`, each `S x S`.
    grams: Vec<Vec<Array2<C64>>>,
}

impl GroupGrams {
    fn new(model: &EncodingModel, supports: &[SupportSet], wavelet: &Wavelet2d) -> Result<Self> {
        let cs = &model.candidates;
        let mut grams = Vec::new();
        for (k, t) in pairs(model, supports) {
            let mut per_group = Vec::with_capacity(cs.n_groups());
            for g in 0..cs.n_groups() {
                let b = crb::restricted_rows(model, &supports[k], wavelet, t, cs.group(g))?;
                per_group.push(linalg::gram(&b.view()));
            }
            grams.push(per_group);
        }
        Ok(GroupGrams { grams })
    }

    /// Trace of the inverse Gram over `groups` for each pair, `+inf` when singular.
    fn traces(&self, groups: &[usize], n_rows: usize) -> Vec<f64> {
        self.grams
            .iter()
            .map(|per_group| {
                let s = per_group[0].nrows();
                if s > n_rows {
                    return f64::INFINITY;
                }
                let mut g = Array2::<C64>::zeros((s, s));
                for &l in groups {
                    g += &per_group[l];
                }
                match linalg::invert_gram(&g) {
                    Ok(inv) => real_trace(&inv.inverse),
                    Err(_) => f64::INFINITY,
                }
            })
            .collect()
    }
}

fn scratch_sbs(
    model: &EncodingModel,
    supports: &[SupportSet],
    wavelet: &Wavelet2d,
    objective: DesignObjective,
    target_groups: usize,
    options: &DesignOptions,
    label: String,
) -> Result<DesignReport> {
    let cs = &model.candidates;
    let l = cs.n_groups();
    let c = cs.group_size();
    let grams = GroupGrams::new(model, supports, wavelet)?;
    let mut active: Vec<usize> = (0..l).collect();
    let initial_objective = objective.combine(grams.traces(&active, l * c));
    if !initial_objective.is_finite() {
        return Err(Error::InfeasibleDesign {
            iteration: Some(0),
            reason: "the full candidate set is not identifiable".into(),
        });
    }
    let mut log = Vec::new();
    let mut removal_order = Vec::new();
    let mut step_costs = Vec::new();
    for iteration in 1..=(l - target_groups) {
        let costs: Vec<(usize, f64)> = active
            .par_iter()
            .map(|&g| {
                let rest: Vec<usize> = active.iter().copied().filter(|&h| h != g).collect();
                (g, objective.combine(grams.traces(&rest, rest.len() * c)))
            })
            .collect();
        if options.record_step_costs {
            let mut row = vec![f64::NAN; l];
            for &(g, v) in &costs {
                row[g] = v;
            }
            step_costs.push(row);
        }
        let (group, cost) = choose(&costs).ok_or_else(|| Error::InfeasibleDesign {
            iteration: Some(iteration),
            reason: format!(
                "every one of the {} remaining groups is required for identifiability",
                active.len()
            ),
        })?;
        active.retain(|&g| g != group);
        removal_order.push(group);
        log.push(cost);
    }
    let pattern = SamplingPattern::from_groups(cs, active, label, log)?;
    Ok(DesignReport {
        pattern,
        initial_objective,
        removal_order,
        step_costs,
    })
}

/// Largest number of subsets [`exhaustive_design`] will enumerate.
pub const EXHAUSTIVE_BUDGET: u128 = 1_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Globally optimal pattern by enumerating every subset of `target_groups` groups.
pub fn exhaustive_design(
    model: &EncodingModel,
    supports: &[SupportSet],
    wavelet: &Wavelet2d,
    objective: DesignObjective,
    target_groups: usize,
) -> Result<DesignReport> {
    let l = model.candidates.n_groups();
    if target_groups == 0 || target_groups > l {
        return Err(Error::invalid(format!(
            "target group count {target_groups} must lie in [1, {l}]"
        )));
    }
    let count = binomial(l, target_groups);
    if count > EXHAUSTIVE_BUDGET {
        return Err(Error::invalid(format!(
            "{count} subsets exceed the exhaustive-search budget of {EXHAUSTIVE_BUDGET}"
        )));
    }
    if supports.is_empty() {
        return Err(Error::invalid("at least one exemplar support is required"));
    }
    let c = model.candidates.group_size();
    let grams = GroupGrams::new(model, supports, wavelet)?;
    let full = objective.combine(grams.traces(&(0..l).collect::<Vec<_>>(), l * c));
    let subsets: Vec<Vec<usize>> = (0..l).combinations(target_groups).collect();
    let scores: Vec<f64> = subsets
        .par_iter()
        .map(|sub| objective.combine(grams.traces(sub, target_groups * c)))
        .collect();
    // first (lexicographically smallest) subset among exact minima
    let best = scores
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, &v)| (i, v));
    let (index, value) = best.ok_or_else(|| Error::infeasible("every subset of the requested size is singular"))?;
    let kept = subsets[index].clone();
    let removal_order = (0..l).filter(|g| !kept.contains(g)).collect();
    let pattern = SamplingPattern::from_groups(&model.candidates, kept, "exhaustive", vec![value])?;
    Ok(DesignReport {
        pattern,
        initial_objective: full,
        removal_order,
        step_costs: Vec::new(),
    })
}

/// Objective of `pattern` with CRBs rebuilt from scratch; `+inf` when any is singular.
pub fn evaluate_pattern_crb(
    pattern: &SamplingPattern,
    model: &EncodingModel,
    supports: &[SupportSet],
    wavelet: &Wavelet2d,
    objective: DesignObjective,
) -> Result<f64> {
    pattern.check_compatible(&model.candidates)?;
    if supports.is_empty() {
        return Err(Error::invalid("at least one exemplar support is required"));
    }
    let mut traces = Vec::new();
    for (k, t) in pairs(model, supports) {
        match crb::build_crb_for_groups(model, &supports[k], wavelet, k, t, &pattern.kept_groups) {
            Ok(state) => traces.push(state.trace),
            Err(e) if e.is_infeasible() => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    Ok(objective.combine(traces))
}

/// Per-pair CRB traces for `pattern` (`+inf` entries for singular pairs), ordered by
/// exemplar then map set.
pub fn pattern_traces(
    pattern: &SamplingPattern,
    model: &EncodingModel,
    supports: &[SupportSet],
    wavelet: &Wavelet2d,
) -> Result<Vec<f64>> {
    pattern.check_compatible(&model.candidates)?;
    let mut out = Vec::new();
    for (k, t) in pairs(model, supports) {
        match crb::build_crb_for_groups(model, &supports[k], wavelet, k, t, &pattern.kept_groups) {
            Ok(state) => out.push(state.trace),
            Err(e) if e.is_infeasible() => out.push(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{build_cartesian_candidates, ImageGrid};

    fn dft_toy(n: usize) -> EncodingModel {
        let grid = ImageGrid::square(1, n).unwrap();
        let cs = build_cartesian_candidates(&grid, 1.0, &[1], 1).unwrap();
        EncodingModel::single_channel(grid, cs).unwrap()
    }

    #[test]
    fn keeping_everything_deletes_nothing() {
        let model = dft_toy(4);
        let w = Wavelet2d::identity([1, 4]);
        let s = SupportSet::full(4, "all");
        let r = sbs_design(&model, &[s], &w, DesignObjective::AverageCase, 4).unwrap();
        assert_eq!(r.pattern.kept_groups, vec![0, 1, 2, 3]);
        assert!(r.pattern.log.is_empty());
        assert!((r.initial_objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_sampling_scores_one() {
        let model = dft_toy(4);
        let w = Wavelet2d::identity([1, 4]);
        let s = SupportSet::full(4, "all");
        let p = SamplingPattern::full(&model.candidates);
        let v = evaluate_pattern_crb(&p, &model, &[s], &w, DesignObjective::AverageCase).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_measurements_is_infeasible() {
        let model = dft_toy(8);
        let w = Wavelet2d::identity([1, 8]);
        let s = SupportSet::new(vec![0, 1, 2, 3, 4], 8, "big").unwrap();
        let err = sbs_design(&model, std::slice::from_ref(&s), &w, DesignObjective::AverageCase, 4).unwrap_err();
        assert!(err.is_infeasible());
        let err = exhaustive_design(&model, &[s], &w, DesignObjective::AverageCase, 4).unwrap_err();
        assert!(err.is_infeasible());
    }

    #[test]
    fn exhaustive_budget_is_enforced() {
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(40, 20), 137_846_528_820);
        let grid = ImageGrid::square(1, 40).unwrap();
        let cs = build_cartesian_candidates(&grid, 1.0, &[1], 1).unwrap();
        let model = EncodingModel::single_channel(grid, cs).unwrap();
        let w = Wavelet2d::identity([1, 40]);
        let s = SupportSet::new(vec![0], 40, "one").unwrap();
        let err = exhaustive_design(&model, &[s], &w, DesignObjective::AverageCase, 20).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn tie_rule_prefers_lowest_group() {
        assert_eq!(choose(&[(3, 1.0), (1, 1.0 + 1e-13), (2, 2.0)]), Some((1, 1.0 + 1e-13)));
        assert_eq!(choose(&[(0, f64::INFINITY)]), None);
    }
}
