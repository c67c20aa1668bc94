//! Oracle (support-constrained) CRB matrices, Sherman-Morrison-Woodbury group
//! downdates and the oracle least-squares estimator.
//!
//! For an exemplar support `U` and coil-map set `t`, the restricted candidate rows are
//! `b_p = a_p^t Psi^H U` (length S) and the bound on the nonzero coefficients is
//! `(sum_p b_p^H b_p)^{-1}`. Deleting a group with stacked rows `B` updates it as
//! `C + G (I - B G)^{-1} G^H` with `G = C B^H`.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::encoding::EncodingModel;
use crate::linalg::{self, conj_t, hermitize, real_trace, MAX_CONDITION};
use crate::sparsity::SupportSet;
use crate::wavelet::Wavelet2d;
use crate::{Error, Result, C64};

pub use crate::linalg::MAX_CONDITION as CONDITION_LIMIT;

#[derive(Debug, Clone)]
pub struct CrbState {
    /// Inverse of the restricted Gram matrix of the active candidates (S x S).
    pub inv_gram: Array2<C64>,
    pub trace: f64,
    /// Exemplar index.
    pub k: usize,
    /// Coil-map set index.
    pub t: usize,
    pub active_groups: BTreeSet<usize>,
    /// Largest eigenvalue of the Gram matrix the state was built from. Removing
    /// candidates can only shrink the Gram, so this bounds every later Gram norm.
    pub gram_norm: f64,
    /// Condition number of the Gram: exact when built, `gram_norm * trace` (an upper
    /// bound) after downdates.
    pub condition: f64,
}

impl CrbState {
    /// Builds a state by inverting an explicit restricted Gram matrix.
    pub fn from_gram(gram: &Array2<C64>, k: usize, t: usize, active_groups: BTreeSet<usize>) -> Result<Self> {
        let inv = linalg::invert_gram(gram)?;
        let trace = real_trace(&inv.inverse);
        Ok(CrbState {
            trace,
            gram_norm: inv.largest(),
            condition: inv.condition(),
            inv_gram: inv.inverse,
            k,
            t,
            active_groups,
        })
    }

    pub fn support_size(&self) -> usize {
        self.inv_gram.nrows()
    }
}

/// Stacked restricted rows `B~ = B Psi^H U` of one candidate group.
#[derive(Debug, Clone)]
pub struct GroupBlock {
    pub b_tilde: Array2<C64>,
    pub group: usize,
    pub t: usize,
    pub k: usize,
}

impl GroupBlock {
    pub fn new(
        model: &EncodingModel,
        support: &SupportSet,
        wavelet: &Wavelet2d,
        k: usize,
        t: usize,
        group: usize,
    ) -> Result<Self> {
        if group >= model.candidates.n_groups() {
            return Err(Error::invalid(format!("group {group} out of range")));
        }
        let b_tilde = restricted_rows(model, support, wavelet, t, model.candidates.group(group))?;
        Ok(GroupBlock { b_tilde, group, t, k })
    }
}

/// Restricted rows for candidate indices `rows` under map set `t`, one row each.
pub fn restricted_rows(
    model: &EncodingModel,
    support: &SupportSet,
    wavelet: &Wavelet2d,
    t: usize,
    rows: &[usize],
) -> Result<Array2<C64>> {
    let n = model.grid.len();
    if wavelet.dims() != model.grid.dims {
        return Err(Error::invalid("transform and encoding grids differ"));
    }
    if t >= model.n_map_sets() {
        return Err(Error::invalid(format!("map set {t} out of range")));
    }
    let p_total = model.candidates.n_rows();
    if let Some(&bad) = rows.iter().find(|&&p| p >= p_total) {
        return Err(Error::invalid(format!("candidate row {bad} out of range")));
    }
    let s = support.len();
    let mut out = Array2::<C64>::zeros((rows.len(), s));
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(s.max(1))
        .zip(rows.par_iter())
        .for_each_init(
            || vec![C64::new(0.0, 0.0); n],
            |buf, (dst, &p)| {
                model.fill_row(p, t, buf);
                for z in buf.iter_mut() {
                    *z = z.conj();
                }
                wavelet.forward_inplace(buf).expect("length checked");
                for (d, &q) in dst.iter_mut().zip(support.indices()) {
                    *d = buf[q].conj();
                }
            },
        );
    Ok(out)
}

/// CRB state using every candidate of the listed groups.
pub fn build_crb_for_groups(
    model: &EncodingModel,
    support: &SupportSet,
    wavelet: &Wavelet2d,
    k: usize,
    t: usize,
    groups: &[usize],
) -> Result<CrbState> {
    let cs = &model.candidates;
    if let Some(&bad) = groups.iter().find(|&&g| g >= cs.n_groups()) {
        return Err(Error::invalid(format!("group {bad} out of range")));
    }
    let rows: Vec<usize> = groups.iter().flat_map(|&g| cs.group(g).iter().copied()).collect();
    if support.len() > rows.len() {
        return Err(Error::infeasible(format!(
            "support size {} exceeds the {} available measurements",
            support.len(),
            rows.len()
        )));
    }
    let b = restricted_rows(model, support, wavelet, t, &rows)?;
    let g = linalg::gram(&b.view());
    CrbState::from_gram(&g, k, t, groups.iter().copied().collect())
}

/// CRB state for the full candidate set.
pub fn build_full_crb(
    model: &EncodingModel,
    support: &SupportSet,
    wavelet: &Wavelet2d,
    k: usize,
    t: usize,
) -> Result<CrbState> {
    let all: Vec<usize> = (0..model.candidates.n_groups()).collect();
    build_crb_for_groups(model, support, wavelet, k, t, &all)
}

/// Intermediate products of a downdate: `G = C B^H` and `M = (I - B G)^{-1}`.
pub(crate) struct Downdate {
    pub g: Array2<C64>,
    pub m: Array2<C64>,
}

fn check_block(state: &CrbState, block: &GroupBlock) -> Result<()> {
    if block.b_tilde.ncols() != state.support_size() {
        return Err(Error::invalid(format!(
            "block has {} columns, state has S = {}",
            block.b_tilde.ncols(),
            state.support_size()
        )));
    }
    if !state.active_groups.contains(&block.group) {
        return Err(Error::invalid(format!("group {} is not active", block.group)));
    }
    Ok(())
}

pub(crate) fn downdate_parts(state: &CrbState, b_tilde: &ArrayView2<C64>) -> Result<(CrbState, Downdate)> {
    let g = state.inv_gram.dot(&conj_t(b_tilde));
    let mut h1 = b_tilde.dot(&g);
    hermitize(&mut h1);
    let m = linalg::inner_inverse(&h1)
        .ok_or_else(|| Error::infeasible("removing the group makes the Gram matrix singular"))?;
    let mut inv_gram = &state.inv_gram + &g.dot(&m).dot(&conj_t(&g.view()));
    hermitize(&mut inv_gram);
    let trace = real_trace(&inv_gram);
    let condition = state.gram_norm * trace;
    if !(condition <= MAX_CONDITION) {
        return Err(Error::infeasible(format!(
            "removing the group leaves a near-singular Gram (condition bound {condition:.3e})"
        )));
    }
    let next = CrbState {
        inv_gram,
        trace,
        k: state.k,
        t: state.t,
        active_groups: state.active_groups.clone(),
        gram_norm: state.gram_norm,
        condition,
    };
    Ok((next, Downdate { g, m }))
}

/// State after deleting `block`'s group from the candidate set.
pub fn smw_downdate(state: &CrbState, block: &GroupBlock) -> Result<CrbState> {
    check_block(state, block)?;
    let (mut next, _) = downdate_parts(state, &block.b_tilde.view())?;
    next.active_groups.remove(&block.group);
    Ok(next)
}

/// Trace increment `Trace[G (I - B G)^{-1} G^H]` from `h1 = B C B^H` and
/// `h2 = B C^2 B^H`; `None` when the deletion is not identifiable.
pub(crate) fn trace_after(state_trace: f64, gram_norm: f64, h1: &Array2<C64>, h2: &Array2<C64>) -> f64 {
    match linalg::downdate_increment(h1, h2) {
        Some(inc) => {
            let trace = state_trace + inc;
            if trace.is_finite() && gram_norm * trace <= MAX_CONDITION {
                trace
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    }
}

/// Trace of the CRB after deleting `block`'s group, without forming the S x S update.
/// Returns `+inf` when the group cannot be removed.
pub fn downdate_trace(state: &CrbState, block: &GroupBlock) -> Result<f64> {
    check_block(state, block)?;
    let x = block.b_tilde.dot(&state.inv_gram);
    let mut h1 = x.dot(&conj_t(&block.b_tilde.view()));
    hermitize(&mut h1);
    let mut h2 = x.dot(&conj_t(&x.view()));
    hermitize(&mut h2);
    Ok(trace_after(state.trace, state.gram_norm, &h1, &h2))
}

/// Columns of `Psi^H U`, i.e. the image-domain atoms of the support (N x S).
pub fn support_atoms(support: &SupportSet, wavelet: &Wavelet2d) -> Result<Array2<C64>> {
    let n = wavelet.len();
    let mut z = Array2::zeros((n, support.len()));
    for (j, &q) in support.indices().iter().enumerate() {
        let mut e = vec![C64::new(0.0, 0.0); n];
        e[q] = C64::new(1.0, 0.0);
        wavelet.inverse_inplace(&mut e)?;
        for (i, v) in e.into_iter().enumerate() {
            z[(i, j)] = v;
        }
    }
    Ok(z)
}

/// Zero-filled coefficient-domain bound `U C U^H` (Q x Q).
pub fn coefficient_domain_crb(state: &CrbState, support: &SupportSet, q: usize) -> Array2<C64> {
    let mut out = Array2::zeros((q, q));
    for (a, &i) in support.indices().iter().enumerate() {
        for (b, &j) in support.indices().iter().enumerate() {
            out[(i, j)] = state.inv_gram[(a, b)];
        }
    }
    out
}

/// Image-domain bound `Psi^H U C U^H Psi` (N x N), formed explicitly.
pub fn image_domain_crb(state: &CrbState, support: &SupportSet, wavelet: &Wavelet2d) -> Result<Array2<C64>> {
    let z = support_atoms(support, wavelet)?;
    Ok(z.dot(&state.inv_gram).dot(&conj_t(&z.view())))
}

pub fn image_domain_crb_trace(state: &CrbState, support: &SupportSet, wavelet: &Wavelet2d) -> Result<f64> {
    Ok(real_trace(&image_domain_crb(state, support, wavelet)?))
}

/// Oracle least-squares estimate on the support, zero-filled to length `q`.
///
/// `rows` stacks the restricted measurement rows (M x S) that produced `data`.
pub fn oracle_lsq_estimate(data: &[C64], rows: &ArrayView2<C64>, support: &SupportSet, q: usize) -> Result<Vec<C64>> {
    if rows.nrows() != data.len() {
        return Err(Error::invalid(format!(
            "{} data samples for {} rows",
            data.len(),
            rows.nrows()
        )));
    }
    if rows.ncols() != support.len() {
        return Err(Error::invalid("row width does not match the support size"));
    }
    if rows.nrows() < rows.ncols() {
        return Err(Error::infeasible("fewer measurements than unknowns"));
    }
    let g = linalg::gram(rows);
    let inv = linalg::invert_gram(&g)?;
    let rhs = conj_t(rows).dot(&ndarray::ArrayView1::from(data));
    let est = inv.inverse.dot(&rhs);
    Ok(support.embed(est.as_slice().expect("contiguous"), q))
}

/// Estimator matrix `(B^H B)^{-1} B^H`; applying it to many data vectors is the
/// oracle estimator without refactoring.
pub fn oracle_estimator_matrix(rows: &ArrayView2<C64>) -> Result<Array2<C64>> {
    if rows.nrows() < rows.ncols() {
        return Err(Error::infeasible("fewer measurements than unknowns"));
    }
    let inv = linalg::invert_gram(&linalg::gram(rows))?;
    Ok(inv.inverse.dot(&conj_t(rows)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{build_cartesian_candidates, ImageGrid};
    use crate::wavelet::TransformSpec;
    use ndarray::array;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn dft_model(n: usize) -> EncodingModel {
        let grid = ImageGrid::square(1, n).unwrap();
        let cs = build_cartesian_candidates(&grid, 1.0, &[1], 1).unwrap();
        EncodingModel::single_channel(grid, cs).unwrap()
    }

    fn identity_state(s: usize) -> CrbState {
        CrbState::from_gram(&Array2::eye(s).mapv(c), 0, 0, [0].into_iter().collect()).unwrap()
    }

    #[test]
    fn zero_block_leaves_state_unchanged() {
        let mut state = identity_state(3);
        state.active_groups = [0, 4].into_iter().collect();
        let block = GroupBlock {
            b_tilde: Array2::zeros((2, 3)),
            group: 4,
            t: 0,
            k: 0,
        };
        let next = smw_downdate(&state, &block).unwrap();
        assert_eq!(next.inv_gram, state.inv_gram);
        assert_eq!(next.trace, state.trace);
        assert_eq!(next.active_groups, [0].into_iter().collect());
        assert_eq!(downdate_trace(&state, &block).unwrap(), state.trace);
    }

    #[test]
    fn rank_one_downdate_matches_sherman_morrison() {
        let gram = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]].mapv(c);
        let u = array![[0.3, -0.4, 0.1]].mapv(c);
        let mut state = CrbState::from_gram(&gram, 0, 0, [0, 1].into_iter().collect()).unwrap();
        state.trace = real_trace(&state.inv_gram);
        let block = GroupBlock {
            b_tilde: u.clone(),
            group: 1,
            t: 0,
            k: 0,
        };
        let next = smw_downdate(&state, &block).unwrap();
        // oracle: direct inverse of gram - u^H u
        let reduced = &gram - &conj_t(&u.view()).dot(&u);
        let direct = crate::linalg::invert_gram(&reduced).unwrap().inverse;
        for (a, b) in next.inv_gram.iter().zip(direct.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        let tr = downdate_trace(&state, &block).unwrap();
        assert!((tr - next.trace).abs() < 1e-12 * next.trace);
    }

    #[test]
    fn full_dft_has_identity_over_n_bound() {
        let model = dft_model(4);
        let w = Wavelet2d::identity([1, 4]);
        let state = build_full_crb(&model, &SupportSet::full(4, "all"), &w, 0, 0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.25 } else { 0.0 };
                assert!((state.inv_gram[(i, j)] - c(want)).norm() < 1e-14);
            }
        }
        assert!((state.trace - 1.0).abs() < 1e-14);
    }

    #[test]
    fn more_unknowns_than_candidates_is_infeasible() {
        let grid = ImageGrid::square(4, 4).unwrap();
        let cs = build_cartesian_candidates(&grid, 1.0, &[0, 1], 1).unwrap();
        let model = EncodingModel::single_channel(grid, cs).unwrap();
        let w = Wavelet2d::new([4, 4], &TransformSpec::haar(1)).unwrap();
        let support = SupportSet::full(16, "all");
        let err = build_crb_for_groups(&model, &support, &w, 0, 0, &[0, 1, 2]).unwrap_err();
        assert!(err.is_infeasible());
        // the full set is fine and has trace S / N
        let full = build_full_crb(&model, &support, &w, 0, 0).unwrap();
        assert!((full.trace - 1.0).abs() < 1e-12);
    }

    #[test]
    fn removing_a_mandatory_group_is_reported() {
        // two candidates, two unknowns: removing either leaves a singular Gram
        let gram = Array2::eye(2).mapv(c);
        let state = CrbState::from_gram(&gram, 0, 0, [0, 1].into_iter().collect()).unwrap();
        let block = GroupBlock {
            b_tilde: array![[1.0, 0.0]].mapv(c),
            group: 0,
            t: 0,
            k: 0,
        };
        assert_eq!(downdate_trace(&state, &block).unwrap(), f64::INFINITY);
        assert!(smw_downdate(&state, &block).unwrap_err().is_infeasible());
    }

    #[test]
    fn inactive_group_is_rejected() {
        let state = identity_state(2);
        let block = GroupBlock {
            b_tilde: Array2::zeros((1, 2)),
            group: 7,
            t: 0,
            k: 0,
        };
        assert!(matches!(smw_downdate(&state, &block), Err(Error::InvalidArgument(_))));
        let wrong_width = GroupBlock {
            b_tilde: Array2::zeros((1, 3)),
            group: 0,
            t: 0,
            k: 0,
        };
        assert!(downdate_trace(&state, &wrong_width).is_err());
    }

    #[test]
    fn scalar_least_squares_on_a_single_coefficient() {
        let a = array![[C64::new(1.0, 2.0)], [C64::new(-0.5, 0.3)]];
        let d = [C64::new(0.4, -1.0), C64::new(2.0, 0.1)];
        let support = SupportSet::new(vec![2], 5, "one").unwrap();
        let est = oracle_lsq_estimate(&d, &a.view(), &support, 5).unwrap();
        let num: C64 = a.column(0).iter().zip(&d).map(|(x, y)| x.conj() * y).sum();
        let den: f64 = a.column(0).iter().map(|x| x.norm_sqr()).sum();
        assert!((est[2] - num / den).norm() < 1e-14);
        for i in [0, 1, 3, 4] {
            assert_eq!(est[i], c(0.0));
        }
    }
}
