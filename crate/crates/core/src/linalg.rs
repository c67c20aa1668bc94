use ndarray::{Array1, Array2, ArrayView2, ShapeBuilder};
use ndarray_linalg::{Eigh, InverseC, UPLO};

use crate::{Error, Result, C64};

/// Gram matrices with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

pub fn conj_t(a: &ArrayView2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj()).as_standard_layout().into_owned()
}

/// Column-major copy. LAPACK routines read row-major complex input as its transpose,
/// which for a Hermitian matrix is its conjugate.
fn column_major(a: &Array2<C64>) -> Array2<C64> {
    let mut out = Array2::zeros(a.dim().f());
    out.assign(a);
    out
}

pub fn hermitize(a: &mut Array2<C64>) {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = avg;
            a[(j, i)] = avg.conj();
        }
    }
}

pub fn real_trace(a: &Array2<C64>) -> f64 {
    a.diag().iter().map(|z| z.re).sum()
}

/// `a^H a`.
pub fn gram(a: &ArrayView2<C64>) -> Array2<C64> {
    let mut g = conj_t(a).dot(a);
    hermitize(&mut g);
    g
}

pub struct HermitianInverse {
    pub inverse: Array2<C64>,
    pub eigenvalues: Array1<f64>,
}

impl HermitianInverse {
    pub fn condition(&self) -> f64 {
        let max = self.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn largest(&self) -> f64 {
        self.eigenvalues.iter().cloned().fold(0.0, f64::max)
    }
}

/// Inverts a Hermitian positive-definite matrix through its eigendecomposition and
/// rejects it when the condition number exceeds [`MAX_CONDITION`].
pub fn invert_gram(g: &Array2<C64>) -> Result<HermitianInverse> {
    let n = g.nrows();
    if n == 0 {
        return Ok(HermitianInverse {
            inverse: Array2::zeros((0, 0)),
            eigenvalues: Array1::zeros(0),
        });
    }
    let (eigenvalues, vecs) = column_major(g)
        .eigh(UPLO::Lower)
        .map_err(|e| Error::infeasible(format!("eigendecomposition failed: {e}")))?;
    let out = HermitianInverse {
        inverse: Array2::zeros((0, 0)),
        eigenvalues,
    };
    let cond = out.condition();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::infeasible(format!(
            "Gram matrix is near-singular (condition number {cond:.3e})"
        )));
    }
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
        let s = 1.0 / out.eigenvalues[j];
        col.mapv_inplace(|z| z * s);
    }
    let mut inverse = scaled.dot(&conj_t(&vecs.view()));
    hermitize(&mut inverse);
    Ok(HermitianInverse { inverse, ..out })
}

/// `Trace[(I - h1)^{-1} h2]`, or `None` when `I - h1` is not positive definite.
pub fn downdate_increment(h1: &Array2<C64>, h2: &Array2<C64>) -> Option<f64> {
    let c = h1.nrows();
    if c == 1 {
        let denom = 1.0 - h1[(0, 0)].re;
        if !(denom > 0.0) {
            return None;
        }
        let v = h2[(0, 0)].re / denom;
        return v.is_finite().then_some(v);
    }
    let mut inner = -h1.clone();
    for i in 0..c {
        inner[(i, i)] += 1.0;
    }
    hermitize(&mut inner);
    let inv = column_major(&inner).invc().ok()?;
    let mut tr = 0.0;
    for i in 0..c {
        for j in 0..c {
            tr += (inv[(i, j)] * h2[(j, i)]).re;
        }
    }
    tr.is_finite().then_some(tr)
}

/// `(I - h1)^{-1}` for a Hermitian `h1`, or `None` when not positive definite.
pub fn inner_inverse(h1: &Array2<C64>) -> Option<Array2<C64>> {
    let c = h1.nrows();
    let mut inner = -h1.clone();
    for i in 0..c {
        inner[(i, i)] += 1.0;
    }
    hermitize(&mut inner);
    if c == 1 {
        let d = inner[(0, 0)].re;
        return (d > 0.0).then(|| Array2::from_elem((1, 1), C64::new(1.0 / d, 0.0)));
    }
    let mut inv = column_major(&inner).invc().ok()?;
    hermitize(&mut inv);
    Some(inv)
}
