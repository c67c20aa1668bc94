#![allow(dead_code)]

use ndarray::Array2;
use oedipus_core::wavelet::Wavelet2d;
use oedipus_core::C64;

/// Dense `N x N` transform matrix, column `j` = transform of the unit image `e_j`.
pub fn dense_wavelet(w: &Wavelet2d) -> Array2<C64> {
    let n = w.len();
    let mut out = Array2::zeros((n, n));
    for j in 0..n {
        let mut e = vec![C64::new(0.0, 0.0); n];
        e[j] = C64::new(1.0, 0.0);
        for (i, v) in w.forward(&e).unwrap().into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

pub fn conj_t(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// Gauss-Jordan inverse with partial pivoting; panics on an exactly singular matrix.
pub fn gauss_jordan_inverse(a: &Array2<C64>) -> Array2<C64> {
    try_gauss_jordan_inverse(a).expect("singular matrix")
}

/// Gauss-Jordan inverse, `None` when a pivot falls below `1e-12` of the largest entry.
pub fn try_gauss_jordan_inverse(a: &Array2<C64>) -> Option<Array2<C64>> {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::from_shape_fn((n, n), |(i, j)| C64::new(if i == j { 1.0 } else { 0.0 }, 0.0));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[(x, col)].norm().total_cmp(&m[(y, col)].norm()))
            .unwrap();
        if !(m[(pivot, col)].norm() > 1e-12 * scale) {
            return None;
        }
        for j in 0..n {
            m.swap((col, j), (pivot, j));
            inv.swap((col, j), (pivot, j));
        }
        let p = m[(col, col)];
        for j in 0..n {
            m[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[(i, col)];
                if f != C64::new(0.0, 0.0) {
                    for j in 0..n {
                        let (mv, iv) = (m[(col, j)], inv[(col, j)]);
                        m[(i, j)] -= f * mv;
                        inv[(i, j)] -= f * iv;
                    }
                }
            }
        }
    }
    Some(inv)
}

pub fn rel_frob(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
    let n: f64 = b.iter().map(|z| z.norm_sqr()).sum();
    (d / n).sqrt()
}

pub fn trace_re(a: &Array2<C64>) -> f64 {
    a.diag().iter().map(|z| z.re).sum()
}
