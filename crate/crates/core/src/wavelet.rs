//! Orthonormal multi-level 2D discrete wavelet transform with periodic boundaries.
//!
//! Coefficients use the Mallat layout: after each level the approximation band
//! occupies the top-left quarter of the current block and is transformed again.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    /// Four-tap Daubechies filter (two vanishing moments).
    Daubechies4,
    Haar,
}

impl WaveletFamily {
    pub fn lowpass(&self) -> Vec<f64> {
        match self {
            WaveletFamily::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            WaveletFamily::Daubechies4 => {
                let s = 4.0 * std::f64::consts::SQRT_2;
                vec![
                    (1.0 + SQRT3) / s,
                    (3.0 + SQRT3) / s,
                    (3.0 - SQRT3) / s,
                    (1.0 - SQRT3) / s,
                ]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub family: WaveletFamily,
    pub levels: usize,
}

impl TransformSpec {
    pub fn new(family: WaveletFamily, levels: usize) -> Self {
        TransformSpec { family, levels }
    }

    pub fn daubechies4(levels: usize) -> Self {
        Self::new(WaveletFamily::Daubechies4, levels)
    }

    pub fn haar(levels: usize) -> Self {
        Self::new(WaveletFamily::Haar, levels)
    }
}

/// A transform bound to grid dimensions.
#[derive(Debug, Clone)]
pub struct Wavelet2d {
    dims: [usize; 2],
    levels: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Wavelet2d {
    pub fn new(dims: [usize; 2], spec: &TransformSpec) -> Result<Self> {
        Self::from_lowpass(dims, spec.levels, spec.family.lowpass())
    }

    /// Builds the transform from an arbitrary lowpass filter; the highpass is its
    /// quadrature mirror. Only orthonormal filters give an orthonormal transform.
    pub fn from_lowpass(dims: [usize; 2], levels: usize, lo: Vec<f64>) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("wavelet levels must be >= 1"));
        }
        if lo.len() < 2 || !lo.len().is_multiple_of(2) {
            return Err(Error::invalid("lowpass filter must have an even number of taps"));
        }
        let block = 1usize << levels;
        if dims[0] == 0 || dims[1] == 0 || !dims[0].is_multiple_of(block) || !dims[1].is_multiple_of(block) {
            return Err(Error::invalid(format!("grid {dims:?} is not divisible by 2^{levels}")));
        }
        let taps = lo.len();
        let hi = (0..taps)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * lo[taps - 1 - j]
            })
            .collect();
        Ok(Wavelet2d { dims, levels, lo, hi })
    }

    /// The identity map, for dense cross-checks that need `Psi = I`.
    pub fn identity(dims: [usize; 2]) -> Self {
        Wavelet2d {
            dims,
            levels: 0,
            lo: vec![1.0],
            hi: vec![1.0],
        }
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::invalid(format!(
                "vector length {n} does not match grid {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    fn analyze(&self, x: &[C64], out: &mut [C64]) {
        let n = x.len();
        let half = n / 2;
        for k in 0..half {
            let mut a = C64::new(0.0, 0.0);
            let mut d = C64::new(0.0, 0.0);
            for (j, (&l, &h)) in self.lo.iter().zip(&self.hi).enumerate() {
                let v = x[(2 * k + j) % n];
                a += v * l;
                d += v * h;
            }
            out[k] = a;
            out[half + k] = d;
        }
    }

    fn synthesize(&self, x: &[C64], out: &mut [C64]) {
        let n = x.len();
        let half = n / 2;
        out.fill(C64::new(0.0, 0.0));
        for k in 0..half {
            let a = x[k];
            let d = x[half + k];
            for (j, (&l, &h)) in self.lo.iter().zip(&self.hi).enumerate() {
                out[(2 * k + j) % n] += a * l + d * h;
            }
        }
    }

    /// Applies `f` to every row and then every column of the top-left `rows x cols` block.
    fn block_pass(
        &self,
        data: &mut [C64],
        rows: usize,
        cols: usize,
        columns_first: bool,
        f: impl Fn(&Self, &[C64], &mut [C64]),
    ) {
        let stride = self.dims[1];
        let mut src = vec![C64::new(0.0, 0.0); rows.max(cols)];
        let mut dst = src.clone();
        let do_rows = |data: &mut [C64], src: &mut Vec<C64>, dst: &mut Vec<C64>| {
            for r in 0..rows {
                let line = &mut data[r * stride..r * stride + cols];
                src[..cols].copy_from_slice(line);
                f(self, &src[..cols], &mut dst[..cols]);
                line.copy_from_slice(&dst[..cols]);
            }
        };
        let do_cols = |data: &mut [C64], src: &mut Vec<C64>, dst: &mut Vec<C64>| {
            for c in 0..cols {
                for r in 0..rows {
                    src[r] = data[r * stride + c];
                }
                f(self, &src[..rows], &mut dst[..rows]);
                for r in 0..rows {
                    data[r * stride + c] = dst[r];
                }
            }
        };
        if columns_first {
            do_cols(data, &mut src, &mut dst);
            do_rows(data, &mut src, &mut dst);
        } else {
            do_rows(data, &mut src, &mut dst);
            do_cols(data, &mut src, &mut dst);
        }
    }

    pub fn forward_inplace(&self, data: &mut [C64]) -> Result<()> {
        self.check_len(data.len())?;
        let (mut rows, mut cols) = (self.dims[0], self.dims[1]);
        for _ in 0..self.levels {
            self.block_pass(data, rows, cols, false, Self::analyze);
            rows /= 2;
            cols /= 2;
        }
        Ok(())
    }

    pub fn inverse_inplace(&self, data: &mut [C64]) -> Result<()> {
        self.check_len(data.len())?;
        for level in (0..self.levels).rev() {
            let rows = self.dims[0] >> level;
            let cols = self.dims[1] >> level;
            self.block_pass(data, rows, cols, true, Self::synthesize);
        }
        Ok(())
    }

    pub fn forward(&self, image: &[C64]) -> Result<Vec<C64>> {
        let mut out = image.to_vec();
        self.forward_inplace(&mut out)?;
        Ok(out)
    }

    pub fn inverse(&self, coeffs: &[C64]) -> Result<Vec<C64>> {
        let mut out = coeffs.to_vec();
        self.inverse_inplace(&mut out)?;
        Ok(out)
    }
}

/// `c = Psi f` for an image on a `dims` grid.
pub fn forward_transform(image: &[C64], dims: [usize; 2], spec: &TransformSpec) -> Result<Vec<C64>> {
    Wavelet2d::new(dims, spec)?.forward(image)
}

/// `f = Psi^H c`.
pub fn inverse_transform(coeffs: &[C64], dims: [usize; 2], spec: &TransformSpec) -> Result<Vec<C64>> {
    Wavelet2d::new(dims, spec)?.inverse(coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(n: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn norm(v: &[C64]) -> f64 {
        v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn filters_are_orthonormal() {
        for fam in [WaveletFamily::Haar, WaveletFamily::Daubechies4] {
            let lo = fam.lowpass();
            let e: f64 = lo.iter().map(|x| x * x).sum();
            assert!((e - 1.0).abs() < 1e-15);
            assert!((lo.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs() < 1e-15);
            // even shifts are orthogonal
            if lo.len() == 4 {
                assert!((lo[0] * lo[2] + lo[1] * lo[3]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_image_has_no_detail() {
        let v = C64::new(0.7, -0.2);
        for levels in 1..=3 {
            let spec = TransformSpec::daubechies4(levels);
            let c = forward_transform(&vec![v; 64], [8, 8], &spec).unwrap();
            let a = 8 >> levels;
            for (q, z) in c.iter().enumerate() {
                let (r, col) = (q / 8, q % 8);
                if r < a && col < a {
                    assert!((z - v * 2f64.powi(levels as i32)).norm() < 1e-12);
                } else {
                    assert!(z.norm() < 1e-12, "detail coefficient {q} = {z}");
                }
            }
        }
    }

    #[test]
    fn one_level_haar_matches_block_butterflies() {
        for impulse in [0usize, 9, 27, 63] {
            let mut img = vec![C64::new(0.0, 0.0); 64];
            img[impulse] = C64::new(1.0, 0.0);
            let c = forward_transform(&img, [8, 8], &TransformSpec::haar(1)).unwrap();
            // direct 2x2 butterflies: block (i, j) covers rows 2i..2i+1, cols 2j..2j+1
            let px = |r: usize, col: usize| img[r * 8 + col];
            for i in 0..4 {
                for j in 0..4 {
                    let (a, b, cc, d) = (
                        px(2 * i, 2 * j),
                        px(2 * i, 2 * j + 1),
                        px(2 * i + 1, 2 * j),
                        px(2 * i + 1, 2 * j + 1),
                    );
                    let ll = (a + b + cc + d) * 0.5;
                    let lh = (a - b + cc - d) * 0.5; // detail along rows (second axis)
                    let hl = (a + b - cc - d) * 0.5; // detail along columns
                    let hh = (a - b - cc + d) * 0.5;
                    assert!((c[i * 8 + j] - ll).norm() < 1e-14);
                    assert!((c[i * 8 + j + 4] - lh).norm() < 1e-14);
                    assert!((c[(i + 4) * 8 + j] - hl).norm() < 1e-14);
                    assert!((c[(i + 4) * 8 + j + 4] - hh).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn parseval_and_perfect_reconstruction() {
        for (dims, spec) in [
            ([8, 8], TransformSpec::daubechies4(3)),
            ([16, 8], TransformSpec::daubechies4(2)),
            ([64, 64], TransformSpec::daubechies4(3)),
            ([8, 8], TransformSpec::haar(3)),
        ] {
            let w = Wavelet2d::new(dims, &spec).unwrap();
            for seed in 0..1000 {
                let f = random_image(dims[0] * dims[1], seed);
                let c = w.forward(&f).unwrap();
                let nf = norm(&f);
                assert!((norm(&c) - nf).abs() <= 1e-12 * nf);
                let g = w.inverse(&c).unwrap();
                let err: Vec<C64> = f.iter().zip(&g).map(|(a, b)| a - b).collect();
                assert!(norm(&err) <= 1e-12 * nf);
                if dims[0] * dims[1] > 1000 && seed > 20 {
                    break;
                }
            }
        }
    }

    #[test]
    fn zero_coefficients_give_zero_image() {
        let out = inverse_transform(&vec![C64::new(0.0, 0.0); 64], [8, 8], &TransformSpec::daubechies4(2)).unwrap();
        assert!(out.iter().all(|z| z.norm() == 0.0));
    }

    /// Direct filter-bank synthesis: upsample-by-two and periodic convolution, one
    /// axis at a time, written independently of the in-place block code.
    fn upsample_lowpass(a: &[f64], lo: &[f64]) -> Vec<f64> {
        let n = 2 * a.len();
        let mut out = vec![0.0; n];
        for t in 0..n {
            for (j, &h) in lo.iter().enumerate() {
                // out[t] = sum_k a[k] h[t - 2k mod n]
                let k2 = (t + n * lo.len() - j) % n;
                if k2.is_multiple_of(2) {
                    out[t] += a[k2 / 2] * h;
                }
            }
        }
        out
    }

    #[test]
    fn approximation_atom_matches_filter_bank_synthesis() {
        let spec = TransformSpec::daubechies4(2);
        let mut coeffs = vec![C64::new(0.0, 0.0); 256];
        coeffs[16 + 2] = C64::new(1.0, 0.0); // approximation band is 4x4
        let img = inverse_transform(&coeffs, [16, 16], &spec).unwrap();

        let lo = WaveletFamily::Daubechies4.lowpass();
        let mut ax0 = vec![0.0; 4];
        ax0[1] = 1.0;
        let mut ax1 = vec![0.0; 4];
        ax1[2] = 1.0;
        for _ in 0..2 {
            ax0 = upsample_lowpass(&ax0, &lo);
            ax1 = upsample_lowpass(&ax1, &lo);
        }
        for r in 0..16 {
            for c in 0..16 {
                let want = ax0[r] * ax1[c];
                assert!((img[r * 16 + c] - C64::new(want, 0.0)).norm() < 1e-13);
            }
        }
        let total: f64 = img.iter().map(|z| z.re).sum();
        assert!(total > 0.0);
    }

    #[test]
    fn rejects_indivisible_grids() {
        assert!(Wavelet2d::new([12, 8], &TransformSpec::daubechies4(3)).is_err());
        assert!(Wavelet2d::new([8, 8], &TransformSpec::daubechies4(0)).is_err());
        let w = Wavelet2d::new([8, 8], &TransformSpec::haar(1)).unwrap();
        assert!(w.forward(&[C64::new(0.0, 0.0); 10]).is_err());
    }
}
