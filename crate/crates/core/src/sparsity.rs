//! Exemplar supports in the wavelet domain and support-restricted measurement rows.

use serde::{Deserialize, Serialize};

use crate::wavelet::{TransformSpec, Wavelet2d};
use crate::{Error, Result, C64};

/// Transform-domain support `U_k` of one exemplar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSet {
    #[serde(rename = "S")]
    size: usize,
    indices: Vec<usize>,
    pub source_label: String,
}

impl SupportSet {
    /// Sorts and validates `indices` against the coefficient count `q`.
    pub fn new(mut indices: Vec<usize>, q: usize, source_label: impl Into<String>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("support indices must be unique"));
        }
        if let Some(&last) = indices.last() {
            if last >= q {
                return Err(Error::invalid(format!("support index {last} out of range (Q = {q})")));
            }
        }
        Ok(SupportSet {
            size: indices.len(),
            indices,
            source_label: source_label.into(),
        })
    }

    pub fn full(q: usize, source_label: impl Into<String>) -> Self {
        SupportSet {
            size: q,
            indices: (0..q).collect(),
            source_label: source_label.into(),
        }
    }

    /// Sparsity level `S`.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Zero-fills `values` (length S) into a length-`q` coefficient vector.
    pub fn embed(&self, values: &[C64], q: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); q];
        for (&i, &v) in self.indices.iter().zip(values) {
            out[i] = v;
        }
        out
    }

    pub fn gather(&self, coeffs: &[C64]) -> Vec<C64> {
        self.indices.iter().map(|&i| coeffs[i]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: SupportSet = serde_json::from_str(s)?;
        if raw.size != raw.indices.len() {
            return Err(Error::Format(format!(
                "support declares S = {} but lists {} indices",
                raw.size,
                raw.indices.len()
            )));
        }
        let q = raw.indices.iter().max().map_or(0, |m| m + 1);
        SupportSet::new(raw.indices, q, raw.source_label)
    }

    /// Jaccard overlap `|A n B| / |A u B|`.
    pub fn jaccard(&self, other: &SupportSet) -> f64 {
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        let (a, b) = (&self.indices, &other.indices);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = a.len() + b.len() - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Number of coefficients kept for a fraction of `q`.
pub fn support_size(fraction: f64, q: usize) -> usize {
    ((fraction * q as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Indices of the `ceil(fraction * Q)` largest-magnitude entries of `coeffs`, ties going
/// to the lower index.
pub fn largest_magnitudes(coeffs: &[C64], fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let keep = support_size(fraction, coeffs.len());
    let mut order: Vec<usize> = (0..coeffs.len()).collect();
    // stable sort keeps index order among equal magnitudes
    order.sort_by(|&a, &b| coeffs[b].norm().total_cmp(&coeffs[a].norm()));
    order.truncate(keep);
    order.sort_unstable();
    Ok(order)
}

/// Hard-thresholds the wavelet coefficients of `image`, keeping the largest fraction.
pub fn extract_support(
    image: &[C64],
    dims: [usize; 2],
    spec: &TransformSpec,
    fraction: f64,
    source_label: impl Into<String>,
) -> Result<SupportSet> {
    let coeffs = Wavelet2d::new(dims, spec)?.forward(image)?;
    let indices = largest_magnitudes(&coeffs, fraction)?;
    SupportSet::new(indices, coeffs.len(), source_label)
}

/// `(row Psi^H) U`, computed as `conj(Psi conj(row))` gathered on the support.
pub fn restricted_row_with(row: &[C64], support: &SupportSet, wavelet: &Wavelet2d) -> Result<Vec<C64>> {
    let mut buf: Vec<C64> = row.iter().map(|z| z.conj()).collect();
    wavelet.forward_inplace(&mut buf)?;
    Ok(support.indices().iter().map(|&i| buf[i].conj()).collect())
}

pub fn restricted_row(row: &[C64], support: &SupportSet, dims: [usize; 2], spec: &TransformSpec) -> Result<Vec<C64>> {
    restricted_row_with(row, support, &Wavelet2d::new(dims, spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    /// Explicit transform matrix, column j = Psi e_j.
    fn dense_psi(dims: [usize; 2], spec: &TransformSpec) -> Array2<C64> {
        let w = Wavelet2d::new(dims, spec).unwrap();
        let n = dims[0] * dims[1];
        let mut psi = Array2::zeros((n, n));
        for j in 0..n {
            let mut e = vec![c(0.0); n];
            e[j] = c(1.0);
            let col = w.forward(&e).unwrap();
            for i in 0..n {
                psi[(i, j)] = col[i];
            }
        }
        psi
    }

    #[test]
    fn fraction_one_keeps_everything() {
        let img: Vec<C64> = (0..64).map(|i| c(i as f64)).collect();
        let s = extract_support(&img, [8, 8], &TransformSpec::haar(1), 1.0, "x").unwrap();
        assert_eq!(s.len(), 64);
        assert_eq!(s.indices(), (0..64).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn fifteen_percent_of_4096_is_615() {
        assert_eq!(support_size(0.15, 4096), 615);
        assert_eq!(support_size(0.5, 4), 2);
        assert_eq!(support_size(1.0, 7), 7);
    }

    #[test]
    fn threshold_picks_largest_with_low_index_ties() {
        let coeffs = [c(2.0), c(-4.0), c(1.0), c(3.0)];
        assert_eq!(largest_magnitudes(&coeffs, 0.5).unwrap(), vec![1, 3]);
        let tied = [c(1.0), c(2.0), C64::new(0.0, 2.0), c(2.0)];
        assert_eq!(largest_magnitudes(&tied, 0.5).unwrap(), vec![1, 2]);
        assert!(largest_magnitudes(&coeffs, 0.0).is_err());
        assert!(largest_magnitudes(&coeffs, 1.5).is_err());
    }

    #[test]
    fn support_invariant_to_global_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img: Vec<C64> = (0..256).map(|_| C64::new(rng.random(), rng.random())).collect();
        let spec = TransformSpec::daubechies4(2);
        let a = extract_support(&img, [16, 16], &spec, 0.2, "a").unwrap();
        let rot = C64::from_polar(1.0, 1.234);
        let img2: Vec<C64> = img.iter().map(|z| z * rot).collect();
        let b = extract_support(&img2, [16, 16], &spec, 0.2, "b").unwrap();
        assert_eq!(a.indices(), b.indices());
    }

    #[test]
    fn thresholding_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coeffs: Vec<C64> = (0..50).map(|_| c(rng.random())).collect();
        let mut perm: Vec<usize> = (0..50).collect();
        perm.reverse();
        perm.swap(3, 17);
        let permuted: Vec<C64> = perm.iter().map(|&i| coeffs[i]).collect();
        let a = largest_magnitudes(&coeffs, 0.3).unwrap();
        let mut b: Vec<usize> = largest_magnitudes(&permuted, 0.3)
            .unwrap()
            .into_iter()
            .map(|j| perm[j])
            .collect();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn restricted_transform_row_is_canonical_vector() {
        let dims = [8, 8];
        let spec = TransformSpec::daubechies4(3);
        let psi = dense_psi(dims, &spec);
        let full = SupportSet::full(64, "all");
        for j in [0usize, 5, 33, 63] {
            let row: Vec<C64> = psi.row(j).to_vec();
            let r = restricted_row(&row, &full, dims, &spec).unwrap();
            for (i, z) in r.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((z - c(want)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn restricted_row_matches_dense_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (dims, spec) in [
            ([8, 8], TransformSpec::daubechies4(3)),
            ([16, 16], TransformSpec::daubechies4(3)),
            ([16, 8], TransformSpec::haar(2)),
        ] {
            let n = dims[0] * dims[1];
            let psi = dense_psi(dims, &spec);
            let psi_h = psi.t().mapv(|z| z.conj());
            let support = SupportSet::new((0..n).filter(|i| i % 3 == 1).collect(), n, "s").unwrap();
            let row: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let dense = ndarray::Array1::from(row.clone()).dot(&psi_h);
            let got = restricted_row(&row, &support, dims, &spec).unwrap();
            for (k, &q) in support.indices().iter().enumerate() {
                assert!((got[k] - dense[q]).norm() < 1e-12);
            }
            let zero = restricted_row(&vec![c(0.0); n], &support, dims, &spec).unwrap();
            assert!(zero.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn json_layout() {
        let s = SupportSet::new(vec![5, 1, 3], 8, "exemplar-0").unwrap();
        let js = s.to_json().unwrap();
        assert_eq!(js, r#"{"S":3,"indices":[1,3,5],"source_label":"exemplar-0"}"#);
        assert_eq!(SupportSet::from_json(&js).unwrap(), s);
        assert!(SupportSet::from_json(r#"{"S":2,"indices":[1],"source_label":""}"#).is_err());
        assert!(SupportSet::new(vec![1, 1], 4, "").is_err());
        assert!(SupportSet::new(vec![4], 4, "").is_err());
    }
}
