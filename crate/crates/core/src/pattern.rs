//! Sampling patterns: retained groups, their k-space mask, and file formats.
//!
//! JSON layout:
//! `{"grid": [n1, n2], "R": float, "mode": str, "kept_groups": [int], "mask": [int], "log": [float]}`
//! where `mask` lists alternating run lengths over the row-major location mask,
//! starting with a run of unsampled locations (possibly of length zero).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoding::CandidateSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPattern {
    /// k-space candidate grid dimensions.
    pub grid: [usize; 2],
    /// Acceleration `L_initial / |kept_groups|`.
    #[serde(rename = "R")]
    pub acceleration: f64,
    /// Provenance label, e.g. `sbs-average`, `uniform`, `poisson-disc`.
    pub mode: String,
    pub kept_groups: Vec<usize>,
    #[serde(with = "rle")]
    pub mask: Vec<bool>,
    /// Objective value after every deletion (designed patterns only).
    pub log: Vec<f64>,
}

impl SamplingPattern {
    pub fn from_groups(
        candidates: &CandidateSet,
        mut kept_groups: Vec<usize>,
        mode: impl Into<String>,
        log: Vec<f64>,
    ) -> Result<Self> {
        kept_groups.sort_unstable();
        kept_groups.dedup();
        if kept_groups.is_empty() {
            return Err(Error::invalid("a pattern must keep at least one group"));
        }
        let l = candidates.n_groups();
        if let Some(&bad) = kept_groups.iter().find(|&&g| g >= l) {
            return Err(Error::invalid(format!("group {bad} out of range (L = {l})")));
        }
        let mut mask = vec![false; candidates.n_locations()];
        for &g in &kept_groups {
            for loc in candidates.group_locations(g) {
                mask[loc] = true;
            }
        }
        Ok(SamplingPattern {
            grid: candidates.kgrid,
            acceleration: l as f64 / kept_groups.len() as f64,
            mode: mode.into(),
            kept_groups,
            mask,
            log,
        })
    }

    /// Every group kept.
    pub fn full(candidates: &CandidateSet) -> Self {
        Self::from_groups(candidates, (0..candidates.n_groups()).collect(), "full", Vec::new())
            .expect("non-empty candidate set")
    }

    /// Measurement count `M = |kept| * C`.
    pub fn measurements(&self, candidates: &CandidateSet) -> usize {
        self.kept_groups.len() * candidates.group_size()
    }

    /// Checks that the pattern was made for this candidate set.
    pub fn check_compatible(&self, candidates: &CandidateSet) -> Result<()> {
        if self.grid != candidates.kgrid {
            return Err(Error::invalid(format!(
                "pattern grid {:?} does not match candidate grid {:?}",
                self.grid, candidates.kgrid
            )));
        }
        if let Some(&bad) = self.kept_groups.iter().find(|&&g| g >= candidates.n_groups()) {
            return Err(Error::invalid(format!("pattern keeps unknown group {bad}")));
        }
        Ok(())
    }

    /// Kept locations in ascending order.
    pub fn kept_locations(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// Fraction of kept locations falling in the central region that holds a quarter
    /// of all candidate locations: the central quarter of lines for one undersampled
    /// axis, the central half of each axis for two.
    pub fn central_fraction(&self, candidates: &CandidateSet) -> f64 {
        let n_axes = candidates.undersampled.iter().filter(|&&u| u).count();
        let share = if n_axes == 1 { 0.25 } else { 0.5 };
        let in_center = |loc: usize| {
            let m = candidates.frequency_index(loc);
            (0..2).all(|a| {
                if !candidates.undersampled[a] {
                    return true;
                }
                let half_width = (share * candidates.kgrid[a] as f64 / 2.0).round() as i64;
                m[a] >= -half_width && m[a] < half_width
            })
        };
        let kept = self.kept_locations();
        if kept.is_empty() {
            return 0.0;
        }
        kept.iter().filter(|&&l| in_center(l)).count() as f64 / kept.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: SamplingPattern = serde_json::from_str(s)?;
        if p.mask.len() != p.grid[0] * p.grid[1] {
            return Err(Error::Format(format!(
                "mask covers {} locations, grid {:?} has {}",
                p.mask.len(),
                p.grid,
                p.grid[0] * p.grid[1]
            )));
        }
        Ok(p)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Binary PGM (P5) of the mask: sampled locations white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.grid[1], self.grid[0]).into_bytes();
        out.extend(self.mask.iter().map(|&m| if m { 255u8 } else { 0 }));
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }
}

/// Writes a grayscale P5 image from magnitudes scaled into [0, 255] by `window`.
pub fn write_magnitude_pgm(path: &Path, dims: [usize; 2], values: &[f64], window: f64) -> Result<()> {
    if values.len() != dims[0] * dims[1] {
        return Err(Error::invalid("image size does not match dims"));
    }
    let scale = if window > 0.0 { 255.0 / window } else { 0.0 };
    let mut out = format!("P5\n{} {}\n255\n", dims[1], dims[0]).into_bytes();
    out.extend(values.iter().map(|v| (v * scale).round().clamp(0.0, 255.0) as u8));
    std::fs::write(path, out)?;
    Ok(())
}

mod rle {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn encode(mask: &[bool]) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &m in mask {
            if m == current {
                len += 1;
            } else {
                runs.push(len);
                current = m;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn decode(runs: &[usize]) -> Vec<bool> {
        let mut out = Vec::with_capacity(runs.iter().sum());
        for (i, &r) in runs.iter().enumerate() {
            out.extend(std::iter::repeat_n(i % 2 == 1, r));
        }
        out
    }

    pub fn serialize<S: Serializer>(mask: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(encode(mask))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let runs = Vec::<usize>::deserialize(d)?;
        Ok(decode(&runs))
    }
}
