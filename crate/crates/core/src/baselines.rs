//! Classical comparison patterns: uniform lattice, CAIPI-sheared lattice and
//! constant-density Poisson-disc sampling with a fully sampled center.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::CandidateSet;
use crate::pattern::SamplingPattern;
use crate::{Error, Result};

/// Bisection steps used to match the Poisson-disc sample budget.
pub const POISSON_BISECTIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Uniform,
    Caipi,
    PoissonDisc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    /// Target acceleration; for CAIPI this must equal `ry * rz`.
    #[serde(rename = "R")]
    pub acceleration: f64,
    /// Fully sampled center: lines (one undersampled axis) or block side (two).
    #[serde(default = "default_center")]
    pub center_block: usize,
    #[serde(default = "one")]
    pub ry: usize,
    #[serde(default = "one")]
    pub rz: usize,
    #[serde(default)]
    pub caipi_shift: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_center() -> usize {
    16
}

fn one() -> usize {
    1
}

impl BaselineSpec {
    pub fn uniform(acceleration: f64) -> Self {
        BaselineSpec {
            kind: BaselineKind::Uniform,
            acceleration,
            center_block: 0,
            ry: 1,
            rz: 1,
            caipi_shift: 0,
            seed: 0,
        }
    }

    pub fn caipi(ry: usize, rz: usize, shift: usize) -> Self {
        BaselineSpec {
            kind: BaselineKind::Caipi,
            acceleration: (ry * rz) as f64,
            center_block: 0,
            ry,
            rz,
            caipi_shift: shift,
            seed: 0,
        }
    }

    pub fn poisson_disc(acceleration: f64, center_block: usize, seed: u64) -> Self {
        BaselineSpec {
            kind: BaselineKind::PoissonDisc,
            acceleration,
            center_block,
            ry: 1,
            rz: 1,
            caipi_shift: 0,
            seed,
        }
    }

    /// Group budget `round(L / R)`.
    pub fn target_groups(&self, candidates: &CandidateSet) -> Result<usize> {
        target_groups(candidates.n_groups(), self.acceleration)
    }
}

/// `round(L / R)`, at least one.
pub fn target_groups(l: usize, acceleration: f64) -> Result<usize> {
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(Error::invalid(format!("acceleration must be >= 1, got {acceleration}")));
    }
    if acceleration > l as f64 {
        return Err(Error::invalid(format!(
            "acceleration {acceleration} exceeds the {l} candidate groups"
        )));
    }
    Ok(((l as f64 / acceleration).round() as usize).clamp(1, l))
}

/// Generates the pattern described by `spec`.
pub fn generate(spec: &BaselineSpec, candidates: &CandidateSet) -> Result<SamplingPattern> {
    match spec.kind {
        BaselineKind::Uniform => uniform_pattern(spec, candidates),
        BaselineKind::Caipi => caipi_pattern(spec, candidates),
        BaselineKind::PoissonDisc => {
            let m = spec.target_groups(candidates)?;
            poisson_disc_pattern(spec, candidates, m)
        }
    }
}

/// Evenly spread groups `round(i L / M)`, `i = 0..M`, `M = round(L / R)`; for integer
/// `R` dividing `L` this is every `R`-th group from group 0.
pub fn uniform_pattern(spec: &BaselineSpec, candidates: &CandidateSet) -> Result<SamplingPattern> {
    let l = candidates.n_groups();
    let m = spec.target_groups(candidates)?;
    let kept: Vec<usize> = (0..m).map(|i| ((i * l) as f64 / m as f64).round() as usize).collect();
    SamplingPattern::from_groups(candidates, kept, "uniform", Vec::new())
}

/// Sheared lattice over two undersampled axes: location `(ky, kz)` (grid indices) is kept
/// iff `ky = 0 mod Ry` and `kz = (ky / Ry) * shift mod Rz`.
pub fn caipi_pattern(spec: &BaselineSpec, candidates: &CandidateSet) -> Result<SamplingPattern> {
    if candidates.undersampled != [true, true] {
        return Err(Error::invalid("CAIPI sampling needs both axes undersampled"));
    }
    let (ry, rz) = (spec.ry, spec.rz);
    if ry == 0 || rz == 0 {
        return Err(Error::invalid("CAIPI factors must be positive"));
    }
    if ((ry * rz) as f64 - spec.acceleration).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "R = {} does not factor as Ry * Rz = {} * {}",
            spec.acceleration, ry, rz
        )));
    }
    let kept: Vec<usize> = (0..candidates.n_locations())
        .filter(|&loc| {
            let [ky, kz] = candidates.grid_index(loc);
            ky % ry == 0 && kz % rz == ((ky / ry) * spec.caipi_shift) % rz
        })
        .map(|loc| candidates.group_of_location(loc))
        .collect();
    SamplingPattern::from_groups(candidates, kept, "caipi", Vec::new())
}

/// Whether group `l` lies in the fully sampled center block.
fn in_center(candidates: &CandidateSet, l: usize, block: usize) -> bool {
    if block == 0 {
        return false;
    }
    let loc = candidates.group_locations(l)[0];
    let m = candidates.frequency_index(loc);
    let half = (block / 2) as i64;
    let lo = -half;
    let hi = block as i64 - half;
    (0..2).all(|a| !candidates.undersampled[a] || (m[a] >= lo && m[a] < hi))
}

/// Occupancy grid over group coordinates for minimum-distance queries.
struct Occupancy {
    cell: f64,
    shape: [usize; 2],
    cells: Vec<Vec<[f64; 2]>>,
}

impl Occupancy {
    fn new(extent: [f64; 2], radius: f64) -> Self {
        let cell = radius.max(1.0);
        let shape = [
            (extent[0] / cell).floor() as usize + 1,
            (extent[1] / cell).floor() as usize + 1,
        ];
        Occupancy {
            cell,
            shape,
            cells: vec![Vec::new(); shape[0] * shape[1]],
        }
    }

    fn index(&self, p: [f64; 2]) -> [usize; 2] {
        [
            ((p[0] / self.cell) as usize).min(self.shape[0] - 1),
            ((p[1] / self.cell) as usize).min(self.shape[1] - 1),
        ]
    }

    fn clear_of(&self, p: [f64; 2], radius: f64) -> bool {
        let reach = (radius / self.cell).ceil() as usize;
        let [c0, c1] = self.index(p);
        let r2 = radius * radius;
        for i in c0.saturating_sub(reach)..=(c0 + reach).min(self.shape[0] - 1) {
            for j in c1.saturating_sub(reach)..=(c1 + reach).min(self.shape[1] - 1) {
                for q in &self.cells[i * self.shape[1] + j] {
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                    if d2 < r2 {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, p: [f64; 2]) {
        let [i, j] = self.index(p);
        self.cells[i * self.shape[1] + j].push(p);
    }
}

fn coords2(candidates: &CandidateSet, l: usize) -> [f64; 2] {
    let c = candidates.group_coordinates(l);
    [c[0], c.get(1).copied().unwrap_or(0.0)]
}

/// Dart throwing in a fixed order with minimum distance `radius`; stops at `need`.
fn throw_darts(candidates: &CandidateSet, order: &[usize], radius: f64, need: usize) -> Vec<usize> {
    let side = candidates.kgrid[0].max(candidates.kgrid[1]) as f64;
    let extent = [side, side];
    let mut occ = Occupancy::new(extent, radius);
    let mut accepted = Vec::with_capacity(need);
    for &l in order {
        if accepted.len() == need {
            break;
        }
        let p = coords2(candidates, l);
        if occ.clear_of(p, radius) {
            occ.insert(p);
            accepted.push(l);
        }
    }
    accepted
}

/// Constant-density Poisson-disc pattern with `target_groups` groups, the center block
/// fully sampled. Candidates are visited in a seeded random order and accepted when at
/// least `r` away (in grid units) from every accepted non-center sample; `r` is the
/// largest radius, found by bisection, at which the budget is still met.
pub fn poisson_disc_pattern(
    spec: &BaselineSpec,
    candidates: &CandidateSet,
    target_groups: usize,
) -> Result<SamplingPattern> {
    let l = candidates.n_groups();
    if target_groups == 0 || target_groups > l {
        return Err(Error::invalid(format!(
            "target group count {target_groups} must lie in [1, {l}]"
        )));
    }
    let center: Vec<usize> = (0..l)
        .filter(|&g| in_center(candidates, g, spec.center_block))
        .collect();
    if target_groups < center.len() {
        return Err(Error::invalid(format!(
            "target of {target_groups} groups is smaller than the {} center groups",
            center.len()
        )));
    }
    let need = target_groups - center.len();
    let mut order: Vec<usize> = (0..l)
        .filter(|&g| !in_center(candidates, g, spec.center_block))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let tol = (0.01 * target_groups as f64).max(1.0);
    let diagonal = ((candidates.kgrid[0].pow(2) + candidates.kgrid[1].pow(2)) as f64).sqrt();
    let (mut lo, mut hi) = (0.0f64, diagonal + 1.0);
    let mut best = throw_darts(candidates, &order, lo, need);
    for _ in 0..POISSON_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let got = throw_darts(candidates, &order, mid, need);
        if got.len() == need {
            lo = mid;
            best = got;
        } else {
            hi = mid;
        }
    }
    if ((best.len() + center.len()) as f64 - target_groups as f64).abs() > tol {
        return Err(Error::GenerationFailure(format!(
            "Poisson-disc sampling reached {} of {target_groups} groups",
            best.len() + center.len()
        )));
    }
    let mut kept = center;
    kept.extend(best);
    SamplingPattern::from_groups(candidates, kept, "poisson-disc", Vec::new())
}

/// Minimum distance (grid units) between any two kept groups outside the center block.
pub fn min_noncenter_distance(pattern: &SamplingPattern, candidates: &CandidateSet, center_block: usize) -> f64 {
    let pts: Vec<[f64; 2]> = pattern
        .kept_groups
        .iter()
        .filter(|&&g| !in_center(candidates, g, center_block))
        .map(|&g| coords2(candidates, g))
        .collect();
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Picks the realization with the lowest score; ties go to the lowest seed.
pub fn best_of_realizations<F>(
    realizations: Vec<(u64, SamplingPattern)>,
    mut scorer: F,
) -> Result<(u64, SamplingPattern, f64)>
where
    F: FnMut(&SamplingPattern) -> Result<f64>,
{
    if realizations.is_empty() {
        return Err(Error::invalid("no realizations given"));
    }
    let mut best: Option<(u64, SamplingPattern, f64)> = None;
    for (seed, pattern) in realizations {
        let score = scorer(&pattern)?;
        if !score.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((s, _, v)) => score < *v || (score == *v && seed < *s),
        };
        if better {
            best = Some((seed, pattern, score));
        }
    }
    best.ok_or_else(|| Error::GenerationFailure("every realization scored +inf".into()))
}
