//! Candidate measurement model: image grid, voxel basis, coil sensitivities and the
//! Cartesian k-space candidates grouped into simultaneously acquired sets.
//!
//! Conventions used throughout the crate:
//! - voxels are ordered row-major, `n = n1 * N2 + n2`, with centers at `n_d * fov_d / N_d`;
//! - k-space locations are ordered row-major over the candidate grid, the location with
//!   grid index `i_d` has signed frequency index `m_d = i_d - floor(nk_d / 2)` and sits
//!   at `k_d = m_d * N_d / (nk_d * fov_d)` cycles/mm;
//! - candidate row `p = location * n_coils + coil`;
//! - every index (rows, locations, groups, map sets) is zero-based.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub dims: [usize; 2],
    /// Field of view in millimeters.
    pub fov: [f64; 2],
}

impl ImageGrid {
    pub fn new(dims: [usize; 2], fov: [f64; 2]) -> Result<Self> {
        if dims[0] == 0 || dims[1] == 0 {
            return Err(Error::invalid(format!("zero-sized grid {dims:?}")));
        }
        if !(fov[0] > 0.0 && fov[1] > 0.0) {
            return Err(Error::invalid(format!("field of view must be positive, got {fov:?}")));
        }
        Ok(ImageGrid { dims, fov })
    }

    /// Unit field of view per voxel, convenient for tests.
    pub fn square(n1: usize, n2: usize) -> Result<Self> {
        Self::new([n1, n2], [n1 as f64, n2 as f64])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_index(&self, n: usize) -> [usize; 2] {
        [n / self.dims[1], n % self.dims[1]]
    }

    pub fn voxel_center(&self, n: usize) -> [f64; 2] {
        let [n1, n2] = self.voxel_index(n);
        [
            n1 as f64 * self.fov[0] / self.dims[0] as f64,
            n2 as f64 * self.fov[1] / self.dims[1] as f64,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoxelBasis {
    #[default]
    Dirac,
    Rect,
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

impl VoxelBasis {
    /// Weight `b_pn` for a candidate at `k` (cycles/mm); independent of the voxel.
    pub fn weight(&self, grid: &ImageGrid, k: [f64; 2]) -> f64 {
        match self {
            VoxelBasis::Dirac => 1.0,
            VoxelBasis::Rect => {
                sinc(k[0] * grid.fov[0] / grid.dims[0] as f64) * sinc(k[1] * grid.fov[1] / grid.dims[1] as f64)
            }
        }
    }
}

/// Cartesian candidate locations and their acquisition groups.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Candidate grid size along each axis.
    pub kgrid: [usize; 2],
    /// k-space step along each axis, cycles/mm.
    pub spacing: [f64; 2],
    pub oversampling: f64,
    pub n_coils: usize,
    /// Which axes are undersampled (the others are acquired as full readouts).
    pub undersampled: [bool; 2],
    groups: Vec<Vec<usize>>,
    group_of_location: Vec<usize>,
}

impl CandidateSet {
    pub fn n_locations(&self) -> usize {
        self.kgrid[0] * self.kgrid[1]
    }

    /// Total candidate count `P`.
    pub fn n_rows(&self) -> usize {
        self.n_locations() * self.n_coils
    }

    /// Group count `L`.
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Common group cardinality `C`.
    pub fn group_size(&self) -> usize {
        self.groups[0].len()
    }

    /// Candidate rows of group `l`, ascending.
    pub fn group(&self, l: usize) -> &[usize] {
        &self.groups[l]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_of_location(&self, loc: usize) -> usize {
        self.group_of_location[loc]
    }

    pub fn location_of_row(&self, p: usize) -> usize {
        p / self.n_coils
    }

    pub fn coil_of_row(&self, p: usize) -> usize {
        p % self.n_coils
    }

    /// Distinct locations covered by group `l`, ascending.
    pub fn group_locations(&self, l: usize) -> Vec<usize> {
        self.groups[l]
            .iter()
            .step_by(self.n_coils)
            .map(|&p| self.location_of_row(p))
            .collect()
    }

    pub fn grid_index(&self, loc: usize) -> [usize; 2] {
        [loc / self.kgrid[1], loc % self.kgrid[1]]
    }

    /// Signed frequency index `m` of a location.
    pub fn frequency_index(&self, loc: usize) -> [i64; 2] {
        let [i1, i2] = self.grid_index(loc);
        [
            i1 as i64 - (self.kgrid[0] / 2) as i64,
            i2 as i64 - (self.kgrid[1] / 2) as i64,
        ]
    }

    /// k-space coordinate (cycles/mm) of a location.
    pub fn kloc(&self, loc: usize) -> [f64; 2] {
        let m = self.frequency_index(loc);
        [m[0] as f64 * self.spacing[0], m[1] as f64 * self.spacing[1]]
    }

    /// Group-space coordinates used for distances between groups: the undersampled
    /// grid indices of the group's location(s).
    pub fn group_coordinates(&self, l: usize) -> Vec<f64> {
        let loc = self.location_of_row(self.groups[l][0]);
        let idx = self.grid_index(loc);
        (0..2)
            .filter(|&a| self.undersampled[a])
            .map(|a| idx[a] as f64)
            .collect()
    }
}

/// Builds the Cartesian candidate set for `grid`.
///
/// With a single undersampled axis every group is a full readout line (all locations
/// sharing that axis index) across all coils; with both axes undersampled every group
/// is one location across all coils.
pub fn build_cartesian_candidates(
    grid: &ImageGrid,
    oversampling: f64,
    undersample_dims: &[usize],
    n_coils: usize,
) -> Result<CandidateSet> {
    if grid.dims[0] == 0 || grid.dims[1] == 0 {
        return Err(Error::invalid("zero-sized grid"));
    }
    if !(oversampling >= 1.0) || !oversampling.is_finite() {
        return Err(Error::invalid(format!("oversampling must be >= 1, got {oversampling}")));
    }
    if n_coils == 0 {
        return Err(Error::invalid("at least one coil is required"));
    }
    if undersample_dims.is_empty() {
        return Err(Error::invalid("no undersampled axis given"));
    }
    let mut undersampled = [false; 2];
    for &a in undersample_dims {
        if a > 1 {
            return Err(Error::invalid(format!("axis {a} out of range for a 2D grid")));
        }
        undersampled[a] = true;
    }

    // a singleton axis has a single frequency however finely it is sampled
    let oversample = |n: usize| {
        if n == 1 {
            1
        } else {
            (oversampling * n as f64 - 1e-9).ceil() as usize
        }
    };
    let kgrid = [oversample(grid.dims[0]), oversample(grid.dims[1])];
    let spacing = [
        grid.dims[0] as f64 / (kgrid[0] as f64 * grid.fov[0]),
        grid.dims[1] as f64 / (kgrid[1] as f64 * grid.fov[1]),
    ];
    let n_loc = kgrid[0] * kgrid[1];

    let group_of_location: Vec<usize> = (0..n_loc)
        .map(|loc| {
            let (i1, i2) = (loc / kgrid[1], loc % kgrid[1]);
            match undersampled {
                [true, true] => loc,
                [true, false] => i1,
                [false, true] => i2,
                [false, false] => unreachable!(),
            }
        })
        .collect();
    let n_groups = match undersampled {
        [true, true] => n_loc,
        [true, false] => kgrid[0],
        _ => kgrid[1],
    };
    let mut groups = vec![Vec::new(); n_groups];
    for (loc, &g) in group_of_location.iter().enumerate() {
        groups[g].extend((0..n_coils).map(|c| loc * n_coils + c));
    }

    Ok(CandidateSet {
        kgrid,
        spacing,
        oversampling,
        n_coils,
        undersampled,
        groups,
        group_of_location,
    })
}

/// Smooth synthetic receive sensitivities, shape `n_coils x N`.
///
/// Coil `c` is a Gaussian lobe centered on the FOV boundary at angle
/// `2*pi*c/n_coils + offset` with magnitude `exp(-decay * d^2)`, `d` the distance in
/// FOV-normalized units, times a linear phase ramp. The seed sets the angular offset,
/// the ramps and small per-coil gains. Maps are scaled to unit mean sum-of-squares; a
/// single coil is the constant unit map.
pub fn synthesize_coil_maps(grid: &ImageGrid, n_coils: usize, decay: f64, seed: u64) -> Result<Array2<C64>> {
    if n_coils == 0 {
        return Err(Error::invalid("n_coils must be >= 1"));
    }
    if !(decay > 0.0) {
        return Err(Error::invalid(format!("decay must be positive, got {decay}")));
    }
    let n = grid.len();
    if n_coils == 1 {
        return Ok(Array2::from_elem((1, n), C64::new(1.0, 0.0)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(-0.5..0.5) * 2.0 * PI / n_coils as f64;
    let mut maps = Array2::<C64>::zeros((n_coils, n));
    for c in 0..n_coils {
        let theta = 2.0 * PI * c as f64 / n_coils as f64 + offset;
        let center = [0.5 + 0.5 * theta.cos(), 0.5 + 0.5 * theta.sin()];
        let gain = 1.0 + 0.1 * rng.random_range(-1.0..1.0);
        let ramp = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let phase0 = rng.random_range(0.0..2.0 * PI);
        for v in 0..n {
            let [n1, n2] = grid.voxel_index(v);
            let x = (n1 as f64 + 0.5) / grid.dims[0] as f64;
            let y = (n2 as f64 + 0.5) / grid.dims[1] as f64;
            let d2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
            let mag = gain * (-decay * d2).exp();
            let phase = phase0 + PI * (ramp[0] * x + ramp[1] * y);
            maps[(c, v)] = C64::from_polar(mag, phase);
        }
    }
    let mean_sos = maps.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
    maps.mapv_inplace(|z| z / mean_sos.sqrt());
    Ok(maps)
}

/// Sum-of-squares magnitude of a map set at every voxel.
pub fn sum_of_squares(maps: &Array2<C64>) -> Array1<f64> {
    maps.map_axis(ndarray::Axis(0), |col| col.iter().map(|z| z.norm_sqr()).sum())
}

/// Everything needed to evaluate candidate rows `a_p^t`. Noise is white with unit
/// variance.
#[derive(Debug, Clone)]
pub struct EncodingModel {
    pub grid: ImageGrid,
    pub basis: VoxelBasis,
    /// One `n_coils x N` array per representative map set.
    pub coil_maps: Vec<Array2<C64>>,
    pub candidates: CandidateSet,
}

impl EncodingModel {
    pub fn new(
        grid: ImageGrid,
        basis: VoxelBasis,
        coil_maps: Vec<Array2<C64>>,
        candidates: CandidateSet,
    ) -> Result<Self> {
        if coil_maps.is_empty() {
            return Err(Error::invalid("at least one coil-map set is required"));
        }
        for (t, maps) in coil_maps.iter().enumerate() {
            if maps.dim() != (candidates.n_coils, grid.len()) {
                return Err(Error::invalid(format!(
                    "coil-map set {t} has shape {:?}, expected ({}, {})",
                    maps.dim(),
                    candidates.n_coils,
                    grid.len()
                )));
            }
        }
        Ok(EncodingModel {
            grid,
            basis,
            coil_maps,
            candidates,
        })
    }

    /// Single unit coil, Dirac voxels.
    pub fn single_channel(grid: ImageGrid, candidates: CandidateSet) -> Result<Self> {
        let maps = Array2::from_elem((candidates.n_coils, grid.len()), C64::new(1.0, 0.0));
        Self::new(grid, VoxelBasis::Dirac, vec![maps], candidates)
    }

    pub fn n_map_sets(&self) -> usize {
        self.coil_maps.len()
    }

    /// Basis weight of a candidate location.
    pub fn location_weight(&self, loc: usize) -> f64 {
        self.basis.weight(&self.grid, self.candidates.kloc(loc))
    }

    /// Writes candidate row `p` for map set `t` into `out` (length N).
    pub fn fill_row(&self, p: usize, t: usize, out: &mut [C64]) {
        let loc = self.candidates.location_of_row(p);
        let coil = self.candidates.coil_of_row(p);
        let k = self.candidates.kloc(loc);
        let b = self.location_weight(loc);
        let maps = &self.coil_maps[t];
        for (n, o) in out.iter_mut().enumerate() {
            let r = self.grid.voxel_center(n);
            let phase = -2.0 * PI * (k[0] * r[0] + k[1] * r[1]);
            *o = maps[(coil, n)] * b * C64::from_polar(1.0, phase);
        }
    }

    /// Candidate row `a_p^t`, entry `n` equal to `c_p^t(r_n) b_pn exp(-i 2 pi k_p . r_n)`.
    pub fn candidate_row(&self, p: usize, t: usize) -> Result<Array1<C64>> {
        if p >= self.candidates.n_rows() {
            return Err(Error::invalid(format!(
                "row {p} out of range (P = {})",
                self.candidates.n_rows()
            )));
        }
        if t >= self.coil_maps.len() {
            return Err(Error::invalid(format!(
                "map set {t} out of range (T = {})",
                self.coil_maps.len()
            )));
        }
        let mut row = Array1::zeros(self.grid.len());
        self.fill_row(p, t, row.as_slice_mut().expect("contiguous"));
        Ok(row)
    }

    /// Dense stacked candidate matrix (P x N) for map set `t`. Small grids only.
    pub fn dense_matrix(&self, t: usize) -> Result<Array2<C64>> {
        let p = self.candidates.n_rows();
        let n = self.grid.len();
        let mut a = Array2::zeros((p, n));
        for (i, mut row) in a.outer_iter_mut().enumerate() {
            if t >= self.coil_maps.len() {
                return Err(Error::invalid("map set out of range"));
            }
            self.fill_row(i, t, row.as_slice_mut().expect("contiguous"));
        }
        Ok(a)
    }
}
