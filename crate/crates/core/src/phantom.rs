//! Complex-valued ellipse phantoms used as exemplars and test subjects.
//!
//! Normalized coordinates run over `[-1, 1)` on each axis with the origin at voxel
//! `N_d / 2`, so a phantom symmetric about the origin satisfies
//! `f[n] = f[(N - n) mod N]` along both axes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::ImageGrid;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    /// Center in normalized (axis 0, axis 1) coordinates.
    pub center: [f64; 2],
    /// Semi-axes along the rotated axis 0 and axis 1.
    pub axes: [f64; 2],
    /// Rotation in degrees.
    pub angle: f64,
    /// Additive intensity inside the ellipse.
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, u: [f64; 2]) -> bool {
        let (s, c) = self.angle.to_radians().sin_cos();
        let d = [u[0] - self.center[0], u[1] - self.center[1]];
        let l0 = d[0] * c + d[1] * s;
        let l1 = -d[0] * s + d[1] * c;
        (l0 / self.axes[0]).powi(2) + (l1 / self.axes[1]).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseModel {
    None,
    LinearRamp,
    #[default]
    SmoothPolynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub grid: ImageGrid,
    pub ellipses: Vec<Ellipse>,
    #[serde(default)]
    pub phase: PhaseModel,
    /// Seeds the subject-to-subject jitter of ellipses, phase and texture.
    #[serde(default)]
    pub perturbation_seed: u64,
    /// Scale of the seed-driven jitter; 0 renders the nominal phantom.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Relative amplitude of a smooth multiplicative texture field.
    #[serde(default)]
    pub texture: Option<f64>,
}

fn default_jitter() -> f64 {
    1.0
}

/// Modified Shepp-Logan ellipses in (axis 0 = rows, downward; axis 1 = columns).
pub fn shepp_logan_ellipses() -> Vec<Ellipse> {
    // (x, y, a, b, angle, intensity) with x along columns and y upward
    let table: [(f64, f64, f64, f64, f64, f64); 10] = [
        (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
        (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
        (0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
        (-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
        (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
        (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
        (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
        (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
        (0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
        (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
    ];
    table
        .iter()
        .map(|&(x, y, a, b, angle, intensity)| Ellipse {
            center: [-y, x],
            axes: [b, a],
            angle,
            intensity,
        })
        .collect()
}

impl PhantomSpec {
    /// Modified Shepp-Logan phantom with smooth phase and mild texture.
    pub fn shepp_logan(grid: ImageGrid, perturbation_seed: u64) -> Self {
        PhantomSpec {
            grid,
            ellipses: shepp_logan_ellipses(),
            phase: PhaseModel::SmoothPolynomial,
            perturbation_seed,
            jitter: 1.0,
            texture: Some(0.05),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ellipses.is_empty() {
            return Err(Error::invalid("a phantom needs at least one ellipse"));
        }
        if self.ellipses.iter().any(|e| !(e.axes[0] > 0.0 && e.axes[1] > 0.0)) {
            return Err(Error::invalid("ellipse semi-axes must be positive"));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::invalid("jitter must be non-negative"));
        }
        Ok(())
    }
}

fn normalized(grid: &ImageGrid, n: usize) -> [f64; 2] {
    let [i, j] = grid.voxel_index(n);
    let h = [grid.dims[0] as f64 / 2.0, grid.dims[1] as f64 / 2.0];
    [(i as f64 - h[0]) / h[0], (j as f64 - h[1]) / h[1]]
}

fn sym(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

/// Renders the phantom with 4 x 4 supersampled ellipse edges; magnitudes are clamped
/// to `[0, 1]`.
pub fn render_phantom(spec: &PhantomSpec) -> Result<Vec<C64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.perturbation_seed);
    let j = spec.jitter;
    let ellipses: Vec<Ellipse> = spec
        .ellipses
        .iter()
        .map(|e| {
            let draws = [
                sym(&mut rng),
                sym(&mut rng),
                sym(&mut rng),
                sym(&mut rng),
                sym(&mut rng),
                sym(&mut rng),
            ];
            Ellipse {
                center: [e.center[0] + 0.005 * j * draws[0], e.center[1] + 0.005 * j * draws[1]],
                axes: [
                    e.axes[0] * (1.0 + 0.01 * j * draws[2]),
                    e.axes[1] * (1.0 + 0.01 * j * draws[3]),
                ],
                angle: e.angle + j * draws[4],
                intensity: e.intensity * (1.0 + 0.025 * j * draws[5]),
            }
        })
        .collect();

    let poly: [f64; 5] = {
        let nominal = [0.6, -0.4, 0.5, 0.3, -0.35];
        let mut out = nominal;
        for c in out.iter_mut() {
            *c *= 1.0 + 0.1 * j * sym(&mut rng);
        }
        out
    };
    // low-frequency cosines, at most 3 cycles across the field of view
    let waves: Vec<([f64; 2], f64)> = (0..6)
        .map(|_| {
            let f = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
            (f, rng.random_range(0.0..2.0 * PI))
        })
        .collect();

    let grid = &spec.grid;
    // 4 x 4 sub-voxel samples, symmetric about the voxel center
    let sub = [-0.375, -0.125, 0.125, 0.375];
    let offsets: Vec<[f64; 2]> = sub.iter().flat_map(|&a| sub.iter().map(move |&b| [a, b])).collect();
    let step = [2.0 / grid.dims[0] as f64, 2.0 / grid.dims[1] as f64];
    let out = (0..grid.len())
        .map(|n| {
            let u = normalized(grid, n);
            let mut mag: f64 = ellipses
                .iter()
                .map(|e| {
                    let hits = offsets
                        .iter()
                        .filter(|o| e.contains([u[0] + o[0] * step[0], u[1] + o[1] * step[1]]))
                        .count();
                    e.intensity * hits as f64 / offsets.len() as f64
                })
                .sum();
            if let Some(amp) = spec.texture {
                if mag > 0.0 {
                    let field: f64 = waves
                        .iter()
                        .map(|(f, ph)| (PI * (f[0] * u[0] + f[1] * u[1]) + ph).cos())
                        .sum::<f64>()
                        / waves.len() as f64;
                    mag *= 1.0 + amp * field;
                }
            }
            let mag = mag.clamp(0.0, 1.0);
            let phase = match spec.phase {
                PhaseModel::None => 0.0,
                PhaseModel::LinearRamp => PI * 0.5 * (poly[0] * u[0] + poly[1] * u[1]),
                PhaseModel::SmoothPolynomial => {
                    PI * 0.5
                        * (poly[0] * u[0]
                            + poly[1] * u[1]
                            + poly[2] * u[0] * u[0]
                            + poly[3] * u[0] * u[1]
                            + poly[4] * u[1] * u[1])
                }
            };
            C64::from_polar(mag, phase)
        })
        .collect();
    Ok(out)
}
