//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use oedipus_core::baselines::BaselineKind;
use oedipus_core::design::DesignObjective;
use oedipus_core::encoding::VoxelBasis;
use oedipus_core::recon::IrlsSettings;
use oedipus_core::wavelet::{TransformSpec, WaveletFamily};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    /// Output directory, relative to the config file unless absolute.
    pub output_dir: PathBuf,
    /// Offsets every derived noise seed.
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub coils: CoilConfig,
    #[serde(default)]
    pub exemplars: ExemplarConfig,
    #[serde(default)]
    pub transform: TransformConfig,
    pub design: DesignConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dims: [usize; 2],
    #[serde(default = "default_fov")]
    pub fov: [f64; 2],
    #[serde(default = "one_f64")]
    pub oversampling: f64,
    /// Undersampled axes (0 and/or 1).
    #[serde(default = "default_undersample")]
    pub undersample: Vec<usize>,
    #[serde(default)]
    pub basis: VoxelBasis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoilConfig {
    /// Channels of the multi-coil ("mco") model.
    pub channels: usize,
    pub decay: f64,
    /// One representative map set per seed.
    pub seeds: Vec<u64>,
}

impl Default for CoilConfig {
    fn default() -> Self {
        CoilConfig {
            channels: 4,
            decay: 6.0,
            seeds: vec![1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExemplarConfig {
    /// Phantom seeds whose supports drive the design.
    pub phantom_seeds: Vec<u64>,
    /// Support fraction `S / N`.
    pub fraction: f64,
}

impl Default for ExemplarConfig {
    fn default() -> Self {
        ExemplarConfig {
            phantom_seeds: vec![0],
            fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub family: WaveletFamily,
    pub levels: usize,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            family: WaveletFamily::Daubechies4,
            levels: 3,
        }
    }
}

impl TransformConfig {
    pub fn spec(&self) -> TransformSpec {
        TransformSpec::new(self.family, self.levels)
    }
}

/// Channel setting of a design: single unit coil or the configured coil array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sco,
    Mco,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Sco => "sco",
            Mode::Mco => "mco",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(rename = "R")]
    pub accelerations: Vec<f64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub objective: DesignObjective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaipiConfig {
    pub ry: usize,
    pub rz: usize,
    #[serde(default)]
    pub shift: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub kinds: Vec<BaselineKind>,
    /// Fully sampled center lines (1D) or block side (2D) of Poisson-disc patterns.
    pub center_block: usize,
    /// Poisson-disc realizations; seeds are `0..realizations`.
    pub realizations: u64,
    /// CAIPI factorization per acceleration; looked up by `ry * rz == R`.
    #[serde(default)]
    pub caipi: Vec<CaipiConfig>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            kinds: vec![BaselineKind::Uniform, BaselineKind::PoissonDisc],
            center_block: 16,
            realizations: 10,
            caipi: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerKind {
    WaveletL1,
    Tv,
}

impl RegularizerKind {
    pub fn label(&self) -> &'static str {
        match self {
            RegularizerKind::WaveletL1 => "wavelet-l1",
            RegularizerKind::Tv => "tv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    /// Test-subject phantom seeds (gold standards).
    pub phantom_seeds: Vec<u64>,
    /// Map set used to simulate multi-coil test data.
    pub coil_seed: u64,
    pub regularizers: Vec<RegularizerKind>,
    #[serde(flatten)]
    pub irls: IrlsSettings,
    /// Complex noise standard deviation per k-space sample.
    pub noise_sigma: f64,
    pub write_images: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            phantom_seeds: vec![100],
            coil_seed: 101,
            regularizers: vec![RegularizerKind::WaveletL1, RegularizerKind::Tv],
            irls: IrlsSettings::default(),
            noise_sigma: 0.0,
            write_images: true,
        }
    }
}

fn default_fov() -> [f64; 2] {
    [220.0, 220.0]
}

fn one_f64() -> f64 {
    1.0
}

fn default_undersample() -> Vec<usize> {
    vec![1]
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::Sco, Mode::Mco]
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; relative output directories are resolved against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.output_dir.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.grid.dims[0] == 0 || self.grid.dims[1] == 0 {
            return bad(format!("grid dims must be positive, got {:?}", self.grid.dims));
        }
        if self.grid.undersample.is_empty() || self.grid.undersample.iter().any(|&a| a > 1) {
            return bad("grid.undersample must list axes 0 and/or 1".into());
        }
        if self.design.accelerations.is_empty() {
            return bad("design.R must list at least one acceleration".into());
        }
        if self.design.accelerations.iter().any(|&r| !(r >= 1.0) || !r.is_finite()) {
            return bad("every acceleration must be >= 1".into());
        }
        if self.design.modes.is_empty() {
            return bad("design.modes must not be empty".into());
        }
        if self.exemplars.phantom_seeds.is_empty() {
            return bad("exemplars.phantom_seeds must not be empty".into());
        }
        if !(self.exemplars.fraction > 0.0 && self.exemplars.fraction <= 1.0) {
            return bad("exemplars.fraction must lie in (0, 1]".into());
        }
        if self.design.modes.contains(&Mode::Mco) {
            if self.coils.channels == 0 || self.coils.seeds.is_empty() {
                return bad("multi-coil designs need coils.channels >= 1 and at least one coil seed".into());
            }
            if !(self.coils.decay > 0.0) {
                return bad("coils.decay must be positive".into());
            }
        }
        let e = &self.evaluate;
        if e.phantom_seeds.is_empty() || e.regularizers.is_empty() {
            return bad("evaluate needs phantom seeds and regularizers".into());
        }
        if !(e.irls.lambda > 0.0) || e.irls.max_iters == 0 || e.irls.cg_max_iters == 0 {
            return bad("evaluate: lambda must be positive and iteration caps nonzero".into());
        }
        if !(e.noise_sigma >= 0.0) {
            return bad("evaluate.noise_sigma must be non-negative".into());
        }
        if self.baselines.kinds.contains(&BaselineKind::PoissonDisc) && self.baselines.realizations == 0 {
            return bad("baselines.realizations must be at least 1".into());
        }
        Ok(())
    }
}
