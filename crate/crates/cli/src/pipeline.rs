//! Design, baseline and evaluation pipelines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use oedipus_core::baselines::{self, BaselineKind, BaselineSpec};
use oedipus_core::container::Oedm;
use oedipus_core::design::{self, DesignOptions};
use oedipus_core::encoding::{
    build_cartesian_candidates, synthesize_coil_maps, CandidateSet, EncodingModel, ImageGrid,
};
use oedipus_core::pattern::{write_magnitude_pgm, SamplingPattern};
use oedipus_core::phantom::{render_phantom, PhantomSpec};
use oedipus_core::recon::{
    add_noise, irls_solve, nrmse, restrict_full_data, EncodingOperator, ReconProblem, Regularizer,
};
use oedipus_core::sparsity::{extract_support, SupportSet};
use oedipus_core::wavelet::Wavelet2d;
use oedipus_core::C64;

use crate::config::{Mode, RegularizerKind, RunConfig};
use crate::CliError;

pub const REPORT_VERSION_LINE: &str = "# oedipus-report v1";

/// `2` for integral accelerations, `2.5` otherwise.
pub fn r_label(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{}", r as u64)
    } else {
        format!("{r}")
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn remove_if_present(path: &Path) -> Result<(), CliError> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(io_err(path, e)),
    }
}

/// Shared state derived from a config: grid, transform and exemplar supports.
pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub grid: ImageGrid,
    pub wavelet: Wavelet2d,
    pub exemplars: Vec<(u64, Vec<C64>)>,
    pub supports: Vec<SupportSet>,
}

impl<'a> Context<'a> {
    pub fn new(cfg: &'a RunConfig) -> Result<Self, CliError> {
        let config_err = |e: oedipus_core::Error| CliError::Config(e.to_string());
        let grid = ImageGrid::new(cfg.grid.dims, cfg.grid.fov).map_err(config_err)?;
        let spec = cfg.transform.spec();
        let wavelet = Wavelet2d::new(grid.dims, &spec).map_err(config_err)?;
        let mut exemplars = Vec::new();
        let mut supports = Vec::new();
        for &seed in &cfg.exemplars.phantom_seeds {
            let image = render_phantom(&PhantomSpec::shepp_logan(grid, seed))?;
            supports.push(extract_support(
                &image,
                grid.dims,
                &spec,
                cfg.exemplars.fraction,
                format!("phantom-s{seed}"),
            )?);
            exemplars.push((seed, image));
        }
        Ok(Context {
            cfg,
            grid,
            wavelet,
            exemplars,
            supports,
        })
    }

    fn channels(&self, mode: Mode) -> usize {
        match mode {
            Mode::Sco => 1,
            Mode::Mco => self.cfg.coils.channels,
        }
    }

    pub fn candidates(&self, mode: Mode) -> Result<CandidateSet, CliError> {
        build_cartesian_candidates(
            &self.grid,
            self.cfg.grid.oversampling,
            &self.cfg.grid.undersample,
            self.channels(mode),
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }

    fn model(&self, mode: Mode, coil_seeds: &[u64]) -> Result<EncodingModel, CliError> {
        let cs = self.candidates(mode)?;
        let maps = match mode {
            Mode::Sco => vec![Array2::from_elem((1, self.grid.len()), C64::new(1.0, 0.0))],
            Mode::Mco => coil_seeds
                .iter()
                .map(|&s| synthesize_coil_maps(&self.grid, self.cfg.coils.channels, self.cfg.coils.decay, s))
                .collect::<Result<_, _>>()?,
        };
        Ok(EncodingModel::new(self.grid, self.cfg.grid.basis, maps, cs)?)
    }

    /// Model whose representative map sets drive the design.
    pub fn design_model(&self, mode: Mode) -> Result<EncodingModel, CliError> {
        self.model(mode, &self.cfg.coils.seeds)
    }

    /// Model used to simulate test acquisitions.
    pub fn test_model(&self, mode: Mode) -> Result<EncodingModel, CliError> {
        self.model(mode, &[self.cfg.evaluate.coil_seed])
    }

    fn write_exemplars(&self) -> Result<(), CliError> {
        let dir = self.cfg.output_dir.join("exemplars");
        create_dir(&dir)?;
        for ((seed, image), support) in self.exemplars.iter().zip(&self.supports) {
            Oedm::image(self.grid, image)?.write(&dir.join(format!("phantom_s{seed}.oedm")))?;
            write_file(
                &dir.join(format!("support_s{seed}.json")),
                support.to_json()?.as_bytes(),
            )?;
        }
        Ok(())
    }

    fn write_maps(&self, model: &EncodingModel, name: &str) -> Result<(), CliError> {
        let dir = self.cfg.output_dir.join("coils");
        create_dir(&dir)?;
        let o = Oedm {
            grid: self.grid,
            sets: model.coil_maps.clone(),
        };
        Ok(o.write(&dir.join(name))?)
    }
}

pub fn patterns_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("patterns")
}

pub fn design_stem(mode: Mode, r: f64) -> String {
    format!("{}_R{}", mode.label(), r_label(r))
}

pub fn baseline_stem(kind: BaselineKind, r: f64, seed: Option<u64>) -> String {
    let name = match kind {
        BaselineKind::Uniform => "uniform",
        BaselineKind::Caipi => "caipi",
        BaselineKind::PoissonDisc => "poisson-disc",
    };
    match seed {
        Some(s) => format!("{name}_R{}_s{s}", r_label(r)),
        None => format!("{name}_R{}", r_label(r)),
    }
}

fn write_design_log(path: &Path, initial: f64, removal_order: &[usize], log: &[f64]) -> Result<(), CliError> {
    let mut text = String::from("iteration,removed_group,objective\n");
    text.push_str(&format!("0,,{initial}\n"));
    for (i, (g, v)) in removal_order.iter().zip(log).enumerate() {
        text.push_str(&format!("{},{g},{v}\n", i + 1));
    }
    write_file(path, text.as_bytes())
}

pub fn cmd_design(cfg: &RunConfig) -> Result<(), CliError> {
    let ctx = Context::new(cfg)?;
    ctx.write_exemplars()?;
    let dir = patterns_dir(cfg);
    create_dir(&dir)?;
    let mut infeasible = Vec::new();
    for &mode in &cfg.design.modes {
        let model = ctx.design_model(mode)?;
        if mode == Mode::Mco {
            ctx.write_maps(&model, "design_maps.oedm")?;
        }
        let l = model.candidates.n_groups();
        for &r in &cfg.design.accelerations {
            let stem = design_stem(mode, r);
            let target = baselines::target_groups(l, r).map_err(|e| CliError::Config(e.to_string()))?;
            let options = DesignOptions {
                mode_label: Some(format!("sbs-{}-{}", mode.label(), cfg.design.objective.label())),
                ..Default::default()
            };
            let marker = dir.join(format!("{stem}.infeasible"));
            let outputs = ["json", "pgm"].map(|ext| dir.join(format!("{stem}.{ext}")));
            let log_path = dir.join(format!("{stem}_log.csv"));
            match design::sbs_design_with(
                &model,
                &ctx.supports,
                &ctx.wavelet,
                cfg.design.objective,
                target,
                &options,
            ) {
                Ok(rep) => {
                    remove_if_present(&marker)?;
                    rep.pattern.write_json(&outputs[0])?;
                    rep.pattern.write_pgm(&outputs[1])?;
                    write_design_log(&log_path, rep.initial_objective, &rep.removal_order, &rep.pattern.log)?;
                    println!(
                        "{stem}: kept {} of {l} groups, objective {:.6e}, central fraction {:.3}",
                        rep.pattern.kept_groups.len(),
                        rep.pattern.log.last().copied().unwrap_or(rep.initial_objective),
                        rep.pattern.central_fraction(&model.candidates)
                    );
                }
                Err(e) if e.is_infeasible() => {
                    for p in outputs.iter().chain([&log_path]) {
                        remove_if_present(p)?;
                    }
                    write_file(&marker, format!("{e}\n").as_bytes())?;
                    eprintln!("{stem}: infeasible acceleration: {e}");
                    infeasible.push(stem);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    if infeasible.is_empty() {
        Ok(())
    } else {
        Err(CliError::Infeasible(infeasible.join(", ")))
    }
}

fn caipi_spec(cfg: &RunConfig, r: f64) -> Result<BaselineSpec, CliError> {
    cfg.baselines
        .caipi
        .iter()
        .find(|c| (c.ry * c.rz) as f64 == r)
        .map(|c| BaselineSpec::caipi(c.ry, c.rz, c.shift))
        .ok_or_else(|| CliError::Config(format!("no CAIPI factorization configured for R = {r}")))
}

pub fn cmd_baseline(cfg: &RunConfig) -> Result<(), CliError> {
    let ctx = Context::new(cfg)?;
    let cs = ctx.candidates(Mode::Sco)?;
    let dir = patterns_dir(cfg);
    create_dir(&dir)?;
    for &r in &cfg.design.accelerations {
        for &kind in &cfg.baselines.kinds {
            let jobs: Vec<(String, BaselineSpec)> = match kind {
                BaselineKind::Uniform => vec![(baseline_stem(kind, r, None), BaselineSpec::uniform(r))],
                BaselineKind::Caipi => vec![(baseline_stem(kind, r, None), caipi_spec(cfg, r)?)],
                BaselineKind::PoissonDisc => (0..cfg.baselines.realizations)
                    .map(|s| {
                        (
                            baseline_stem(kind, r, Some(s)),
                            BaselineSpec::poisson_disc(r, cfg.baselines.center_block, s),
                        )
                    })
                    .collect(),
            };
            for (stem, spec) in jobs {
                let pattern = baselines::generate(&spec, &cs)?;
                pattern.write_json(&dir.join(format!("{stem}.json")))?;
                pattern.write_pgm(&dir.join(format!("{stem}.pgm")))?;
                println!("{stem}: kept {} of {} groups", pattern.kept_groups.len(), cs.n_groups());
            }
        }
    }
    Ok(())
}

fn read_pattern(dir: &Path, stem: &str) -> Result<SamplingPattern, CliError> {
    let path = dir.join(format!("{stem}.json"));
    if !path.exists() {
        return Err(CliError::Io(format!("missing pattern file {}", path.display())));
    }
    SamplingPattern::read_json(&path).map_err(|e| io_err(&path, e))
}

/// One pattern family evaluated at one (mode, R): a single pattern or a set of
/// realizations scored best-of.
enum Entry {
    Designed(Option<(String, SamplingPattern)>, String),
    Single(String, SamplingPattern),
    BestOf(Vec<(u64, String, SamplingPattern)>),
}

fn entries(cfg: &RunConfig, mode: Mode, r: f64) -> Result<Vec<Entry>, CliError> {
    let dir = patterns_dir(cfg);
    let mut out = Vec::new();
    let stem = design_stem(mode, r);
    if dir.join(format!("{stem}.infeasible")).exists() {
        out.push(Entry::Designed(None, stem));
    } else {
        let p = read_pattern(&dir, &stem)?;
        out.push(Entry::Designed(Some((stem.clone(), p)), stem));
    }
    for &kind in &cfg.baselines.kinds {
        match kind {
            BaselineKind::PoissonDisc => {
                let list = (0..cfg.baselines.realizations)
                    .map(|s| {
                        let stem = baseline_stem(kind, r, Some(s));
                        read_pattern(&dir, &stem).map(|p| (s, stem, p))
                    })
                    .collect::<Result<_, _>>()?;
                out.push(Entry::BestOf(list));
            }
            _ => {
                let stem = baseline_stem(kind, r, None);
                let p = read_pattern(&dir, &stem)?;
                out.push(Entry::Single(stem, p));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Row {
    pattern_id: String,
    r: String,
    channels: usize,
    regularizer: &'static str,
    lambda: f64,
    phantom: u64,
    iters: Option<usize>,
    nrmse: Option<f64>,
    crb: Option<f64>,
}

struct Recon {
    image: Vec<C64>,
    iterations: usize,
    nrmse: f64,
}

fn noise_seed(cfg: &RunConfig, mode: Mode, phantom: u64) -> u64 {
    cfg.seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(phantom.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(mode as u64)
}

/// Everything a reconstruction of one test phantom under one mode needs.
struct Subject {
    seed: u64,
    gold: Vec<C64>,
    full_data: Vec<C64>,
}

fn reconstruct(
    model: &EncodingModel,
    subject: &Subject,
    pattern: &SamplingPattern,
    regularizer: Regularizer,
    cfg: &RunConfig,
) -> Result<Recon, CliError> {
    let op = EncodingOperator::new(model, pattern, 0)?;
    let data = restrict_full_data(&subject.full_data, pattern, model.candidates.n_coils)?;
    let res = irls_solve(&ReconProblem {
        data,
        operator: &op,
        regularizer,
        settings: cfg.evaluate.irls,
        gold: Some(&subject.gold),
    })?;
    Ok(Recon {
        nrmse: nrmse(&res.image, &subject.gold)?,
        iterations: res.iterations,
        image: res.image,
    })
}

fn regularizer(cfg: &RunConfig, kind: RegularizerKind) -> Regularizer {
    match kind {
        RegularizerKind::WaveletL1 => Regularizer::WaveletL1(cfg.transform.spec()),
        RegularizerKind::Tv => Regularizer::Tv,
    }
}

fn magnitudes(image: &[C64]) -> Vec<f64> {
    image.iter().map(|z| z.norm()).collect()
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let ctx = Context::new(cfg)?;
    let image_dir = cfg.output_dir.join("images");
    if cfg.evaluate.write_images {
        create_dir(&image_dir)?;
    }
    let golds: Vec<(u64, Vec<C64>)> = cfg
        .evaluate
        .phantom_seeds
        .iter()
        .map(|&s| render_phantom(&PhantomSpec::shepp_logan(ctx.grid, s)).map(|g| (s, g)))
        .collect::<Result<_, _>>()?;
    if cfg.evaluate.write_images {
        for (s, g) in &golds {
            Oedm::image(ctx.grid, g)?.write(&image_dir.join(format!("gold_p{s}.oedm")))?;
            let window = g.iter().map(|z| z.norm()).fold(0.0, f64::max);
            write_magnitude_pgm(
                &image_dir.join(format!("gold_p{s}.pgm")),
                ctx.grid.dims,
                &magnitudes(g),
                window,
            )?;
        }
    }

    let mut rows = Vec::new();
    for &mode in &cfg.design.modes {
        let design_model = ctx.design_model(mode)?;
        let model = ctx.test_model(mode)?;
        if mode == Mode::Mco {
            ctx.write_maps(&model, "test_maps.oedm")?;
        }
        let channels = model.candidates.n_coils;
        let full = SamplingPattern::full(&model.candidates);
        let full_op = EncodingOperator::new(&model, &full, 0)?;
        let subjects: Vec<Subject> = golds
            .iter()
            .map(|(s, g)| {
                let mut full_data = full_op.forward(g);
                if cfg.evaluate.noise_sigma > 0.0 {
                    add_noise(&mut full_data, cfg.evaluate.noise_sigma, noise_seed(cfg, mode, *s));
                }
                Subject {
                    seed: *s,
                    gold: g.clone(),
                    full_data,
                }
            })
            .collect();
        let crb_of = |p: &SamplingPattern| {
            design::evaluate_pattern_crb(p, &design_model, &ctx.supports, &ctx.wavelet, cfg.design.objective)
        };

        for &r in &cfg.design.accelerations {
            let r_text = r_label(r);
            for entry in entries(cfg, mode, r)? {
                // (pattern_id, candidate realizations) per entry
                let (crbs, candidates): (Vec<Option<f64>>, Vec<(String, SamplingPattern)>) = match entry {
                    Entry::Designed(None, stem) => {
                        for &kind in &cfg.evaluate.regularizers {
                            for subject in &subjects {
                                rows.push(Row {
                                    pattern_id: stem.clone(),
                                    r: r_text.clone(),
                                    channels,
                                    regularizer: kind.label(),
                                    lambda: cfg.evaluate.irls.lambda,
                                    phantom: subject.seed,
                                    iters: None,
                                    nrmse: None,
                                    crb: None,
                                });
                            }
                        }
                        continue;
                    }
                    Entry::Designed(Some((stem, p)), _) | Entry::Single(stem, p) => {
                        (vec![Some(crb_of(&p)?)], vec![(stem, p)])
                    }
                    Entry::BestOf(list) => {
                        let crbs = list
                            .par_iter()
                            .map(|(_, _, p)| crb_of(p).map(Some))
                            .collect::<Result<_, _>>()?;
                        (crbs, list.into_iter().map(|(_, stem, p)| (stem, p)).collect())
                    }
                };
                for &kind in &cfg.evaluate.regularizers {
                    let reg = regularizer(cfg, kind);
                    let results: Vec<(usize, Recon)> = subjects
                        .par_iter()
                        .map(|subject| {
                            let recons = candidates
                                .iter()
                                .map(|(_, p)| reconstruct(&model, subject, p, reg, cfg))
                                .collect::<Result<Vec<_>, _>>()?;
                            // lowest NRMSE; ties go to the earlier (lower-seed) realization
                            let best = (0..recons.len())
                                .min_by(|&a, &b| recons[a].nrmse.total_cmp(&recons[b].nrmse).then(a.cmp(&b)))
                                .expect("non-empty");
                            let recon = recons.into_iter().nth(best).expect("index in range");
                            Ok((best, recon))
                        })
                        .collect::<Result<_, CliError>>()?;
                    for (subject, (best, recon)) in subjects.iter().zip(results) {
                        let (stem, _) = &candidates[best];
                        if cfg.evaluate.write_images {
                            let path =
                                image_dir.join(format!("{stem}_{}_c{channels}_p{}.pgm", kind.label(), subject.seed));
                            let window = subject.gold.iter().map(|z| z.norm()).fold(0.0, f64::max);
                            write_magnitude_pgm(&path, ctx.grid.dims, &magnitudes(&recon.image), window)?;
                        }
                        rows.push(Row {
                            pattern_id: stem.clone(),
                            r: r_text.clone(),
                            channels,
                            regularizer: kind.label(),
                            lambda: cfg.evaluate.irls.lambda,
                            phantom: subject.seed,
                            iters: Some(recon.iterations),
                            nrmse: Some(recon.nrmse),
                            crb: crbs[best],
                        });
                    }
                }
            }
        }
    }
    let path = report_path(cfg);
    write_report(&path, &rows)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

pub fn report_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("report.csv")
}

fn write_report(path: &Path, rows: &[Row]) -> Result<(), CliError> {
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    writeln!(file, "{REPORT_VERSION_LINE}")?;
    writeln!(
        file,
        "# data term ||A f - d||^2 is unnormalized (fully sampled single-coil A^H A = N I); lambda as configured"
    )?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "pattern_id",
        "R",
        "channels",
        "regularizer",
        "lambda",
        "phantom",
        "iters",
        "nrmse",
        "crb",
    ])?;
    let fmt = |v: Option<f64>| v.map_or("infeasible".to_string(), |x| x.to_string());
    for row in rows {
        w.write_record([
            row.pattern_id.clone(),
            row.r.clone(),
            row.channels.to_string(),
            row.regularizer.to_string(),
            row.lambda.to_string(),
            row.phantom.to_string(),
            row.iters.map_or(String::new(), |i| i.to_string()),
            fmt(row.nrmse),
            fmt(row.crb),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(r_label(2.0), "2");
        assert_eq!(r_label(2.5), "2.5");
        assert_eq!(design_stem(Mode::Mco, 3.0), "mco_R3");
        assert_eq!(
            baseline_stem(BaselineKind::PoissonDisc, 4.0, Some(7)),
            "poisson-disc_R4_s7"
        );
        assert_eq!(baseline_stem(BaselineKind::Caipi, 4.0, None), "caipi_R4");
    }
}
