//! Built-in numerical cross-checks.

use oedipus_core::verify;
use oedipus_core::wavelet::{TransformSpec, Wavelet2d, WaveletFamily};

use crate::CliError;

struct Check {
    name: &'static str,
    value: f64,
    limit: f64,
}

impl Check {
    fn passed(&self) -> bool {
        self.value <= self.limit
    }
}

fn fold_max<I: IntoIterator<Item = Result<f64, oedipus_core::Error>>>(it: I) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    for v in it {
        let v = v?;
        worst = if v.is_nan() { f64::INFINITY } else { worst.max(v) };
    }
    Ok(worst)
}

fn checks(corrupt_wavelet: bool) -> Result<Vec<Check>, CliError> {
    let dims = [16, 16];
    let mut lo = WaveletFamily::Daubechies4.lowpass();
    if corrupt_wavelet {
        lo[1] *= 1.001;
    }
    let d4 = Wavelet2d::from_lowpass(dims, 3, lo)?;
    let haar = Wavelet2d::new(dims, &TransformSpec::haar(3))?;
    let mut out = vec![
        Check {
            name: "wavelet parseval (D4)",
            value: verify::wavelet_parseval_error(&d4, 5, 1)?,
            limit: 1e-12,
        },
        Check {
            name: "wavelet parseval (Haar)",
            value: verify::wavelet_parseval_error(&haar, 5, 2)?,
            limit: 1e-12,
        },
    ];
    let adj = verify::adjoint_errors(&d4, 20, 3)?;
    out.push(Check {
        name: "adjoint: encoding",
        value: adj.encoding,
        limit: 1e-10,
    });
    out.push(Check {
        name: "adjoint: wavelet",
        value: adj.wavelet,
        limit: 1e-10,
    });
    out.push(Check {
        name: "adjoint: finite difference",
        value: adj.finite_difference,
        limit: 1e-10,
    });

    let mut inverse = Vec::new();
    let mut trace = Vec::new();
    for seed in 0..6u64 {
        let coils = [1, 2, 4][seed as usize % 3];
        let inst = verify::random_instance(seed, [8, 8], &[0, 1], coils, 12, &TransformSpec::daubechies4(2))?;
        let chain = verify::smw_chain(&inst, 10, seed)?;
        inverse.push(Ok(chain.inverse));
        trace.push(Ok(chain.trace));
    }
    out.push(Check {
        name: "woodbury downdate vs direct inverse",
        value: fold_max(inverse)?,
        limit: 1e-7,
    });
    out.push(Check {
        name: "trace shortcut vs full downdate",
        value: fold_max(trace)?,
        limit: 1e-10,
    });

    let spreads = (0..4u64).map(|seed| {
        let spec = if seed % 2 == 0 {
            TransformSpec::daubechies4(2)
        } else {
            TransformSpec::haar(2)
        };
        verify::random_instance(seed, [8, 8], &[0, 1], 2, 16, &spec)
            .and_then(|inst| verify::trace_forms(&inst))
            .map(|t| verify::trace_spread(&t))
    });
    out.push(Check {
        name: "trace equality (support/coefficient/image)",
        value: fold_max(spreads)?,
        limit: 1e-8,
    });

    let mut mismatches = 0usize;
    for seed in 0..3u64 {
        let inst = verify::random_instance(seed, [2, 6], &[0, 1], 1, 4, &TransformSpec::haar(1))?;
        let g = verify::greedy_vs_exhaustive(&inst, 6)?;
        if !g.passed() {
            mismatches += 1;
        }
    }
    out.push(Check {
        name: "greedy choices vs brute force (failures)",
        value: mismatches as f64,
        limit: 0.0,
    });

    let mc = verify::monte_carlo_covariance(3, 8, 10_000, 5)?;
    out.push(Check {
        name: "oracle estimator covariance (std. errors)",
        value: mc.covariance_z,
        limit: 8.0,
    });
    out.push(Check {
        name: "oracle estimator bias (std. errors)",
        value: mc.bias_z,
        limit: 8.0,
    });
    Ok(out)
}

pub fn run(corrupt_wavelet: bool) -> Result<(), CliError> {
    let results = checks(corrupt_wavelet)?;
    println!("{:<46} {:>12} {:>10}  status", "check", "value", "limit");
    let mut failed = 0;
    for c in &results {
        let status = if c.passed() { "pass" } else { "FAIL" };
        if !c.passed() {
            failed += 1;
        }
        println!("{:<46} {:>12.3e} {:>10.1e}  {status}", c.name, c.value, c.limit);
    }
    if failed == 0 {
        println!("all {} checks passed", results.len());
        Ok(())
    } else {
        Err(CliError::Other(format!(
            "{failed} of {} self-test checks failed",
            results.len()
        )))
    }
}
