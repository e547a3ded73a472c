//! `ica-bench`: column recovery of the ICA solver on random mixing matrices,
//! from exact cumulants or from samples of `X = AS + noise` with Poisson sources.

use poissonize_core::cumulants::analytic_ica_cumulant;
use poissonize_core::distributions::sample_poisson;
use poissonize_core::ica::{align_columns, ica_from_cumulants, underdetermined_ica, IcaEstimate, IcaOptions};
use poissonize_core::linalg::{khatri_rao_power, normalize_columns, sigma_k};
use poissonize_core::{RealMatrix, SeededRng};
use serde::Serialize;
use serde_json::json;

use super::{median, timed};
use crate::config::{IcaBenchConfig, IcaMode};
use crate::error::CliError;
use crate::output::{Outcome, RunContext};

const MAX_MATRIX_DRAWS: usize = 10_000;

#[derive(Debug, Serialize)]
struct Row {
    trial: usize,
    seed: u64,
    mode: &'static str,
    n: usize,
    m: usize,
    d: usize,
    samples: Option<usize>,
    kr_sigma: f64,
    failed: bool,
    max_error: Option<f64>,
    eigengap: Option<f64>,
    failure: Option<String>,
}

fn mixing_matrix(cfg: &IcaBenchConfig, rng: &mut SeededRng) -> Result<(RealMatrix, f64), CliError> {
    for _ in 0..MAX_MATRIX_DRAWS {
        let a = normalize_columns(&RealMatrix::from_fn(cfg.n, cfg.m, |_, _| rng.standard_normal()));
        let s = sigma_k(&khatri_rao_power(&a, cfg.d / 2)?, cfg.m);
        if s > cfg.min_kr_sigma {
            return Ok((a, s));
        }
    }
    Err(CliError::Config(format!(
        "no {}×{} matrix with σ_m(A^⊙{}) > {} in {MAX_MATRIX_DRAWS} draws",
        cfg.n,
        cfg.m,
        cfg.d / 2,
        cfg.min_kr_sigma
    )))
}

fn estimate(cfg: &IcaBenchConfig, a: &RealMatrix, rates: &[f64], rng: &mut SeededRng) -> poissonize_core::Result<IcaEstimate> {
    let opts = IcaOptions {
        contraction_draws: cfg.contraction_draws,
        ..IcaOptions::default()
    };
    match cfg.mode {
        IcaMode::Exact => {
            // Every cumulant of Poisson(r) equals r.
            let even = analytic_ica_cumulant(a, rates, cfg.d)?;
            let odd = analytic_ica_cumulant(a, rates, cfg.d + 1)?;
            ica_from_cumulants(&even, &odd, cfg.m, &opts, rng)
        }
        IcaMode::Sampled => {
            let (n, m) = (cfg.n, cfg.m);
            let noise = cfg.noise_sigma;
            let sampler = |r: &mut SeededRng, x: &mut [f64]| {
                x.iter_mut().for_each(|v| *v = 0.0);
                for (j, &rate) in rates.iter().enumerate().take(m) {
                    let s = sample_poisson(rate, r) as f64;
                    for (i, v) in x.iter_mut().enumerate().take(n) {
                        *v += a[(i, j)] * s;
                    }
                }
                if noise > 0.0 {
                    x.iter_mut().for_each(|v| *v += noise * r.standard_normal());
                }
                Ok(())
            };
            underdetermined_ica(sampler, n, m, cfg.d, cfg.samples, &opts, rng)
        }
    }
}

pub fn run(ctx: &RunContext, cfg: &IcaBenchConfig) -> Result<Outcome, CliError> {
    let rates: Vec<f64> = match &cfg.rates {
        Some(r) if r.len() == cfg.m => r.clone(),
        Some(r) => {
            return Err(CliError::Config(format!("{} rates for {} sources", r.len(), cfg.m)));
        }
        None => (0..cfg.m).map(|i| 1.0 + 0.25 * i as f64).collect(),
    };
    let mode = match cfg.mode {
        IcaMode::Exact => "exact",
        IcaMode::Sampled => "sampled",
    };
    let mut rows = Vec::with_capacity(ctx.trials);
    let mut seconds = Vec::with_capacity(ctx.trials);
    let mut failure = None;
    for trial in 0..ctx.trials {
        let seed = SeededRng::trial_seed(ctx.seed, trial as u64);
        let mut rng = SeededRng::new(seed);
        let (a, kr_sigma) = mixing_matrix(cfg, &mut rng)?;
        let (result, secs) = timed(|| estimate(cfg, &a, &rates, &mut rng));
        seconds.push(secs);
        let mut row = Row {
            trial,
            seed,
            mode,
            n: cfg.n,
            m: cfg.m,
            d: cfg.d,
            samples: (cfg.mode == IcaMode::Sampled).then_some(cfg.samples),
            kr_sigma,
            failed: true,
            max_error: None,
            eigengap: None,
            failure: None,
        };
        match result {
            Ok(est) => {
                row.failed = false;
                row.max_error = Some(align_columns(&est.columns, &a)?.max_error);
                row.eigengap = Some(est.eigengap);
            }
            Err(e) => match CliError::from(e) {
                CliError::Model(msg) => {
                    failure.get_or_insert_with(|| format!("trial {trial}: {msg}"));
                    row.failure = Some(msg);
                }
                other => return Err(other),
            },
        }
        rows.push(row);
    }
    let file = ctx.write_csv("ica_bench.csv", &rows)?;
    let errors: Vec<f64> = rows.iter().filter_map(|r| r.max_error).collect();
    Ok(Outcome {
        results: json!({
            "mode": mode,
            "max_error": rows.iter().map(|r| r.max_error).collect::<Vec<_>>(),
            "max_error_median": median(&errors),
            "max_error_worst": errors.iter().copied().reduce(f64::max),
            "failures": rows.iter().filter(|r| r.failed).count(),
        }),
        trial_seconds: seconds,
        files: vec![file],
        model_failure: failure,
    })
}
