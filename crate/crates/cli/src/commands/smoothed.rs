//! `smoothed`: least singular values of perturbed Khatri–Rao squares, the
//! column-distance bound, and an optional anticoncentration estimate.

use poissonize_core::smoothed::{anticoncentration_estimate, base_matrix, rv_check, smoothed_trial};
use poissonize_core::{RealMatrix, SeededRng};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::timed;
use crate::config::SmoothedConfig;
use crate::error::CliError;
use crate::output::{Outcome, RunContext};

#[derive(Debug, Serialize)]
struct TrialRow {
    family: &'static str,
    trial: usize,
    seed: u64,
    n: usize,
    sigma: f64,
    sigma_min_kr2: f64,
    sigma_min_kr_odot2: f64,
    bound: f64,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct RvRow {
    trial: usize,
    seed: u64,
    rows: usize,
    cols: usize,
    lhs: f64,
    rhs: f64,
    holds: bool,
}

pub fn run(ctx: &RunContext, cfg: &SmoothedConfig) -> Result<Outcome, CliError> {
    let trials = ctx.trials;
    let jobs: Vec<(usize, usize)> = (0..cfg.families.len())
        .flat_map(|f| (0..trials).map(move |t| (f, t)))
        .collect();
    let results: Vec<(Result<TrialRow, CliError>, f64)> = jobs
        .par_iter()
        .map(|&(f, t)| {
            timed(|| {
                let family = cfg.families[f];
                let seed = SeededRng::trial_seed(ctx.seed, (f * trials + t) as u64);
                let mut rng = SeededRng::new(seed);
                let base = base_matrix(family, cfg.n, &mut rng);
                let trial = smoothed_trial(&base, cfg.sigma, &mut rng)?;
                Ok(TrialRow {
                    family: family.name(),
                    trial: t,
                    seed,
                    n: cfg.n,
                    sigma: cfg.sigma,
                    sigma_min_kr2: trial.sigma_min_kr2,
                    sigma_min_kr_odot2: trial.sigma_min_kr_odot2,
                    bound: trial.bound,
                    passed: trial.passed,
                })
            })
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut seconds = Vec::with_capacity(results.len());
    for (row, secs) in results {
        rows.push(row?);
        seconds.push(secs);
    }
    let mut files = vec![ctx.write_csv("smoothed.csv", &rows)?];

    let passes: serde_json::Map<String, serde_json::Value> = cfg
        .families
        .iter()
        .map(|f| {
            let count = rows.iter().filter(|r| r.family == f.name() && r.passed).count();
            (f.name().to_string(), json!(count))
        })
        .collect();

    let [rv_rows_n, rv_cols_n] = cfg.rv_shape;
    let mut rv_summary = serde_json::Value::Null;
    if rv_rows_n > 0 && rv_cols_n > 0 {
        let rv: Vec<RvRow> = (0..trials)
            .into_par_iter()
            .map(|t| -> Result<RvRow, CliError> {
                // Offset so these seeds never coincide with the perturbation trials.
                let seed = SeededRng::trial_seed(ctx.seed, (cfg.families.len() * trials + t) as u64);
                let mut rng = SeededRng::new(seed);
                let a = RealMatrix::from_fn(rv_rows_n, rv_cols_n, |_, _| rng.standard_normal());
                let check = rv_check(&a)?;
                Ok(RvRow {
                    trial: t,
                    seed,
                    rows: rv_rows_n,
                    cols: rv_cols_n,
                    lhs: check.lhs,
                    rhs: check.rhs,
                    holds: check.holds,
                })
            })
            .collect::<Result<_, _>>()?;
        files.push(ctx.write_csv("rv.csv", &rv)?);
        rv_summary = json!({ "holds": rv.iter().filter(|r| r.holds).count(), "checked": rv.len() });
    }

    let anti = match &cfg.anticoncentration {
        Some(a) => {
            let mut rng = SeededRng::with_stream(ctx.seed, u64::MAX);
            let est = anticoncentration_estimate(a.degree, a.eps, a.samples, a.variables, a.c_policy, &mut rng)?;
            serde_json::to_value(est).expect("estimate serializes")
        }
        None => serde_json::Value::Null,
    };

    Ok(Outcome {
        results: json!({
            "trials_per_family": trials,
            "passes": passes,
            "bound": cfg.sigma * cfg.sigma / (cfg.n as f64).powi(7),
            "min_sigma_min_kr2": rows.iter().map(|r| r.sigma_min_kr2).reduce(f64::min),
            "rv_check": rv_summary,
            "anticoncentration": anti,
        }),
        trial_seconds: seconds,
        files,
        model_failure: None,
    })
}
