//! `learn`: end-to-end mean recovery through the Poissonized reduction.

use poissonize_core::distributions::GmmParams;
use poissonize_core::ica::IcaOptions;
use poissonize_core::learner::{evaluate_recovery, learn_means, random_separated_means, LearnSettings};
use poissonize_core::linalg::matrix_from_rows;
use poissonize_core::{RealMatrix, SeededRng};
use serde::Serialize;
use serde_json::json;

use super::{median, timed};
use crate::config::LearnConfig;
use crate::error::CliError;
use crate::output::{Outcome, RunContext};

#[derive(Debug, Serialize)]
struct Row {
    trial: usize,
    seed: u64,
    n: usize,
    m: usize,
    d: usize,
    samples: usize,
    lambda: f64,
    tau: u64,
    tv_gap: f64,
    failed: bool,
    aligned_error: Option<f64>,
    mean_error: Option<f64>,
    weight_error: Option<f64>,
    weights_clipped: bool,
    eigengap: Option<f64>,
    mean_conditioning: Option<f64>,
    failure: Option<String>,
}

const MAX_MEAN_DRAWS: usize = 100_000;

fn mixture(cfg: &LearnConfig, rng: &mut SeededRng) -> Result<GmmParams, CliError> {
    let means = match &cfg.means {
        Some(rows) => matrix_from_rows(rows)?,
        None => random_separated_means(
            cfg.n,
            cfg.m,
            cfg.norm_range[0],
            cfg.norm_range[1],
            cfg.min_angle_deg,
            MAX_MEAN_DRAWS,
            rng,
        )?,
    };
    if means.shape() != (cfg.n, cfg.m) {
        return Err(CliError::Config(format!(
            "means are {:?}, expected {}×{}",
            means.shape(),
            cfg.n,
            cfg.m
        )));
    }
    let cov = RealMatrix::identity(cfg.n, cfg.n) * cfg.noise_variance;
    Ok(match &cfg.weights {
        Some(w) => GmmParams::new(means, w.clone(), cov)?,
        None => GmmParams::uniform(means, cov)?,
    })
}

pub fn run(ctx: &RunContext, cfg: &LearnConfig) -> Result<Outcome, CliError> {
    let settings = LearnSettings {
        m: cfg.m,
        d: cfg.d,
        delta: cfg.delta,
        eps: cfg.eps,
        bounds: cfg.bounds,
        samples: cfg.samples,
        threshold: cfg.threshold,
        policy: cfg.policy.clone(),
        weight_order: cfg.weight_order,
        ica: IcaOptions {
            contraction_draws: cfg.contraction_draws,
            chunk_len: cfg.chunk_len,
            ..IcaOptions::default()
        },
    };
    let mut rows = Vec::with_capacity(ctx.trials);
    let mut seconds = Vec::with_capacity(ctx.trials);
    let mut failure = None;
    for trial in 0..ctx.trials {
        let seed = SeededRng::trial_seed(ctx.seed, trial as u64);
        let mut rng = SeededRng::new(seed);
        let gmm = mixture(cfg, &mut rng)?;
        let (result, secs) = timed(|| learn_means(&gmm, gmm.covariance(), &settings, Some(&gmm), &mut rng));
        seconds.push(secs);
        let mut row = Row {
            trial,
            seed,
            n: cfg.n,
            m: cfg.m,
            d: cfg.d,
            samples: cfg.samples,
            lambda: f64::NAN,
            tau: 0,
            tv_gap: f64::NAN,
            failed: true,
            aligned_error: None,
            mean_error: None,
            weight_error: None,
            weights_clipped: false,
            eigengap: None,
            mean_conditioning: None,
            failure: None,
        };
        match result {
            Ok(mut report) => {
                row.lambda = report.params.lambda;
                row.tau = report.tau_used;
                row.tv_gap = report.tv_gap;
                row.mean_conditioning = report.mean_conditioning;
                row.eigengap = report.eigengap;
                row.weights_clipped = report.weights_clipped;
                if report.failed {
                    row.failure = report.failure.clone();
                } else {
                    let metrics = evaluate_recovery(&mut report, &gmm)?;
                    row.failed = false;
                    row.aligned_error = Some(metrics.max_error);
                    row.mean_error = Some(metrics.mean_error);
                    row.weight_error = metrics.weight_error;
                }
            }
            Err(e) => match CliError::from(e) {
                CliError::Model(msg) => row.failure = Some(msg),
                other => return Err(other),
            },
        }
        if let Some(msg) = &row.failure {
            failure.get_or_insert_with(|| format!("trial {trial}: {msg}"));
        }
        rows.push(row);
    }
    let file = ctx.write_csv("learn.csv", &rows)?;
    let errors: Vec<Option<f64>> = rows.iter().map(|r| r.aligned_error).collect();
    let finite: Vec<f64> = errors.iter().flatten().copied().collect();
    let results = json!({
        "aligned_error": errors,
        "aligned_error_median": median(&finite),
        "aligned_error_max": finite.iter().copied().reduce(f64::max),
        "weight_error": rows.iter().map(|r| r.weight_error).collect::<Vec<_>>(),
        "failures": rows.iter().filter(|r| r.failed).count(),
        "tau": rows.iter().map(|r| r.tau).collect::<Vec<_>>(),
        "tv_gap": rows.iter().map(|r| r.tv_gap).collect::<Vec<_>>(),
    });
    Ok(Outcome {
        results,
        trial_seconds: seconds,
        files: vec![file],
        model_failure: failure,
    })
}
