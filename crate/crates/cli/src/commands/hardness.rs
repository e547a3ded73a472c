//! `hardness`: builds and measures pairs of nearly identical mixtures and
//! optionally embeds them as noisy ICA models.

use poissonize_core::hardness::{
    build_close_pair, embed_as_ica, l1_distance, pigeonhole_pair, HardInstance, L1Method, MixturePair, PairOptions,
    PigeonholeOptions, PointSet,
};
use poissonize_core::SeededRng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::timed;
use crate::config::{HardnessConfig, HardnessMode};
use crate::error::CliError;
use crate::output::{Outcome, RunContext};

#[derive(Debug, Serialize)]
struct Row {
    kind: &'static str,
    index: usize,
    seed: u64,
    dim: usize,
    spacing: Option<f64>,
    fill: f64,
    components_p: usize,
    components_q: usize,
    l1_distance: f64,
    l1_error: f64,
    l1_unreliable: bool,
    min_center_distance: f64,
    kernel_condition: f64,
    alpha: Option<f64>,
    beta: Option<f64>,
    tau_p: Option<u64>,
    tau_q: Option<u64>,
    instance_file: Option<String>,
}

struct Built {
    pair: MixturePair,
    seed: u64,
    spacing: Option<f64>,
}

fn build(cfg: &HardnessConfig, ctx: &RunContext) -> Result<(Vec<(Result<Built, CliError>, f64)>, &'static str), CliError> {
    let opts = |seed| PairOptions {
        mc_samples: cfg.mc_samples,
        seed,
    };
    Ok(match cfg.mode {
        HardnessMode::Interleaved => {
            let out = cfg
                .spacings
                .par_iter()
                .map(|&h| {
                    timed(|| {
                        let (x, y) = PointSet::interleaved_1d(h)?;
                        let pair = build_close_pair(&x, &y, &opts(ctx.seed))?;
                        Ok(Built {
                            pair,
                            seed: ctx.seed,
                            spacing: Some(h),
                        })
                    })
                })
                .collect();
            (out, "interleaved")
        }
        HardnessMode::Random => {
            let out = (0..ctx.trials)
                .into_par_iter()
                .map(|t| {
                    timed(|| {
                        let seed = SeededRng::trial_seed(ctx.seed, t as u64);
                        let mut rng = SeededRng::new(seed);
                        let x = PointSet::random(cfg.points_per_set, cfg.dim, &mut rng)?;
                        let y = PointSet::random(cfg.points_per_set, cfg.dim, &mut rng)?;
                        let pair = build_close_pair(&x, &y, &opts(seed))?;
                        Ok(Built {
                            pair,
                            seed,
                            spacing: None,
                        })
                    })
                })
                .collect();
            (out, "random")
        }
        HardnessMode::Pigeonhole => {
            let out = (0..ctx.trials)
                .into_par_iter()
                .map(|t| {
                    timed(|| {
                        let seed = SeededRng::trial_seed(ctx.seed, t as u64);
                        let mut rng = SeededRng::new(seed);
                        let pts = PointSet::random(4 * cfg.k * cfg.k, cfg.dim, &mut rng)?;
                        let po = PigeonholeOptions {
                            pair: opts(seed),
                            ..PigeonholeOptions::default()
                        };
                        let outcome = pigeonhole_pair(&pts, &po, &mut rng)?;
                        Ok(Built {
                            pair: outcome.pair,
                            seed,
                            spacing: None,
                        })
                    })
                })
                .collect();
            (out, "pigeonhole")
        }
        HardnessMode::Files => {
            if cfg.instances.is_empty() {
                return Err(CliError::Config("files mode needs at least one instance path".into()));
            }
            let out = cfg
                .instances
                .par_iter()
                .map(|path| {
                    timed(|| {
                        let text = std::fs::read_to_string(path)?;
                        let inst = HardInstance::from_json(&text)?;
                        let mut pair = MixturePair::from_instance(&inst)?;
                        pair.l1 = l1_distance(
                            &pair.p,
                            &pair.q,
                            L1Method::auto(pair.p.dim(), cfg.mc_samples, ctx.seed),
                        )?;
                        Ok(Built {
                            pair,
                            seed: ctx.seed,
                            spacing: None,
                        })
                    })
                })
                .collect();
            (out, "file")
        }
    })
}

pub fn run(ctx: &RunContext, cfg: &HardnessConfig) -> Result<Outcome, CliError> {
    let (built, kind) = build(cfg, ctx)?;
    let mut rows = Vec::with_capacity(built.len());
    let mut seconds = Vec::with_capacity(built.len());
    let mut files = Vec::new();
    let mut failure = None;
    for (index, (result, secs)) in built.into_iter().enumerate() {
        seconds.push(secs);
        let b = match result {
            Ok(b) => b,
            Err(CliError::Model(msg)) => {
                failure.get_or_insert_with(|| format!("{kind} {index}: {msg}"));
                continue;
            }
            Err(e) => return Err(e),
        };
        let pair = &b.pair;
        let (tau_p, tau_q) = match &cfg.embed {
            Some(policy) => {
                let emb = embed_as_ica(pair, policy)?;
                (Some(emb.p.tau), Some(emb.q.tau))
            }
            None => (None, None),
        };
        let instance_file = if cfg.export_instances && cfg.mode != HardnessMode::Files {
            let name = format!("instances/{kind}_{index}.json");
            files.push(ctx.write_json(&name, &pair.to_instance())?);
            Some(name)
        } else {
            None
        };
        rows.push(Row {
            kind,
            index,
            seed: b.seed,
            dim: pair.p.dim(),
            spacing: b.spacing,
            fill: pair.fill,
            components_p: pair.p.components(),
            components_q: pair.q.components(),
            l1_distance: pair.l1.value,
            l1_error: pair.l1.error,
            l1_unreliable: pair.l1.unreliable,
            min_center_distance: pair.min_center_distance,
            kernel_condition: pair.kernel_condition,
            alpha: pair.alpha,
            beta: pair.beta,
            tau_p,
            tau_q,
            instance_file,
        });
    }
    files.insert(0, ctx.write_csv("hardness.csv", &rows)?);
    let results = json!({
        "mode": kind,
        "pairs": rows.len(),
        "l1_distance": rows.iter().map(|r| r.l1_distance).collect::<Vec<_>>(),
        "min_center_distance": rows.iter().map(|r| r.min_center_distance).collect::<Vec<_>>(),
        "equal_component_counts": rows.iter().filter(|r| r.components_p == r.components_q).count(),
        "unreliable_estimates": rows.iter().filter(|r| r.l1_unreliable).count(),
    });
    Ok(Outcome {
        results,
        trial_seconds: seconds,
        files,
        model_failure: failure,
    })
}
