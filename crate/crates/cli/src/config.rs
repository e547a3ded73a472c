//! Experiment configuration: one JSON file with optional global fields and
//! one optional block per command. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use poissonize_core::hardness::TauPolicy;
use poissonize_core::learner::{MixtureBounds, ThresholdChoice};
use poissonize_core::poissonization::{ReductionInputs, ReductionPolicy};
use poissonize_core::smoothed::BaseFamily;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
    pub learn: Option<LearnConfig>,
    pub smoothed: Option<SmoothedConfig>,
    pub hardness: Option<HardnessConfig>,
    #[serde(rename = "ica-bench")]
    pub ica_bench: Option<IcaBenchConfig>,
    #[serde(rename = "reduction-check")]
    pub reduction_check: Option<ReductionCheckConfig>,
}

impl ExperimentConfig {
    /// Parses `text`, reporting syntax and schema errors with their line and column.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let msg = match msg.rfind(" at line ") {
                Some(i) => msg[..i].to_string(),
                None => msg,
            };
            CliError::Config(format!("{}:{}:{}: {msg}", origin.display(), e.line(), e.column()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnConfig {
    pub n: usize,
    pub m: usize,
    /// Even cumulant order used by the ICA step.
    pub d: usize,
    /// `Σ = noise_variance · I`.
    pub noise_variance: f64,
    /// Explicit means, `n` rows by `m` columns. Drawn at random per trial when absent.
    pub means: Option<Vec<Vec<f64>>>,
    /// Explicit weights; uniform when absent.
    pub weights: Option<Vec<f64>>,
    /// Norm range of random means.
    pub norm_range: [f64; 2],
    /// Smallest pairwise angle of random means, in degrees.
    pub min_angle_deg: f64,
    pub samples: usize,
    pub delta: f64,
    pub eps: f64,
    pub bounds: MixtureBounds,
    pub threshold: ThresholdChoice,
    pub policy: ReductionPolicy,
    /// Cumulant order for weight recovery; `null` skips weights.
    pub weight_order: Option<usize>,
    pub contraction_draws: usize,
    pub chunk_len: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            n: 6,
            m: 6,
            d: 4,
            noise_variance: 0.01,
            means: None,
            weights: None,
            norm_range: [1.0, 2.0],
            min_angle_deg: 30.0,
            samples: 10_000_000,
            delta: 0.1,
            eps: 0.1,
            bounds: MixtureBounds {
                w: 1.0,
                u: 2.0,
                r: 3.0,
                b: 1e-4,
            },
            threshold: ThresholdChoice::Certified,
            policy: ReductionPolicy::default(),
            weight_order: Some(3),
            contraction_draws: 5,
            chunk_len: poissonize_core::cumulants::DEFAULT_CHUNK_LEN,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnticoncentrationConfig {
    pub degree: usize,
    pub eps: f64,
    pub samples: usize,
    pub variables: usize,
    pub c_policy: f64,
}

impl Default for AnticoncentrationConfig {
    fn default() -> Self {
        Self {
            degree: 2,
            eps: 0.01,
            samples: 100_000,
            variables: 6,
            c_policy: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothedConfig {
    pub n: usize,
    pub sigma: f64,
    pub families: Vec<BaseFamily>,
    /// Shape of the random matrices for the column-distance check; `[0, 0]` skips it.
    pub rv_shape: [usize; 2],
    pub anticoncentration: Option<AnticoncentrationConfig>,
}

impl Default for SmoothedConfig {
    fn default() -> Self {
        Self {
            n: 10,
            sigma: 0.1,
            families: BaseFamily::ALL.to_vec(),
            rv_shape: [6, 10],
            anticoncentration: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HardnessMode {
    /// The 1D interleaved designs at each configured spacing.
    Interleaved,
    /// Random point sets in the cube, one pair per trial.
    Random,
    /// Pigeonhole pairs from `4k²` random points, one per trial.
    Pigeonhole,
    /// Re-measures exported instance files.
    Files,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardnessConfig {
    pub mode: HardnessMode,
    pub spacings: Vec<f64>,
    pub dim: usize,
    /// Points in each of the two sets in random mode.
    pub points_per_set: usize,
    /// Pigeonhole uses `4k²` points.
    pub k: usize,
    pub mc_samples: usize,
    pub export_instances: bool,
    /// Instance files for `files` mode.
    pub instances: Vec<PathBuf>,
    /// ICA embedding of every pair; `null` skips it.
    pub embed: Option<TauPolicy>,
}

impl Default for HardnessConfig {
    fn default() -> Self {
        Self {
            mode: HardnessMode::Interleaved,
            spacings: vec![0.1, 0.05, 0.025],
            dim: 1,
            points_per_set: 10,
            k: 5,
            mc_samples: 200_000,
            export_instances: true,
            instances: Vec::new(),
            embed: Some(TauPolicy {
                delta: 0.1,
                samples: 10_000,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcaMode {
    /// Exact cumulants of the model; no sampling.
    Exact,
    /// Empirical cumulants of `X = AS` with Poisson sources.
    Sampled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcaBenchConfig {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub mode: IcaMode,
    pub samples: usize,
    /// Random mixing matrices are redrawn until `σ_m(A^{⊙d/2})` exceeds this.
    pub min_kr_sigma: f64,
    /// Poisson source rates; `1 + 0.25 i` when absent.
    pub rates: Option<Vec<f64>>,
    /// Standard deviation of isotropic Gaussian noise added in sampled mode.
    pub noise_sigma: f64,
    pub contraction_draws: usize,
}

impl Default for IcaBenchConfig {
    fn default() -> Self {
        Self {
            n: 4,
            m: 6,
            d: 4,
            mode: IcaMode::Exact,
            samples: 1_000_000,
            min_kr_sigma: 1e-3,
            rates: None,
            noise_sigma: 0.0,
            contraction_draws: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionCheckConfig {
    pub lambdas: Vec<f64>,
    pub tau_max: u64,
    /// Confidence and sample budget for the certified thresholds in the summary.
    pub delta: f64,
    pub samples: u64,
    /// Worst-case schedule inputs; the schedule is reported when present.
    pub inputs: Option<ReductionInputs>,
    pub policy: ReductionPolicy,
}

impl Default for ReductionCheckConfig {
    fn default() -> Self {
        Self {
            lambdas: (1..=8).map(f64::from).collect(),
            tau_max: 20,
            delta: 0.1,
            samples: 10_000_000,
            inputs: None,
            policy: ReductionPolicy::default(),
        }
    }
}
