//! Result files: per-trial CSV tables and the run summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const GIT_HASH: &str = env!("POISSONIZE_GIT_HASH");

/// Resolved settings shared by every command.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub command: &'static str,
    pub seed: u64,
    pub trials: usize,
    pub out_dir: PathBuf,
    /// The resolved configuration, echoed into every output file.
    pub config: Value,
}

impl RunContext {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Writes `rows` to `name` under the output directory. The file starts
    /// with `#` comment lines holding the command, root seed and resolved
    /// configuration; nothing time-dependent goes into it, so reruns with
    /// the same configuration produce identical bytes.
    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<String, CliError> {
        let path = self.path(name);
        let mut file = BufWriter::new(File::create(&path)?);
        writeln!(file, "# poissonize {} {}", self.command, VERSION)?;
        writeln!(file, "# root_seed: {}", self.seed)?;
        writeln!(file, "# config: {}", serde_json::to_string(&self.config).expect("config serializes"))?;
        let mut writer = csv::Writer::from_writer(file);
        for row in rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(name.to_string())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<String, CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let text = serde_json::to_string_pretty(value).expect("value serializes");
        std::fs::write(&path, text + "\n")?;
        Ok(name.to_string())
    }
}

/// What a command hands back for the summary.
#[derive(Debug, Default)]
pub struct Outcome {
    pub results: Value,
    pub trial_seconds: Vec<f64>,
    pub files: Vec<String>,
    /// Set when some trial hit a model failure; the run exits with status 2.
    pub model_failure: Option<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    version: &'a str,
    git_hash: &'a str,
    seed: u64,
    trials: usize,
    config: &'a Value,
    wall_time_seconds: f64,
    trial_wall_seconds: &'a [f64],
    files: &'a [String],
    model_failure: Option<&'a str>,
    results: &'a Value,
}

pub fn write_summary(ctx: &RunContext, outcome: &Outcome, wall: f64) -> Result<PathBuf, CliError> {
    let summary = Summary {
        command: ctx.command,
        version: VERSION,
        git_hash: GIT_HASH,
        seed: ctx.seed,
        trials: ctx.trials,
        config: &ctx.config,
        wall_time_seconds: wall,
        trial_wall_seconds: &outcome.trial_seconds,
        files: &outcome.files,
        model_failure: outcome.model_failure.as_deref(),
        results: &outcome.results,
    };
    ctx.write_json("summary.json", &summary)?;
    Ok(ctx.path("summary.json"))
}
