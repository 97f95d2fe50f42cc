//! Experiment harness: single runs, campaigns and analysis tables.

mod analysis;
mod campaign;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use analysis::{emit_analysis_tables, g_vs_lambda, g_vs_n, GRow};
pub use campaign::{Campaign, CampaignReport, LambdaSpec, SummaryRow};

use crate::comafedrl::run_comafedrl;
use crate::config::{Defense, RunConfig};
use crate::error::{FedRlError, Result};
use crate::federation::run_mtfedrl;
use crate::gridworld::Maze;
use crate::metrics::{evaluate_policy, EvalReport};
use crate::record::TrainingRecord;

/// Environments scored by the win ratio: all but the adversary slot.
///
/// Baseline runs exclude the same slot so that attacked and baseline win
/// ratios average over the same environments.
pub fn scored_exclusions(config: &RunConfig) -> BTreeSet<usize> {
    [config.adversary_index].into()
}

/// What one run produces besides its per-round record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub config: RunConfig,
    pub eval: EvalReport,
    /// Final communication intervals (adaptive-communication runs only).
    pub final_comm: Option<Vec<u64>>,
    pub mean_comm_adversary: Option<f64>,
    pub mean_comm_honest: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub result: RunResult,
    pub record: TrainingRecord,
    pub wall_time: Duration,
}

/// Trains with the configured defense and evaluates the unified policy.
pub fn run_single(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mazes = config.load_mazes()?;
    run_with_mazes(config, &mazes)
}

pub fn run_with_mazes(config: &RunConfig, mazes: &[Maze]) -> Result<RunOutcome> {
    let start = Instant::now();
    let record = match config.defense {
        Defense::Fedrl => run_mtfedrl(config, mazes)?,
        Defense::Comafedrl => run_comafedrl(config, mazes)?,
    };
    let eval = evaluate_policy(
        &record.unified,
        mazes,
        &scored_exclusions(config),
        config.eval_attempts,
        config.eval_mode,
        &config.learning(),
        config.seed,
    )?;
    let intervals = record.mean_intervals();
    let result = RunResult {
        run_id: config.run_id(),
        config: config.clone(),
        eval,
        final_comm: record.final_comm.clone(),
        mean_comm_adversary: intervals.map(|i| i.0).filter(|v| v.is_finite()),
        mean_comm_honest: intervals.map(|i| i.1).filter(|v| v.is_finite()),
    };
    Ok(RunOutcome { result, record, wall_time: start.elapsed() })
}

/// Writes `config.toml`, `rounds.jsonl`, `policy.bin` and `result.json` into
/// `dir`. `result.json` is written last and marks the run as complete.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FedRlError::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| FedRlError::io(p, e))
    };
    write("config.toml", outcome.result.config.to_toml().as_bytes())?;
    let mut jsonl = Vec::new();
    outcome.record.write_jsonl(&mut jsonl)?;
    write("rounds.jsonl", &jsonl)?;
    write("policy.bin", &outcome.record.unified.to_bytes())?;
    write("result.json", serde_json::to_string_pretty(&outcome.result)?.as_bytes())
}

/// Loads a completed run's result, if present.
pub fn load_result(dir: &Path) -> Option<RunResult> {
    let text = fs::read_to_string(dir.join("result.json")).ok()?;
    serde_json::from_str(&text).ok()
}
