//! Cartesian experiment sweeps with seed-matched baselines.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_result, run_single, write_run, RunResult};
use crate::config::{AttackChoice, Defense, RunConfig};
use crate::error::{FedRlError, Result};
use crate::metrics::score_from_ratios;

/// A λ value, either literal or relative to the agent count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Value(f64),
    /// `"n-1"`: the cancelling-optimal scaling for the run's `n`.
    Named(String),
}

impl LambdaSpec {
    pub fn resolve(&self, n: usize) -> Result<f64> {
        match self {
            LambdaSpec::Value(v) => Ok(*v),
            LambdaSpec::Named(s) if s.replace(' ', "") == "n-1" => Ok(n as f64 - 1.0),
            LambdaSpec::Named(s) => Err(FedRlError::Config(format!("unknown lambda {s:?}; use a number or \"n-1\""))),
        }
    }
}

fn default_attacks() -> Vec<AttackChoice> {
    vec![AttackChoice::None]
}
fn default_defenses() -> Vec<Defense> {
    vec![Defense::Fedrl]
}
fn default_lambdas() -> Vec<LambdaSpec> {
    vec![LambdaSpec::Value(1.0)]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_stride() -> u64 {
    1000
}

/// A sweep over attack, defense, λ, δ, n and seed on top of a base
/// configuration.
///
/// Seed `s` also selects the maze set: maze seeds start at
/// `base.maze_seed_base + s · maze_seed_stride`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<AttackChoice>,
    #[serde(default = "default_defenses")]
    pub defenses: Vec<Defense>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<LambdaSpec>,
    /// Defaults to `[base.delta]`.
    #[serde(default)]
    pub deltas: Vec<f64>,
    /// Defaults to `[base.n]`.
    #[serde(default)]
    pub ns: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_stride")]
    pub maze_seed_stride: u64,
    #[serde(default)]
    pub base: RunConfig,
}

const PRESETS: &[(&str, &str)] = &[
    ("figure6", include_str!("../../../../presets/figure6.toml")),
    ("figure7", include_str!("../../../../presets/figure7.toml")),
    ("figure8", include_str!("../../../../presets/figure8.toml")),
    ("figure9", include_str!("../../../../presets/figure9.toml")),
    ("table3", include_str!("../../../../presets/table3.toml")),
    ("figure13", include_str!("../../../../presets/figure13.toml")),
];

impl Campaign {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| FedRlError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| FedRlError::Config(format!("unknown preset {name:?}")))?;
        Self::from_toml_str(text)
    }

    /// All run configurations, in sweep order, plus any seed-matched
    /// baseline the sweep itself does not contain.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        let deltas = if self.deltas.is_empty() { vec![self.base.delta] } else { self.deltas.clone() };
        let ns = if self.ns.is_empty() { vec![self.base.n] } else { self.ns.clone() };
        let mut out = Vec::new();
        for &defense in &self.defenses {
            for &n in &ns {
                for &delta in &deltas {
                    for lambda in &self.lambdas {
                        let lambda = lambda.resolve(n)?;
                        for &attack in &self.attacks {
                            for &seed in &self.seeds {
                                out.push(RunConfig {
                                    n,
                                    delta,
                                    lambda,
                                    attack,
                                    defense,
                                    seed,
                                    maze_seed_base: self.base.maze_seed_base + seed * self.maze_seed_stride,
                                    ..self.base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        let ids: HashSet<String> = out.iter().map(RunConfig::run_id).collect();
        let mut missing: Vec<RunConfig> = Vec::new();
        for c in out.iter().filter(|c| c.attack != AttackChoice::None) {
            let b = c.baseline();
            if !ids.contains(&b.run_id()) && !missing.contains(&b) {
                missing.push(b);
            }
        }
        out.extend(missing);
        for c in &out {
            c.validate()?;
        }
        Ok(out)
    }

    /// Runs every configuration (baselines first) with at most `jobs`
    /// concurrent runs, reusing completed runs found under `out_dir`, and
    /// writes `summary.csv` and `timings.csv`.
    pub fn run(&self, out_dir: &Path, jobs: usize) -> Result<CampaignReport> {
        let configs = self.expand()?;
        let runs_dir = out_dir.join("runs");
        fs::create_dir_all(&runs_dir).map_err(|e| FedRlError::io(&runs_dir, e))?;
        let probe = out_dir.join(".write-check");
        fs::write(&probe, b"").map_err(|e| FedRlError::io(&probe, e))?;
        fs::remove_file(&probe).map_err(|e| FedRlError::io(&probe, e))?;

        let mut unique: Vec<&RunConfig> = Vec::new();
        let mut seen = HashSet::new();
        for c in &configs {
            if seen.insert(c.run_id()) {
                unique.push(c);
            }
        }
        let (baselines, attacked): (Vec<&RunConfig>, Vec<&RunConfig>) =
            unique.into_iter().partition(|c| c.attack == AttackChoice::None);

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| FedRlError::Config(format!("thread pool: {e}")))?;
        let execute = |c: &RunConfig| -> Result<(RunResult, Option<f64>)> {
            let dir = runs_dir.join(c.run_id());
            if let Some(done) = load_result(&dir).filter(|r| r.config == *c) {
                return Ok((done, None));
            }
            let outcome = run_single(c)?;
            write_run(&dir, &outcome)?;
            Ok((outcome.result, Some(outcome.wall_time.as_secs_f64())))
        };
        let mut finished: Vec<(RunResult, Option<f64>)> = Vec::new();
        for phase in [baselines, attacked] {
            let done: Vec<_> = pool.install(|| phase.par_iter().map(|c| execute(c)).collect::<Result<Vec<_>>>())?;
            finished.extend(done);
        }

        let results: BTreeMap<String, RunResult> =
            finished.iter().map(|(r, _)| (r.run_id.clone(), r.clone())).collect();
        let rows = configs.iter().map(|c| summary_row(c, &results)).collect::<Result<Vec<_>>>()?;
        write_csv(&out_dir.join("summary.csv"), &rows)?;

        let mut timings: Vec<TimingRow> = finished
            .iter()
            .map(|(r, t)| TimingRow { run_id: r.run_id.clone(), wall_seconds: *t, reused: t.is_none() })
            .collect();
        timings.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        write_csv(&out_dir.join("timings.csv"), &timings)?;

        let executed = finished.iter().filter(|(_, t)| t.is_some()).count();
        Ok(CampaignReport { reused: finished.len() - executed, executed, rows, results })
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| FedRlError::io(path, e))
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub baseline_id: Option<String>,
    pub seed: u64,
    pub n: usize,
    pub lambda: f64,
    pub delta: f64,
    pub attack: String,
    pub defense: String,
    pub wr_no_adv: Option<f64>,
    pub wr_adv: Option<f64>,
    pub p_sa: Option<f64>,
    pub p_sa_raw: Option<f64>,
    pub consensus_std: f64,
    pub mean_comm_adversary: Option<f64>,
    pub mean_comm_honest: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
struct TimingRow {
    run_id: String,
    wall_seconds: Option<f64>,
    reused: bool,
}

fn summary_row(c: &RunConfig, results: &BTreeMap<String, RunResult>) -> Result<SummaryRow> {
    let id = c.run_id();
    let own = results.get(&id).ok_or_else(|| FedRlError::Contract(format!("run {id} has no result")))?;
    let mut row = SummaryRow {
        run_id: id,
        baseline_id: None,
        seed: c.seed,
        n: c.n,
        lambda: c.lambda,
        delta: c.delta,
        attack: c.attack.name().into(),
        defense: c.defense.name().into(),
        wr_no_adv: None,
        wr_adv: None,
        p_sa: None,
        p_sa_raw: None,
        consensus_std: own.eval.consensus_std,
        mean_comm_adversary: own.mean_comm_adversary,
        mean_comm_honest: own.mean_comm_honest,
    };
    if c.attack == AttackChoice::None {
        row.wr_no_adv = Some(own.eval.wr);
        return Ok(row);
    }
    let base_id = c.baseline().run_id();
    let base = results.get(&base_id).ok_or_else(|| FedRlError::Contract(format!("baseline {base_id} missing")))?;
    row.baseline_id = Some(base_id);
    row.wr_no_adv = Some(base.eval.wr);
    row.wr_adv = Some(own.eval.wr);
    // A baseline that never learned leaves the score undefined.
    if let Ok(score) = score_from_ratios(own.eval.wr, base.eval.wr) {
        row.p_sa = Some(score.p_sa);
        row.p_sa_raw = Some(score.p_sa_raw);
    }
    Ok(row)
}

/// Outcome of [`Campaign::run`].
#[derive(Clone, Debug)]
pub struct CampaignReport {
    pub rows: Vec<SummaryRow>,
    pub results: BTreeMap<String, RunResult>,
    pub executed: usize,
    pub reused: usize,
}
