//! Evaluation protocol: win ratio over non-adversarial environments and the
//! probability of a successful attack.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EvalMode;
use crate::error::{FedRlError, Result};
use crate::gridworld::Maze;
use crate::policy::{run_episode, run_greedy_episode, LearningConfig, PolicyTable};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvResult {
    pub env: usize,
    pub wins: usize,
    pub attempts: usize,
}

impl EnvResult {
    pub fn win_ratio(&self) -> f64 {
        self.wins as f64 / self.attempts as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_env: Vec<EnvResult>,
    /// Mean per-environment win ratio.
    pub wr: f64,
    /// Population standard deviation of all entries of the evaluated table.
    pub consensus_std: f64,
}

/// Runs `attempts` episodes of `policy` in every maze whose index is not in
/// `excluded` and counts the goal-reaching ones.
///
/// Environment `i` draws from its own stream derived from `seed`, so the
/// result does not depend on evaluation order.
pub fn evaluate_policy(
    policy: &PolicyTable,
    mazes: &[Maze],
    excluded: &BTreeSet<usize>,
    attempts: usize,
    mode: EvalMode,
    learning: &LearningConfig,
    seed: u64,
) -> Result<EvalReport> {
    if attempts == 0 {
        return Err(FedRlError::Contract("attempts must be >= 1".into()));
    }
    let envs: Vec<usize> = (0..mazes.len()).filter(|i| !excluded.contains(i)).collect();
    if envs.is_empty() {
        return Err(FedRlError::Contract("no environment left to evaluate".into()));
    }
    let per_env = envs
        .par_iter()
        .map(|&i| {
            let mut wins = 0;
            match mode {
                EvalMode::Stochastic => {
                    let mut rng = rng::stream(seed, Stream::Evaluation, i as u64);
                    for _ in 0..attempts {
                        wins += run_episode(policy, &mazes[i], learning, &mut rng)?.reached_goal() as usize;
                    }
                }
                EvalMode::Greedy => {
                    // Deterministic: one episode decides every attempt.
                    let won = run_greedy_episode(policy, &mazes[i], learning.step_limit)?.reached_goal();
                    wins = if won { attempts } else { 0 };
                }
            }
            Ok(EnvResult { env: i, wins, attempts })
        })
        .collect::<Result<Vec<_>>>()?;
    let wr = per_env.iter().map(EnvResult::win_ratio).sum::<f64>() / per_env.len() as f64;
    Ok(EvalReport { per_env, wr, consensus_std: policy.entry_std() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackScore {
    /// `1 − wr_adv / wr_no_adv`, clamped to `[0, 1]`.
    pub p_sa: f64,
    /// Unclamped value; negative when the "attack" helped.
    pub p_sa_raw: f64,
    pub wr_adv: f64,
    pub wr_no_adv: f64,
}

pub fn score_from_ratios(wr_adv: f64, wr_no_adv: f64) -> Result<AttackScore> {
    if !(wr_no_adv > 0.0) {
        return Err(FedRlError::UndefinedScore);
    }
    let raw = 1.0 - wr_adv / wr_no_adv;
    Ok(AttackScore { p_sa: raw.clamp(0.0, 1.0), p_sa_raw: raw, wr_adv, wr_no_adv })
}

pub fn attack_score(report_adv: &EvalReport, report_baseline: &EvalReport) -> Result<AttackScore> {
    score_from_ratios(report_adv.wr, report_baseline.wr)
}
