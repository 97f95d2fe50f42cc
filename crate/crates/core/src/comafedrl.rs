//! Communication-adaptive federation (ComA-FedRL).
//!
//! Agents first learn locally for `wait_comm` rounds while their policies are
//! cross-evaluated in randomly assigned environments every `base_comm`
//! rounds. Afterwards an agent shares and receives only in rounds divisible
//! by its communication interval. Agents whose policies score below `r_th`
//! get long intervals that double on every further failure.
//!
//! An adversarial environment reports a cumulative reward of −1 for any
//! policy it evaluates.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{FedRlError, Result};
use crate::federation::{aggregate, build_participants, round_stats, Participant, SmoothingSchedule};
use crate::gridworld::Maze;
use crate::policy::{run_episode, LearningConfig, PolicyTable};
use crate::record::{CrossEvalRow, RoundRecord, TrainingRecord};
use crate::rng::{self, Stream};

/// Reward reported by an adversarial environment.
pub const FAKE_REWARD: f64 = -1.0;

/// Per-agent communication intervals and the constants that drive them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommTable {
    pub comm: Vec<u64>,
    pub base_comm: u64,
    pub low_comm: u64,
    pub high_comm: u64,
    pub wait_comm: u64,
    pub r_th: f64,
}

impl CommTable {
    pub fn new(n: usize, base_comm: u64, low_comm: u64, high_comm: u64, wait_comm: u64, r_th: f64) -> Result<Self> {
        if low_comm == 0 || !(low_comm <= base_comm && base_comm <= high_comm) {
            return Err(FedRlError::Config(format!(
                "need 1 <= low_comm <= base_comm <= high_comm, got {low_comm}, {base_comm}, {high_comm}"
            )));
        }
        Ok(Self { comm: vec![base_comm; n], base_comm, low_comm, high_comm, wait_comm, r_th })
    }

    pub fn from_config(config: &RunConfig) -> Result<Self> {
        Self::new(config.n, config.base_comm, config.low_comm, config.high_comm, config.wait_comm, config.r_th)
    }

    pub fn is_active(&self, agent: usize, round: u64) -> bool {
        round.is_multiple_of(self.comm[agent])
    }

    pub fn max_interval(&self) -> u64 {
        self.comm.iter().copied().max().unwrap_or(1)
    }
}

/// Cross-evaluation rewards accumulated since the last interval update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossEvalMatrix {
    pub rows: Vec<CrossEvalRow>,
}

impl CrossEvalMatrix {
    pub fn push(&mut self, row: CrossEvalRow) {
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean reward per evaluated policy.
    pub fn column_means(&self) -> Vec<f64> {
        let Some(first) = self.rows.first() else {
            return Vec::new();
        };
        let mut sums = vec![0.0; first.rewards.len()];
        for row in &self.rows {
            sums.iter_mut().zip(&row.rewards).for_each(|(s, r)| *s += r);
        }
        sums.iter().map(|s| s / self.rows.len() as f64).collect()
    }
}

/// One cross-evaluation round.
///
/// Draws a uniform permutation; environment `i` runs policy `assignment[i]`
/// for `eval_episodes` episodes and reports the mean cumulative reward for
/// that policy. Environments owned by adversaries report [`FAKE_REWARD`].
pub fn cross_eval<R: Rng + ?Sized>(
    policies: &[PolicyTable],
    mazes: &[Maze],
    adversaries: &BTreeSet<usize>,
    eval_episodes: usize,
    learning: &LearningConfig,
    rng: &mut R,
) -> Result<CrossEvalRow> {
    let n = policies.len();
    if n < 2 || mazes.len() != n {
        return Err(FedRlError::Contract(format!("cross-evaluation needs n >= 2 policies and mazes, got {n}")));
    }
    if eval_episodes == 0 {
        return Err(FedRlError::Contract("eval_episodes must be >= 1".into()));
    }
    let mut assignment: Vec<usize> = (0..n).collect();
    assignment.shuffle(rng);
    let mut rewards = vec![0.0; n];
    for (env, &policy) in assignment.iter().enumerate() {
        rewards[policy] = if adversaries.contains(&env) {
            FAKE_REWARD
        } else {
            let mut total = 0.0;
            for _ in 0..eval_episodes {
                total += run_episode(&policies[policy], &mazes[env], learning, rng)?.total_reward;
            }
            total / eval_episodes as f64
        };
    }
    Ok(CrossEvalRow { assignment, rewards })
}

/// Reassigns communication intervals from the accumulated rewards, then
/// clears the consumed rows.
///
/// Passing agents get `low_comm`. A failing agent at `low_comm` moves to
/// `high_comm`; any other failing agent has its interval doubled.
pub fn update_comm_intervals(matrix: &mut CrossEvalMatrix, table: &CommTable) -> Result<CommTable> {
    if matrix.is_empty() {
        return Err(FedRlError::Contract("no cross-evaluation rows to update from".into()));
    }
    let means = matrix.column_means();
    if means.len() != table.comm.len() {
        return Err(FedRlError::Contract(format!(
            "{} reward columns for {} agents",
            means.len(),
            table.comm.len()
        )));
    }
    let mut next = table.clone();
    for (c, r_avg) in next.comm.iter_mut().zip(means) {
        *c = if r_avg >= table.r_th {
            table.low_comm
        } else if *c != table.low_comm {
            c.saturating_mul(2)
        } else {
            table.high_comm
        };
    }
    matrix.rows.clear();
    Ok(next)
}

/// Runs ComA-FedRL for `config.episodes` rounds.
///
/// Every non-adversarial agent trains on its own maze every round; the
/// communication interval gates only sharing and aggregation.
pub fn run_comafedrl(config: &RunConfig, mazes: &[Maze]) -> Result<TrainingRecord> {
    config.validate()?;
    if mazes.len() != config.n {
        return Err(FedRlError::Config(format!("{} mazes for {} agents", mazes.len(), config.n)));
    }
    let n = config.n;
    let learning = config.learning();
    let schedule = SmoothingSchedule::new(n, config.threshold)?;
    let mut participants = build_participants(config)?;
    let adversaries: BTreeSet<usize> =
        participants.iter().enumerate().filter(|(_, p)| p.is_adversarial()).map(|(i, _)| i).collect();
    let mut table = CommTable::from_config(config)?;
    let mut matrix = CrossEvalMatrix::default();
    let mut eval_rng = rng::stream(config.seed, Stream::CrossEval, 0);
    // What each agent would show if evaluated: honest agents their current
    // parameters, adversaries their latest share.
    let mut current = vec![PolicyTable::gridworld(); n];
    let mut record = TrainingRecord::new(n, adversaries.clone());

    for k in 1..=config.episodes {
        let pretrain = k <= table.wait_comm;
        if !pretrain && !matrix.is_empty() {
            table = update_comm_intervals(&mut matrix, &table)?;
        }
        let active: Vec<usize> = if pretrain { Vec::new() } else { (0..n).filter(|&i| table.is_active(i, k)).collect() };
        let evaluate = if pretrain {
            k % table.base_comm == 0
        } else {
            active.len() == n || k % table.max_interval() == 0
        };

        let mut returns = vec![None; n];
        let mut adversary_norm = None;
        for (i, p) in participants.iter_mut().enumerate() {
            match p {
                Participant::Honest(agent) => {
                    returns[i] = Some(agent.client_update(&mazes[i], &learning)?);
                    current[i] = agent.policy.clone();
                }
                Participant::Adversarial(adv) => {
                    // The adversary only produces a share when someone sees it.
                    if active.contains(&i) || (pretrain && evaluate) {
                        let share = adv.share(&mazes[i], &learning)?;
                        adversary_norm = Some(share.norm());
                        current[i] = share;
                    }
                }
            }
        }

        let weights = schedule.weights(k)?.restricted(active.len());
        if active.len() >= 2 {
            let shared: Vec<PolicyTable> = active.iter().map(|&i| current[i].clone()).collect();
            let out = aggregate(&shared, weights)?;
            for (&i, mut theta) in active.iter().zip(out) {
                theta.version = k;
                match &mut participants[i] {
                    Participant::Honest(agent) => {
                        agent.policy = theta.clone();
                        current[i] = theta;
                    }
                    Participant::Adversarial(adv) => adv.receive(theta, weights),
                }
            }
        }

        let cross = if evaluate {
            let row = cross_eval(&current, mazes, &adversaries, config.eval_episodes, &learning, &mut eval_rng)?;
            matrix.push(row.clone());
            Some(row)
        } else {
            None
        };

        let stats = round_stats(&current, &adversaries);
        let mut round = RoundRecord::new(k, weights, returns, adversary_norm, stats);
        round.active = Some(active);
        round.comm = Some(table.comm.clone());
        round.cross_eval = cross;
        record.push(round);
    }

    record.final_comm = Some(table.comm.clone());
    record.finish(current, &adversaries);
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::generate_maze;
    use crate::rng::stream;

    fn table(comm: Vec<u64>) -> CommTable {
        CommTable { comm, base_comm: 8, low_comm: 8, high_comm: 32, wait_comm: 600, r_th: 0.0 }
    }

    fn matrix(rows: &[&[f64]]) -> CrossEvalMatrix {
        CrossEvalMatrix {
            rows: rows
                .iter()
                .map(|r| CrossEvalRow { assignment: (0..r.len()).collect(), rewards: r.to_vec() })
                .collect(),
        }
    }

    #[test]
    fn interval_branches() {
        // pass -> low; fail at high -> doubled; fail at low -> high; fail at 64 -> 128.
        let mut m = matrix(&[&[1.0, -1.0, -1.0, -0.5], &[0.5, -1.0, -1.0, -0.5]]);
        let t = update_comm_intervals(&mut m, &table(vec![32, 32, 8, 64])).unwrap();
        assert_eq!(t.comm, vec![8, 64, 32, 128]);
        assert!(m.is_empty());
        assert!(update_comm_intervals(&mut m, &t).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut m = matrix(&[&[0.0, -0.01]]);
        let t = update_comm_intervals(&mut m, &table(vec![32, 8])).unwrap();
        assert_eq!(t.comm, vec![8, 32]);
    }

    #[test]
    fn comm_table_validates_constants() {
        assert!(CommTable::new(3, 8, 16, 32, 10, 0.0).is_err());
        assert!(CommTable::new(3, 8, 0, 32, 10, 0.0).is_err());
        assert_eq!(CommTable::new(3, 8, 8, 32, 10, 0.0).unwrap().comm, vec![8, 8, 8]);
    }

    #[test]
    fn two_agents_each_get_one_evaluation() {
        let mazes: Vec<Maze> = (0..2).map(|i| generate_maze(i, 10, 10, 0.1).unwrap()).collect();
        let policies = vec![PolicyTable::gridworld(); 2];
        let mut rng = stream(3, Stream::CrossEval, 0);
        let mut seen_swap = false;
        for _ in 0..50 {
            let row =
                cross_eval(&policies, &mazes, &BTreeSet::new(), 1, &LearningConfig::default(), &mut rng).unwrap();
            assert!(row.assignment == vec![0, 1] || row.assignment == vec![1, 0]);
            seen_swap |= row.assignment == vec![1, 0];
        }
        assert!(seen_swap);
    }

    #[test]
    fn all_adversarial_environments_report_fake_reward() {
        let mazes: Vec<Maze> = (0..4).map(|i| generate_maze(i, 10, 10, 0.1).unwrap()).collect();
        let policies = vec![PolicyTable::gridworld(); 4];
        let adv: BTreeSet<usize> = (0..4).collect();
        let mut rng = stream(3, Stream::CrossEval, 0);
        let row = cross_eval(&policies, &mazes, &adv, 3, &LearningConfig::default(), &mut rng).unwrap();
        assert_eq!(row.rewards, vec![FAKE_REWARD; 4]);
    }

    #[test]
    fn column_means_average_rows() {
        let m = matrix(&[&[1.0, 2.0], &[3.0, -2.0]]);
        assert_eq!(m.column_means(), vec![2.0, 0.0]);
        assert!(CrossEvalMatrix::default().column_means().is_empty());
    }
}
