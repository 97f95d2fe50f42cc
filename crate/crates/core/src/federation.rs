//! The MT-FedRL server: smoothing-average aggregation and the synchronous
//! round loop.
//!
//! Every round each agent shares its post-update parameters `θ_i^{k−}`; the
//! server returns `θ_i^{k+} = α·θ_i^{k−} + β·Σ_{j≠i} θ_j^{k−}` to agent `i`.
//! Adversarial shares enter the sum like any other.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, AttackState};
use crate::config::RunConfig;
use crate::error::{FedRlError, Result};
use crate::gridworld::Maze;
use crate::policy::{reinforce_update, run_episode, LearningConfig, OptimizerState, PolicyTable};
use crate::record::{RoundRecord, RoundStats, TrainingRecord};
use crate::rng::{self, SimRng, Stream};

/// Smoothing-average weights for one round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingWeights {
    /// Weight on the agent's own share.
    pub alpha: f64,
    /// Weight on each other agent's share.
    pub beta: f64,
}

impl SmoothingWeights {
    pub fn uniform(n: usize) -> Self {
        let w = 1.0 / n as f64;
        Self { alpha: w, beta: w }
    }

    /// Restricts the weights to `m` participating agents and renormalizes
    /// them so that `alpha + (m − 1)·beta = 1`.
    pub fn restricted(self, m: usize) -> Self {
        if m <= 1 {
            return Self { alpha: 1.0, beta: 0.0 };
        }
        let others = (m - 1) as f64;
        let beta = self.beta / (self.alpha + others * self.beta);
        Self { alpha: 1.0 - others * beta, beta }
    }
}

/// Iteration-indexed smoothing weights with threshold iteration `t`.
///
/// `α^k = min(1, max(1, t/k)/n)` and `β^k = (1 − α^k)/(n − 1)`: the agent's
/// own share dominates early and the weights settle at `1/n` from `k = t` on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSchedule {
    pub n: usize,
    pub t: u64,
}

impl SmoothingSchedule {
    pub fn new(n: usize, t: u64) -> Result<Self> {
        if n < 2 {
            return Err(FedRlError::Config(format!("need at least 2 agents, got {n}")));
        }
        if t < 1 {
            return Err(FedRlError::Config("threshold iteration must be >= 1".into()));
        }
        Ok(Self { n, t })
    }

    pub fn weights(&self, k: u64) -> Result<SmoothingWeights> {
        if k < 1 {
            return Err(FedRlError::Contract("rounds are numbered from 1".into()));
        }
        let n = self.n as f64;
        if k >= self.t {
            return Ok(SmoothingWeights::uniform(self.n));
        }
        let alpha = (1.0f64).min((self.t as f64 / k as f64).max(1.0) / n);
        Ok(SmoothingWeights { alpha, beta: (1.0 - alpha) / (n - 1.0) })
    }
}

/// Shares received by the server in one round.
#[derive(Clone, Debug)]
pub struct RoundState {
    pub shared_in: Vec<PolicyTable>,
    pub adversary_set: BTreeSet<usize>,
}

impl RoundState {
    pub fn aggregate(&self, weights: SmoothingWeights) -> Result<Vec<PolicyTable>> {
        aggregate(&self.shared_in, weights)
    }
}

/// Smoothing average of `shared` for every agent, summing in index order.
pub fn aggregate(shared: &[PolicyTable], weights: SmoothingWeights) -> Result<Vec<PolicyTable>> {
    let Some(first) = shared.first() else {
        return Ok(Vec::new());
    };
    if let Some(bad) = shared.iter().position(|p| !p.same_shape(first)) {
        return Err(FedRlError::Contract(format!("share {bad} has a different shape")));
    }
    let (states, actions) = first.shape();
    Ok((0..shared.len())
        .map(|i| {
            let mut out = PolicyTable::zeros(states, actions);
            let dst = out.as_mut_slice();
            for (j, share) in shared.iter().enumerate() {
                let w = if i == j { weights.alpha } else { weights.beta };
                dst.iter_mut().zip(share.as_slice()).for_each(|(d, s)| *d += w * s);
            }
            out.version = first.version;
            out
        })
        .collect())
}

/// Mean of the given tables.
pub fn mean_table<'a>(tables: impl IntoIterator<Item = &'a PolicyTable>) -> Option<PolicyTable> {
    let mut it = tables.into_iter();
    let mut acc = it.next()?.clone();
    let mut count = 1.0;
    for t in it {
        acc.add_scaled(1.0, t);
        count += 1.0;
    }
    acc.scale(1.0 / count);
    Some(acc)
}

/// A non-adversarial agent: keeps the latest parameters it holds, its
/// optimizer memory and its own random stream.
#[derive(Clone, Debug)]
pub struct HonestAgent {
    pub index: usize,
    pub policy: PolicyTable,
    pub optimizer: OptimizerState,
    rng: SimRng,
}

impl HonestAgent {
    pub fn new(index: usize, seed: u64, learning: &LearningConfig) -> Self {
        let policy = PolicyTable::gridworld();
        let (s, a) = policy.shape();
        Self {
            index,
            optimizer: OptimizerState::new(&learning.optimizer, s, a),
            policy,
            rng: rng::stream(seed, Stream::Agent, index as u64),
        }
    }

    /// One local episode followed by one REINFORCE step; returns the
    /// episode's cumulative reward.
    pub fn client_update(&mut self, maze: &Maze, learning: &LearningConfig) -> Result<f64> {
        let trace = run_episode(&self.policy, maze, learning, &mut self.rng)?;
        reinforce_update(&mut self.policy, &trace, learning, 1.0, &mut self.optimizer)?;
        Ok(trace.total_reward)
    }
}

/// An adversarial agent slot.
#[derive(Clone, Debug)]
pub struct Adversary {
    pub index: usize,
    pub state: AttackState,
    rng: SimRng,
}

impl Adversary {
    pub fn new(index: usize, seed: u64, state: AttackState) -> Self {
        Self { index, state, rng: rng::stream(seed, Stream::Adversary, index as u64) }
    }

    /// Produces this round's share and remembers it.
    pub fn share(&mut self, maze: &Maze, learning: &LearningConfig) -> Result<PolicyTable> {
        let target = self.state.norm_target();
        let share = match self.state.kind {
            AttackKind::Rand => self.state.rand_share(&mut self.rng, target)?,
            AttackKind::OppositeGoal => {
                self.state.opposite_goal_step(maze, learning, &mut self.rng, target)?
            }
            AttackKind::Adaming => match self.state.prev_weights {
                Some(w) if w.beta > 0.0 => self.state.adaming_share(w)?,
                // The server has not mixed in other agents yet; there is
                // nothing to cancel.
                _ => self.state.zero_share(),
            },
        };
        self.state.prev_shared = share.clone();
        Ok(share)
    }

    /// Stores the server output and the weights that produced it.
    pub fn receive(&mut self, received: PolicyTable, weights: SmoothingWeights) {
        self.state.prev_received = received;
        self.state.prev_weights = Some(weights);
    }
}

/// One federation participant.
#[derive(Clone, Debug)]
pub enum Participant {
    Honest(HonestAgent),
    Adversarial(Adversary),
}

impl Participant {
    pub fn is_adversarial(&self) -> bool {
        matches!(self, Participant::Adversarial(_))
    }
}

/// Builds the participants of a run: agent `config.adversary_index` is the
/// adversary when an attack is configured.
pub fn build_participants(config: &RunConfig) -> Result<Vec<Participant>> {
    let learning = config.learning();
    (0..config.n)
        .map(|i| {
            Ok(match config.attack_kind() {
                Some(kind) if i == config.adversary_index => Participant::Adversarial(Adversary::new(
                    i,
                    config.seed,
                    AttackState::new(kind, config.lambda, config.sigma, &learning)?,
                )),
                _ => Participant::Honest(HonestAgent::new(i, config.seed, &learning)),
            })
        })
        .collect()
}

/// Summary statistics of the honest agents' current server outputs.
pub(crate) fn round_stats(received: &[PolicyTable], adversaries: &BTreeSet<usize>) -> RoundStats {
    let honest: Vec<&PolicyTable> =
        received.iter().enumerate().filter(|(i, _)| !adversaries.contains(i)).map(|(_, p)| p).collect();
    let mean = mean_table(honest.iter().copied()).unwrap_or_else(PolicyTable::gridworld);
    let spread = honest.iter().map(|p| p.distance(&mean)).fold(0.0, f64::max);
    let norm_mean = honest.iter().map(|p| p.norm()).sum::<f64>() / honest.len().max(1) as f64;
    RoundStats { consensus_std: mean.entry_std(), consensus_norm: mean.norm(), honest_norm_mean: norm_mean, spread }
}

/// Runs synchronous MT-FedRL for `config.episodes` rounds.
pub fn run_mtfedrl(config: &RunConfig, mazes: &[Maze]) -> Result<TrainingRecord> {
    config.validate()?;
    if mazes.len() != config.n {
        return Err(FedRlError::Config(format!("{} mazes for {} agents", mazes.len(), config.n)));
    }
    let learning = config.learning();
    let schedule = SmoothingSchedule::new(config.n, config.threshold)?;
    let mut participants = build_participants(config)?;
    let adversaries: BTreeSet<usize> =
        participants.iter().enumerate().filter(|(_, p)| p.is_adversarial()).map(|(i, _)| i).collect();
    let mut received = vec![PolicyTable::gridworld(); config.n];
    let mut record = TrainingRecord::new(config.n, adversaries.clone());

    for k in 1..=config.episodes {
        let weights = schedule.weights(k)?;
        let mut shared = Vec::with_capacity(config.n);
        let mut returns = vec![None; config.n];
        let mut adversary_norm = None;
        for (i, p) in participants.iter_mut().enumerate() {
            match p {
                Participant::Honest(agent) => {
                    agent.policy = received[i].clone();
                    returns[i] = Some(agent.client_update(&mazes[i], &learning)?);
                    shared.push(agent.policy.clone());
                }
                Participant::Adversarial(adv) => {
                    let share = adv.share(&mazes[i], &learning)?;
                    adversary_norm = Some(share.norm());
                    shared.push(share);
                }
            }
        }
        received = aggregate(&shared, weights)?;
        for (i, p) in participants.iter_mut().enumerate() {
            received[i].version = k;
            if let Participant::Adversarial(adv) = p {
                adv.receive(received[i].clone(), weights);
            }
        }
        let stats = round_stats(&received, &adversaries);
        record.push(RoundRecord::new(k, weights, returns, adversary_norm, stats));
    }

    record.finish(received, &adversaries);
    Ok(record)
}
