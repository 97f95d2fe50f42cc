//! Tabular softmax policies and the local REINFORCE update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FedRlError, Result};
use crate::gridworld::{Action, EpisodeCursor, Maze, TerminalKind, NUM_ACTIONS, NUM_STATES};

/// Dense `states × actions` parameter matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    theta: Vec<f64>,
    states: usize,
    actions: usize,
    /// Iteration index of the round that produced this table.
    pub version: u64,
}

impl PolicyTable {
    pub fn zeros(states: usize, actions: usize) -> Self {
        Self { theta: vec![0.0; states * actions], states, actions, version: 0 }
    }

    /// Zero table with the GridWorld shape (81 × 4).
    pub fn gridworld() -> Self {
        Self::zeros(NUM_STATES, NUM_ACTIONS)
    }

    pub fn from_vec(states: usize, actions: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != states * actions {
            return Err(FedRlError::Contract(format!(
                "{} parameters for a {states}x{actions} table",
                theta.len()
            )));
        }
        Ok(Self { theta, states, actions, version: 0 })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.states, self.actions)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.theta[state * self.actions..(state + 1) * self.actions]
    }

    pub fn row_mut(&mut self, state: usize) -> &mut [f64] {
        &mut self.theta[state * self.actions..(state + 1) * self.actions]
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &PolicyTable) -> bool {
        self.shape() == other.shape()
    }

    /// Euclidean norm of the flattened parameters, computed with scaling so
    /// that very large entries do not overflow.
    pub fn norm(&self) -> f64 {
        let scale = self.theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 || !scale.is_finite() {
            return scale;
        }
        scale * self.theta.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.theta.iter_mut().for_each(|v| *v *= c);
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, c: f64, other: &PolicyTable) {
        debug_assert!(self.same_shape(other));
        self.theta.iter_mut().zip(&other.theta).for_each(|(a, b)| *a += c * b);
    }

    /// Population standard deviation over all entries.
    pub fn entry_std(&self) -> f64 {
        let n = self.theta.len() as f64;
        let scale = self.theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 || !scale.is_finite() {
            return if scale == 0.0 { 0.0 } else { f64::NAN };
        }
        let mean = self.theta.iter().map(|v| v / scale).sum::<f64>() / n;
        scale * (self.theta.iter().map(|v| (v / scale - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    /// Euclidean distance between two same-shape tables.
    pub fn distance(&self, other: &PolicyTable) -> f64 {
        self.theta.iter().zip(&other.theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    /// Writes the softmax of row `state` into `out`.
    pub fn probabilities_into(&self, state: usize, out: &mut [f64]) -> Result<()> {
        if state >= self.states {
            return Err(FedRlError::Contract(format!("state {state} >= {}", self.states)));
        }
        let row = self.row(state);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if !max.is_finite() || row.iter().any(|v| !v.is_finite()) {
            return Err(FedRlError::NonFinite { row: state });
        }
        let mut sum = 0.0;
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        out.iter_mut().for_each(|o| *o /= sum);
        Ok(())
    }

    /// Softmax action distribution at `state`.
    pub fn action_probabilities(&self, state: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.actions];
        self.probabilities_into(state, &mut out)?;
        Ok(out)
    }

    /// Most probable action at `state` (lowest index on ties).
    pub fn greedy_action(&self, state: usize) -> usize {
        let row = self.row(state);
        (0..self.actions).fold(0, |best, a| if row[a] > row[best] { a } else { best })
    }

    const MAGIC: &'static [u8; 8] = b"FRLPOL01";

    /// Snapshot encoding: magic, then `states`, `actions`, `version` as
    /// little-endian u64, then the parameters as little-endian f64, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.theta.len());
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&(self.states as u64).to_le_bytes());
        out.extend_from_slice(&(self.actions as u64).to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        for v in &self.theta {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| FedRlError::Snapshot(m.to_string());
        if bytes.len() < 32 || &bytes[..8] != Self::MAGIC {
            return Err(err("missing header"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let (states, actions, version) = (word(0) as usize, word(1) as usize, word(2));
        let body = &bytes[32..];
        if states.checked_mul(actions).and_then(|n| n.checked_mul(8)) != Some(body.len()) {
            return Err(err("payload length does not match header shape"));
        }
        let theta =
            body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { theta, states, actions, version })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    PlainAscent,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    /// Discount factor in (0, 1); 0 is accepted as the degenerate case.
    pub gamma: f64,
    /// Learning rate δ.
    pub delta: f64,
    pub optimizer: Optimizer,
    pub step_limit: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            delta: 0.2,
            optimizer: Optimizer::PlainAscent,
            step_limit: crate::gridworld::DEFAULT_STEP_LIMIT,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(FedRlError::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(FedRlError::Config(format!("learning rate {} must be >= 0", self.delta)));
        }
        if self.step_limit == 0 {
            return Err(FedRlError::Config("step limit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceStep {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

/// One sampled episode and its discounted returns.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    /// `returns[t] = r_t + γ·returns[t+1]`.
    pub returns: Vec<f64>,
    pub total_reward: f64,
    pub terminal_kind: TerminalKind,
}

impl EpisodeTrace {
    pub fn from_steps(steps: Vec<TraceStep>, gamma: f64, terminal_kind: TerminalKind) -> Self {
        let mut returns = vec![0.0; steps.len()];
        let mut g = 0.0;
        for (t, s) in steps.iter().enumerate().rev() {
            g = s.reward + gamma * g;
            returns[t] = g;
        }
        let total_reward = steps.iter().map(|s| s.reward).sum();
        Self { steps, returns, total_reward, terminal_kind }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn reached_goal(&self) -> bool {
        self.terminal_kind == TerminalKind::ReachedGoal
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Runs one episode from the maze's source, sampling actions from `policy`.
pub fn run_episode<R: Rng + ?Sized>(
    policy: &PolicyTable,
    maze: &Maze,
    config: &LearningConfig,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    let mut cursor = EpisodeCursor::new(maze, config.step_limit);
    let mut probs = [0.0; NUM_ACTIONS];
    let mut steps = Vec::new();
    loop {
        let state = cursor.state().index();
        policy.probabilities_into(state, &mut probs)?;
        let action = sample_index(&probs, rng);
        let outcome = cursor.step(Action::from_index(action).expect("action index in range"))?;
        steps.push(TraceStep { state, action, reward: outcome.reward });
        if outcome.terminal {
            return Ok(EpisodeTrace::from_steps(steps, config.gamma, outcome.terminal_kind));
        }
    }
}

/// Runs one episode following the greedy action at every state.
pub fn run_greedy_episode(policy: &PolicyTable, maze: &Maze, step_limit: usize) -> Result<EpisodeTrace> {
    let mut cursor = EpisodeCursor::new(maze, step_limit);
    let mut steps = Vec::new();
    loop {
        let state = cursor.state().index();
        let action = policy.greedy_action(state);
        let outcome = cursor.step(Action::from_index(action).expect("action index in range"))?;
        steps.push(TraceStep { state, action, reward: outcome.reward });
        if outcome.terminal {
            return Ok(EpisodeTrace::from_steps(steps, 0.0, outcome.terminal_kind));
        }
    }
}

/// Gradient of `Σ_t G_t · log π(a_t | s_t)` with respect to every entry of
/// the table, evaluated at the current parameters.
///
/// For a softmax row the derivative of `log π(a|s)` is `1 − π(a|s)` on the
/// taken action and `−π(a'|s)` on the others.
pub fn episode_gradient(policy: &PolicyTable, trace: &EpisodeTrace) -> Result<PolicyTable> {
    let mut grad = PolicyTable::zeros(policy.states(), policy.actions());
    let mut probs = vec![0.0; policy.actions()];
    for (step, &g) in trace.steps.iter().zip(&trace.returns) {
        if step.action >= policy.actions() {
            return Err(FedRlError::Contract(format!("action {} out of range", step.action)));
        }
        policy.probabilities_into(step.state, &mut probs)?;
        let row = grad.row_mut(step.state);
        for (a, (r, p)) in row.iter_mut().zip(&probs).enumerate() {
            let indicator = if a == step.action { 1.0 } else { 0.0 };
            *r += g * (indicator - p);
        }
    }
    Ok(grad)
}

/// Per-agent optimizer memory.
#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerState {
    Plain,
    /// Row-lazy Adam: moments and steps are only touched for rows that carry
    /// gradient in the current update.
    Adam { m: Vec<f64>, v: Vec<f64>, row_steps: Vec<u64> },
}

impl OptimizerState {
    pub fn new(optimizer: &Optimizer, states: usize, actions: usize) -> Self {
        match optimizer {
            Optimizer::PlainAscent => OptimizerState::Plain,
            Optimizer::Adam { .. } => OptimizerState::Adam {
                m: vec![0.0; states * actions],
                v: vec![0.0; states * actions],
                row_steps: vec![0; states],
            },
        }
    }
}

/// REINFORCE step on `policy`: ascends (`sign = +1`) or descends
/// (`sign = −1`) the episode objective `Σ_t G_t · log π(a_t|s_t)`.
///
/// Only rows visited in the trace change.
pub fn reinforce_update(
    policy: &mut PolicyTable,
    trace: &EpisodeTrace,
    config: &LearningConfig,
    sign: f64,
    state: &mut OptimizerState,
) -> Result<()> {
    if trace.is_empty() {
        return Err(FedRlError::Contract("empty trace".into()));
    }
    if sign != 1.0 && sign != -1.0 {
        return Err(FedRlError::Contract(format!("sign must be ±1, got {sign}")));
    }
    let grad = episode_gradient(policy, trace)?;
    let mut visited = vec![false; policy.states()];
    trace.steps.iter().for_each(|s| visited[s.state] = true);
    let actions = policy.actions();
    match (state, config.optimizer) {
        (OptimizerState::Plain, _) => {
            for s in (0..policy.states()).filter(|&s| visited[s]) {
                let g = grad.row(s).to_vec();
                for (p, g) in policy.row_mut(s).iter_mut().zip(g) {
                    *p += sign * config.delta * g;
                }
            }
        }
        (OptimizerState::Adam { m, v, row_steps }, Optimizer::Adam { beta1, beta2, eps }) => {
            for s in (0..policy.states()).filter(|&s| visited[s]) {
                row_steps[s] += 1;
                let t = row_steps[s] as i32;
                let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                for a in 0..actions {
                    let i = s * actions + a;
                    let g = sign * grad.as_slice()[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let step = config.delta * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    policy.as_mut_slice()[i] += step;
                }
            }
        }
        (OptimizerState::Adam { .. }, Optimizer::PlainAscent) => {
            return Err(FedRlError::Contract("Adam state with plain-ascent config".into()))
        }
    }
    if !policy.is_finite() {
        let row = (0..policy.states()).find(|&s| policy.row(s).iter().any(|v| !v.is_finite()));
        return Err(FedRlError::NonFinite { row: row.unwrap_or(0) });
    }
    Ok(())
}
