//! Model-poisoning threat models and the analytical helpers for the
//! information-cancelling attack.
//!
//! An adversary `l` shares `θ_l^{k−} = λ·θ_adv^k`. Before scaling, `θ_adv`
//! is normalized to the norm of the last server output the adversary
//! received, which tracks the non-adversarial parameter norm.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FedRlError, Result};
use crate::federation::SmoothingWeights;
use crate::gridworld::Maze;
use crate::policy::{reinforce_update, run_episode, LearningConfig, OptimizerState, PolicyTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Gaussian random parameters.
    Rand,
    /// Parameters trained to minimize the adversary's own return.
    OppositeGoal,
    /// Adversarial attack by minimizing information gain.
    Adaming,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Rand => "rand",
            AttackKind::OppositeGoal => "opposite",
            AttackKind::Adaming => "adaming",
        }
    }
}

/// Adversary bookkeeping.
#[derive(Clone, Debug)]
pub struct AttackState {
    pub kind: AttackKind,
    /// Scaling factor λ, constant across rounds.
    pub lambda: f64,
    /// Standard deviation of the random attack before normalization.
    pub sigma: f64,
    /// Last share sent to the server, `θ_l^{(k−1)−}`.
    pub prev_shared: PolicyTable,
    /// Last server output received, `θ_l^{(k−1)+}`.
    pub prev_received: PolicyTable,
    /// Weights the server used to produce `prev_received`.
    pub prev_weights: Option<SmoothingWeights>,
    /// Opposite-goal policy trained on the adversary's own maze.
    pub local_policy: PolicyTable,
    local_optimizer: OptimizerState,
}

impl AttackState {
    pub fn new(kind: AttackKind, lambda: f64, sigma: f64, learning: &LearningConfig) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(FedRlError::Config(format!("scaling factor {lambda} must be >= 0")));
        }
        if kind == AttackKind::Rand && !(sigma > 0.0 && sigma.is_finite()) {
            return Err(FedRlError::Config(format!("random-attack sigma {sigma} must be > 0")));
        }
        let zero = PolicyTable::gridworld();
        let (s, a) = zero.shape();
        Ok(Self {
            kind,
            lambda,
            sigma,
            prev_shared: zero.clone(),
            prev_received: zero.clone(),
            prev_weights: None,
            local_optimizer: OptimizerState::new(&learning.optimizer, s, a),
            local_policy: zero,
        })
    }

    /// Norm the Rand and OppositeGoal shares are normalized to before
    /// λ-scaling: the norm of the weighted mean of the other agents' last
    /// shares, `‖prev_received − α·prev_shared‖ / (1 − α)`.
    ///
    /// The adversary's own share is removed first; otherwise the target would
    /// feed back on itself with gain `α·λ` and overflow for large λ. Zero
    /// until the server has mixed in other agents.
    pub fn norm_target(&self) -> f64 {
        match self.prev_weights {
            Some(w) if w.beta > 0.0 && w.alpha < 1.0 => {
                let mut others = self.prev_received.clone();
                others.add_scaled(-w.alpha, &self.prev_shared);
                others.norm() / (1.0 - w.alpha)
            }
            _ => 0.0,
        }
    }

    pub fn zero_share(&self) -> PolicyTable {
        let (s, a) = self.prev_received.shape();
        PolicyTable::zeros(s, a)
    }

    /// Rescales `raw` to `target_norm`, then multiplies by λ. A zero raw
    /// table or zero target yields a zero share.
    fn scaled_share(&self, mut raw: PolicyTable, target_norm: f64) -> PolicyTable {
        let norm = raw.norm();
        if norm == 0.0 || target_norm == 0.0 {
            return self.zero_share();
        }
        raw.scale(target_norm / norm);
        raw.scale(self.lambda);
        raw
    }

    /// Unscaled Gaussian draw: every entry i.i.d. `N(0, σ)`.
    pub fn sample_gaussian<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PolicyTable> {
        let normal = Normal::new(0.0, self.sigma)
            .map_err(|e| FedRlError::Config(format!("sigma {}: {e}", self.sigma)))?;
        let mut raw = self.zero_share();
        raw.as_mut_slice().iter_mut().for_each(|v| *v = normal.sample(rng));
        Ok(raw)
    }

    /// Random-policy attack, redrawn every round.
    pub fn rand_share<R: Rng + ?Sized>(&self, rng: &mut R, target_norm: f64) -> Result<PolicyTable> {
        let raw = self.sample_gaussian(rng)?;
        Ok(self.scaled_share(raw, target_norm))
    }

    /// Trains the local policy for one episode against its own return and
    /// shares it, normalized and scaled.
    pub fn opposite_goal_step<R: Rng + ?Sized>(
        &mut self,
        maze: &Maze,
        learning: &LearningConfig,
        rng: &mut R,
        target_norm: f64,
    ) -> Result<PolicyTable> {
        let trace = run_episode(&self.local_policy, maze, learning, rng)?;
        reinforce_update(&mut self.local_policy, &trace, learning, -1.0, &mut self.local_optimizer)?;
        Ok(self.scaled_share(self.local_policy.clone(), target_norm))
    }

    /// Information-cancelling share.
    ///
    /// The server produced `prev_received = α·prev_shared + β·Σ_{j≠l} θ_j`
    /// with `weights`, so the sum of the other agents' last shares is
    /// recovered exactly as `(prev_received − α·prev_shared)/β`. The share is
    /// `−λ/(n−1)` times that sum: with `λ = n − 1` it cancels everything the
    /// other agents contributed in the previous round.
    pub fn adaming_share(&self, weights: SmoothingWeights) -> Result<PolicyTable> {
        if !(weights.beta > 0.0) {
            return Err(FedRlError::DegenerateWeights { beta: weights.beta });
        }
        // The smoothing weights fix n through α + (n − 1)β = 1.
        let others = (1.0 - weights.alpha) / weights.beta;
        let mut sum = self.prev_received.clone();
        sum.add_scaled(-weights.alpha, &self.prev_shared);
        sum.scale(1.0 / weights.beta);
        sum.scale(-self.lambda / others);
        Ok(sum)
    }
}

/// Residual-information measure of the cancelling attack:
/// `|α − β·λ/(n−1)| + |β·(1 − λ/(n−1))·(n−2)|`.
pub fn eval_g(lambda: f64, n: usize, alpha: f64, beta: f64) -> Result<f64> {
    if n < 3 {
        return Err(FedRlError::Contract(format!("g is defined for n >= 3, got {n}")));
    }
    let m = (n - 1) as f64;
    Ok((alpha - beta * lambda / m).abs() + (beta * (1.0 - lambda / m) * (n - 2) as f64).abs())
}

/// Steady-state value of [`eval_g`], `(n − 1 − λ)/n`.
pub fn g_steady_state(lambda: f64, n: usize) -> f64 {
    (n as f64 - 1.0 - lambda) / n as f64
}

/// Scaling factor that minimizes `g` for `n >= 3` agents.
pub fn optimal_lambda(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(FedRlError::Contract(format!("optimal scaling needs n >= 3, got {n}")));
    }
    Ok((n - 1) as f64)
}

/// Scaling factor giving `n2` agents the same steady-state residual as
/// `lambda1` gives `n1` agents.
pub fn lambda_for_agents(lambda1: f64, n1: usize, n2: usize) -> Result<f64> {
    if n1 < 3 || n2 < 3 {
        return Err(FedRlError::Contract(format!("agent counts must be >= 3, got {n1} and {n2}")));
    }
    Ok(n2 as f64 * (1.0 + lambda1) / n1 as f64 - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub mean_kl: f64,
    pub normalized_param_distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlVariant {
    /// `KL(π_a(·|s) ‖ π_b(·|s))`.
    Direct,
    /// `KL(q_a(·|s) ‖ π_b(·|s))` with `q_a ∝ 1 − π_a`, the complement of an
    /// opposite-goal policy renormalized to a distribution.
    OppositeGoal,
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(&pi, _)| pi > 0.0).map(|(&pi, &qi)| pi * (pi / qi).ln()).sum()
}

/// Mean per-state KL divergence between the softmax rows of `a` and `b`, and
/// the Euclidean distance between the L2-normalized flattened parameters.
pub fn policy_similarity(a: &PolicyTable, b: &PolicyTable, variant: KlVariant) -> Result<Similarity> {
    if !a.same_shape(b) {
        return Err(FedRlError::Contract("tables differ in shape".into()));
    }
    let (states, actions) = a.shape();
    let mut total = 0.0;
    for s in 0..states {
        let mut pa = a.action_probabilities(s)?;
        let pb = b.action_probabilities(s)?;
        if variant == KlVariant::OppositeGoal && actions > 1 {
            pa.iter_mut().for_each(|p| *p = (1.0 - *p) / (actions - 1) as f64);
        }
        total += kl(&pa, &pb);
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(FedRlError::UndefinedDistance);
    }
    let dist = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x / na - y / nb).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(Similarity { mean_kl: total / states as f64, normalized_param_distance: dist })
}
