//! Run configuration: a flat key-value table (TOML).
//!
//! ```toml
//! n = 12
//! t = 600
//! episodes = 1000
//! delta = 0.2
//! gamma = 0.95
//! seed = 1
//! attack = "adaming"
//! lambda = 1.0
//! maze_seed_base = 100
//! ```
//!
//! Every key is optional and defaults to the GridWorld headline setting.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::AttackKind;
use crate::error::{FedRlError, Result};
use crate::gridworld::{generate_maze, Maze, DEFAULT_STEP_LIMIT};
use crate::policy::{LearningConfig, Optimizer};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackChoice {
    #[default]
    None,
    Rand,
    Opposite,
    Adaming,
}

impl AttackChoice {
    pub fn kind(self) -> Option<AttackKind> {
        match self {
            AttackChoice::None => None,
            AttackChoice::Rand => Some(AttackKind::Rand),
            AttackChoice::Opposite => Some(AttackKind::OppositeGoal),
            AttackChoice::Adaming => Some(AttackKind::Adaming),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackChoice::None => "none",
            AttackChoice::Rand => "rand",
            AttackChoice::Opposite => "opposite",
            AttackChoice::Adaming => "adaming",
        }
    }
}

impl std::str::FromStr for AttackChoice {
    type Err = FedRlError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackChoice::None),
            "rand" => Ok(AttackChoice::Rand),
            "opposite" | "opposite_goal" => Ok(AttackChoice::Opposite),
            "adaming" => Ok(AttackChoice::Adaming),
            other => Err(FedRlError::Config(format!("unknown attack {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defense {
    #[default]
    Fedrl,
    Comafedrl,
}

impl Defense {
    pub fn name(self) -> &'static str {
        match self {
            Defense::Fedrl => "fedrl",
            Defense::Comafedrl => "comafedrl",
        }
    }
}

impl std::str::FromStr for Defense {
    type Err = FedRlError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedrl" => Ok(Defense::Fedrl),
            "comafedrl" => Ok(Defense::Comafedrl),
            other => Err(FedRlError::Config(format!("unknown defense {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    #[default]
    Plain,
    Adam,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Stochastic,
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Number of agents.
    pub n: usize,
    /// Smoothing-average threshold iteration.
    #[serde(rename = "t")]
    pub threshold: u64,
    /// Training episodes (= federation rounds).
    #[serde(alias = "K")]
    pub episodes: u64,
    pub delta: f64,
    pub gamma: f64,
    pub seed: u64,
    pub optimizer: OptimizerChoice,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub step_limit: usize,

    pub attack: AttackChoice,
    pub lambda: f64,
    pub sigma: f64,
    pub adversary_index: usize,

    /// Maze `i` is generated from seed `maze_seed_base + i` unless
    /// `maze_files` is non-empty.
    pub maze_seed_base: u64,
    pub hell_density: f64,
    pub maze_width: usize,
    pub maze_height: usize,
    pub maze_files: Vec<PathBuf>,

    pub defense: Defense,
    pub r_th: f64,
    pub base_comm: u64,
    pub low_comm: u64,
    pub high_comm: u64,
    pub wait_comm: u64,
    pub eval_episodes: usize,

    /// Evaluation attempts per environment.
    pub eval_attempts: usize,
    pub eval_mode: EvalMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 12,
            threshold: 600,
            episodes: 1000,
            delta: 0.2,
            gamma: 0.95,
            seed: 0,
            optimizer: OptimizerChoice::Plain,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            step_limit: DEFAULT_STEP_LIMIT,
            attack: AttackChoice::None,
            lambda: 1.0,
            sigma: 1.0,
            adversary_index: 0,
            maze_seed_base: 0,
            hell_density: 0.25,
            maze_width: 10,
            maze_height: 10,
            maze_files: Vec::new(),
            defense: Defense::Fedrl,
            r_th: 0.0,
            base_comm: 8,
            low_comm: 8,
            high_comm: 32,
            wait_comm: 600,
            eval_episodes: 5,
            eval_attempts: 100,
            eval_mode: EvalMode::Stochastic,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FedRlError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text)?;
        // Maze paths are relative to the config file.
        if let Some(dir) = path.parent() {
            for p in &mut cfg.maze_files {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn learning(&self) -> LearningConfig {
        LearningConfig {
            gamma: self.gamma,
            delta: self.delta,
            optimizer: match self.optimizer {
                OptimizerChoice::Plain => Optimizer::PlainAscent,
                OptimizerChoice::Adam => Optimizer::Adam {
                    beta1: self.adam_beta1,
                    beta2: self.adam_beta2,
                    eps: self.adam_eps,
                },
            },
            step_limit: self.step_limit,
        }
    }

    pub fn attack_kind(&self) -> Option<AttackKind> {
        self.attack.kind()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(FedRlError::Config(m));
        if self.n < 2 {
            return fail(format!("n = {} < 2", self.n));
        }
        if self.threshold < 1 {
            return fail("t must be >= 1".into());
        }
        if self.episodes < 1 {
            return fail("episodes must be >= 1".into());
        }
        self.learning().validate()?;
        if self.attack != AttackChoice::None {
            if self.adversary_index >= self.n {
                return fail(format!("adversary index {} >= n", self.adversary_index));
            }
            if self.attack == AttackChoice::Adaming && self.n < 3 {
                return fail("the cancelling attack needs n >= 3".into());
            }
            if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
                return fail(format!("lambda {} must be >= 0", self.lambda));
            }
            if !(self.sigma > 0.0) {
                return fail(format!("sigma {} must be > 0", self.sigma));
            }
        }
        if self.maze_files.is_empty() {
            if !(0.0..=0.4).contains(&self.hell_density) {
                return fail(format!("hell density {} outside [0, 0.4]", self.hell_density));
            }
        } else if self.maze_files.len() != self.n {
            return fail(format!("{} maze files for {} agents", self.maze_files.len(), self.n));
        }
        if self.eval_attempts < 1 {
            return fail("eval_attempts must be >= 1".into());
        }
        if self.defense == Defense::Comafedrl {
            if self.base_comm < 1 || self.low_comm < 1 || self.high_comm < 1 {
                return fail("communication intervals must be >= 1".into());
            }
            if !(self.low_comm <= self.base_comm && self.base_comm <= self.high_comm) {
                return fail("need low_comm <= base_comm <= high_comm".into());
            }
            if self.eval_episodes < 1 {
                return fail("eval_episodes must be >= 1".into());
            }
        }
        Ok(())
    }

    /// The per-agent mazes of this run.
    pub fn load_mazes(&self) -> Result<Vec<Maze>> {
        if self.maze_files.is_empty() {
            (0..self.n)
                .map(|i| {
                    generate_maze(
                        self.maze_seed_base + i as u64,
                        self.maze_width,
                        self.maze_height,
                        self.hell_density,
                    )
                    .map(|m| m.with_id(i))
                })
                .collect()
        } else {
            self.maze_files
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let text = std::fs::read_to_string(p).map_err(|e| FedRlError::io(p, e))?;
                    Ok(text.parse::<Maze>()?.with_id(i))
                })
                .collect()
        }
    }

    /// The same run with the attack removed: the seed-matched baseline.
    pub fn baseline(&self) -> Self {
        Self { attack: AttackChoice::None, ..self.clone() }
    }

    /// Content-addressed identifier: a hash of the canonical configuration.
    pub fn run_id(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(format!("fedrl-run-v1\n{canonical}").as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
