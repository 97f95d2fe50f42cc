//! Per-round training records, emitted as JSONL.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::federation::{mean_table, SmoothingWeights};
use crate::policy::PolicyTable;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    /// Population standard deviation of the mean non-adversarial server output.
    pub consensus_std: f64,
    pub consensus_norm: f64,
    pub honest_norm_mean: f64,
    /// `max_i ‖θ_i^{k+} − mean‖` over non-adversarial agents.
    pub spread: f64,
}

/// One cross-evaluation round: environment `i` evaluated policy
/// `assignment[i]`; `rewards[j]` is the mean cumulative reward reported for
/// policy `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossEvalRow {
    pub assignment: Vec<usize>,
    pub rewards: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub alpha: f64,
    pub beta: f64,
    /// Cumulative training reward per agent; `None` for adversaries and for
    /// agents that did not train this round.
    pub returns: Vec<Option<f64>>,
    pub mean_return: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adversary_share_norm: Option<f64>,
    #[serde(flatten)]
    pub stats: RoundStats,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub active: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comm: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cross_eval: Option<CrossEvalRow>,
}

impl RoundRecord {
    pub fn new(
        round: u64,
        weights: SmoothingWeights,
        returns: Vec<Option<f64>>,
        adversary_share_norm: Option<f64>,
        stats: RoundStats,
    ) -> Self {
        let vals: Vec<f64> = returns.iter().flatten().copied().collect();
        let mean_return =
            if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
        Self {
            round,
            alpha: weights.alpha,
            beta: weights.beta,
            returns,
            mean_return,
            adversary_share_norm,
            stats,
            active: None,
            comm: None,
            cross_eval: None,
        }
    }
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct TrainingRecord {
    pub n: usize,
    pub adversaries: BTreeSet<usize>,
    pub rounds: Vec<RoundRecord>,
    /// Last server output held by each agent.
    pub final_received: Vec<PolicyTable>,
    /// Mean of the non-adversarial agents' last server outputs.
    pub unified: PolicyTable,
    /// Final communication intervals (adaptive-communication runs only).
    pub final_comm: Option<Vec<u64>>,
}

impl TrainingRecord {
    pub fn new(n: usize, adversaries: BTreeSet<usize>) -> Self {
        Self {
            n,
            adversaries,
            rounds: Vec::new(),
            final_received: Vec::new(),
            unified: PolicyTable::gridworld(),
            final_comm: None,
        }
    }

    pub fn push(&mut self, round: RoundRecord) {
        self.rounds.push(round);
    }

    pub fn finish(&mut self, received: Vec<PolicyTable>, adversaries: &BTreeSet<usize>) {
        self.unified = mean_table(
            received.iter().enumerate().filter(|(i, _)| !adversaries.contains(i)).map(|(_, p)| p),
        )
        .unwrap_or_else(PolicyTable::gridworld);
        self.final_received = received;
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.rounds {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| crate::error::FedRlError::io("<jsonl>", e))?;
        }
        Ok(())
    }

    /// Mean communication interval of adversarial and non-adversarial agents.
    pub fn mean_intervals(&self) -> Option<(f64, f64)> {
        let comm = self.final_comm.as_ref()?;
        let mean = |pred: &dyn Fn(usize) -> bool| {
            let xs: Vec<f64> = (0..comm.len()).filter(|&i| pred(i)).map(|i| comm[i] as f64).collect();
            if xs.is_empty() {
                f64::NAN
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        Some((mean(&|i| self.adversaries.contains(&i)), mean(&|i| !self.adversaries.contains(&i))))
    }
}
