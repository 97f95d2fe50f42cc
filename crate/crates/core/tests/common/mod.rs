//! Property checks shared by the proptest suite and the acceptance report.
//! Each check returns `Err(description)` on the first violation.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;

use fedrl::attacks::{AttackKind, AttackState};
use fedrl::comafedrl::{cross_eval, update_comm_intervals, CommTable, CrossEvalMatrix};
use fedrl::federation::{aggregate, Adversary, SmoothingSchedule, SmoothingWeights};
use fedrl::gridworld::{generate_maze, Maze};
use fedrl::policy::{episode_gradient, EpisodeTrace, LearningConfig, PolicyTable, TraceStep};
use fedrl::record::CrossEvalRow;
use fedrl::rng::SimRng;

pub type Check = Result<(), String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn random_table<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> PolicyTable {
    let mut t = PolicyTable::gridworld();
    t.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    t
}

pub fn softmax_normalized_and_shift_invariant(table: &PolicyTable, shift: f64) -> Check {
    for s in 0..table.states() {
        let p = table.action_probabilities(s).map_err(|e| e.to_string())?;
        let sum: f64 = p.iter().sum();
        ensure((sum - 1.0).abs() <= 1e-9, || format!("row {s} sums to {sum}"))?;
        let mut shifted = table.clone();
        shifted.row_mut(s).iter_mut().for_each(|v| *v += shift);
        let q = shifted.action_probabilities(s).map_err(|e| e.to_string())?;
        for (a, b) in p.iter().zip(&q) {
            ensure((a - b).abs() <= 1e-12, || format!("row {s} changed under shift {shift}: {a} vs {b}"))?;
        }
    }
    Ok(())
}

fn log_objective(policy: &PolicyTable, trace: &EpisodeTrace) -> f64 {
    trace
        .steps
        .iter()
        .zip(&trace.returns)
        .map(|(s, g)| g * policy.action_probabilities(s.state).unwrap()[s.action].ln())
        .sum()
}

/// Random trace over a handful of states so that rows repeat.
pub fn random_trace<R: Rng + ?Sized>(rng: &mut R, len: usize) -> EpisodeTrace {
    let states: Vec<usize> = (0..3).map(|_| rng.random_range(0..81)).collect();
    let steps = (0..len)
        .map(|_| TraceStep {
            state: states[rng.random_range(0..states.len())],
            action: rng.random_range(0..4),
            reward: rng.random_range(-1.0..1.0),
        })
        .collect();
    EpisodeTrace::from_steps(steps, 0.95, fedrl::gridworld::TerminalKind::StepLimit)
}

/// Analytic gradient against central finite differences on every entry of
/// the visited rows (others must be exactly zero).
pub fn gradient_matches_finite_differences(policy: &PolicyTable, trace: &EpisodeTrace) -> Check {
    let grad = episode_gradient(policy, trace).map_err(|e| e.to_string())?;
    let visited: BTreeSet<usize> = trace.steps.iter().map(|s| s.state).collect();
    let h = 1e-5;
    for s in 0..policy.states() {
        for a in 0..policy.actions() {
            let analytic = grad.row(s)[a];
            if !visited.contains(&s) {
                ensure(analytic == 0.0, || format!("unvisited row {s} has gradient {analytic}"))?;
                continue;
            }
            let (mut up, mut down) = (policy.clone(), policy.clone());
            up.row_mut(s)[a] += h;
            down.row_mut(s)[a] -= h;
            let fd = (log_objective(&up, trace) - log_objective(&down, trace)) / (2.0 * h);
            let scale = analytic.abs().max(fd.abs()).max(1e-3);
            ensure((analytic - fd).abs() / scale <= 1e-5, || {
                format!("entry ({s},{a}): analytic {analytic} vs finite difference {fd}")
            })?;
        }
    }
    Ok(())
}

pub fn aggregation_linear_and_fixed_point(shares: &[PolicyTable], weights: SmoothingWeights, c: f64) -> Check {
    let out = aggregate(shares, weights).map_err(|e| e.to_string())?;
    let scaled: Vec<PolicyTable> = shares.iter().map(|s| s.scaled(c)).collect();
    let out_scaled = aggregate(&scaled, weights).map_err(|e| e.to_string())?;
    for (a, b) in out.iter().zip(&out_scaled) {
        let err = a.scaled(c).distance(b);
        ensure(err <= 1e-10 * (1.0 + b.norm()), || format!("linearity error {err}"))?;
    }
    // Identical shares are a fixed point whenever the weights are normalized.
    let consensus = vec![shares[0].clone(); shares.len()];
    for o in aggregate(&consensus, weights).map_err(|e| e.to_string())? {
        let err = o.distance(&shares[0]);
        ensure(err <= 1e-10 * (1.0 + shares[0].norm()), || format!("fixed-point error {err}"))?;
    }
    Ok(())
}

/// The aggregated output splits into previous outputs, weighted local
/// gradient steps and adversarial shares.
pub fn decomposition_identity<R: Rng + ?Sized>(rng: &mut R, n: usize, adversary: usize, k: u64) -> Check {
    let w = SmoothingSchedule::new(n, 600).map_err(|e| e.to_string())?.weights(k).map_err(|e| e.to_string())?;
    let delta = rng.random_range(0.01..1.0);
    let zero = PolicyTable::gridworld();
    let prev: Vec<PolicyTable> =
        (0..n).map(|i| if i == adversary { zero.clone() } else { random_table(rng, 2.0) }).collect();
    let grads: Vec<PolicyTable> =
        (0..n).map(|i| if i == adversary { zero.clone() } else { random_table(rng, 1.0) }).collect();
    let adv: Vec<PolicyTable> =
        (0..n).map(|i| if i == adversary { random_table(rng, 5.0) } else { zero.clone() }).collect();
    let shares: Vec<PolicyTable> = (0..n)
        .map(|i| {
            let mut s = prev[i].clone();
            s.add_scaled(delta, &grads[i]);
            s.add_scaled(1.0, &adv[i]);
            s
        })
        .collect();
    let whole = aggregate(&shares, w).map_err(|e| e.to_string())?;
    let parts = [aggregate(&prev, w), aggregate(&grads, w), aggregate(&adv, w)];
    let [p, g, a] = parts.map(|r| r.unwrap());
    for i in 0..n {
        let mut sum = p[i].clone();
        sum.add_scaled(delta, &g[i]);
        sum.add_scaled(1.0, &a[i]);
        let err = sum.distance(&whole[i]);
        ensure(err <= 1e-10 * (1.0 + whole[i].norm()), || format!("agent {i}: decomposition error {err}"))?;
    }
    Ok(())
}

/// Honest agents keep resharing fixed tables (zero learning rate, no
/// adoption of the server output). With steady-state weights and
/// `λ = n − 1`, the cancelling adversary zeroes every honest output from the
/// second round on: its share removes all honest contributions, including
/// the β-weighted copy of the receiving agent's own table, which offsets the
/// α-weighted one exactly.
pub fn perfect_cancellation<R: Rng + ?Sized>(rng: &mut R, n: usize, rounds: u64) -> Check {
    let learning = LearningConfig { delta: 0.0, ..LearningConfig::default() };
    let state = AttackState::new(AttackKind::Adaming, (n - 1) as f64, 1.0, &learning).map_err(|e| e.to_string())?;
    let mut adv = Adversary::new(0, 0, state);
    let maze = generate_maze(0, 10, 10, 0.1).map_err(|e| e.to_string())?;
    let honest: Vec<PolicyTable> = (1..n).map(|_| random_table(rng, 3.0)).collect();
    let w = SmoothingWeights::uniform(n);
    for k in 1..=rounds {
        let mut shares = vec![adv.share(&maze, &learning).map_err(|e| e.to_string())?];
        shares.extend(honest.iter().cloned());
        let out = aggregate(&shares, w).map_err(|e| e.to_string())?;
        adv.receive(out[0].clone(), w);
        if k >= 2 {
            for (i, o) in out.iter().enumerate().skip(1) {
                let worst = o.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
                ensure(worst <= 1e-9, || format!("round {k}, agent {i}: residual {worst}"))?;
            }
        }
    }
    Ok(())
}

/// Every cross-evaluation round is a permutation: each policy evaluated once,
/// each environment used once.
pub fn cross_eval_permutations(rng: &mut SimRng, rounds: usize) -> Check {
    let learning = LearningConfig { step_limit: 5, ..LearningConfig::default() };
    let pool: Vec<Maze> = (0..12).map(|i| generate_maze(100 + i, 6, 6, 0.15).unwrap().with_id(i as usize)).collect();
    for r in 0..rounds {
        let n = rng.random_range(2..=12);
        let policies: Vec<PolicyTable> = (0..n).map(|_| random_table(rng, 1.0)).collect();
        let adversaries: BTreeSet<usize> = (0..n).filter(|_| rng.random_bool(0.2)).collect();
        let row: CrossEvalRow =
            cross_eval(&policies, &pool[..n], &adversaries, 1, &learning, rng).map_err(|e| e.to_string())?;
        let mut seen = row.assignment.clone();
        seen.sort_unstable();
        ensure(seen == (0..n).collect::<Vec<_>>(), || format!("round {r}: assignment {:?}", row.assignment))?;
        ensure(row.rewards.len() == n, || format!("round {r}: {} rewards for {n} policies", row.rewards.len()))?;
        for (env, &p) in row.assignment.iter().enumerate() {
            if adversaries.contains(&env) {
                ensure(row.rewards[p] == -1.0, || format!("round {r}: adversarial env {env} reported {}", row.rewards[p]))?;
            }
        }
    }
    Ok(())
}

/// Interval update branches: pass resets to low, fail at low jumps to high,
/// fail elsewhere doubles.
pub fn interval_branch_table() -> Check {
    let table = CommTable { comm: vec![32, 32, 8, 64, 8], ..CommTable::new(5, 8, 8, 32, 600, 0.0).unwrap() };
    let mut matrix = CrossEvalMatrix::default();
    // Column means: pass, fail, fail, fail, pass (0 is the inclusive threshold).
    matrix.push(CrossEvalRow { assignment: (0..5).collect(), rewards: vec![0.5, -0.2, -1.0, -0.4, 0.0] });
    matrix.push(CrossEvalRow { assignment: (0..5).collect(), rewards: vec![0.3, -0.2, -1.0, -0.4, 0.0] });
    let next = update_comm_intervals(&mut matrix, &table).map_err(|e| e.to_string())?;
    ensure(next.comm == vec![8, 64, 32, 128, 8], || format!("intervals {:?}", next.comm))?;
    ensure(matrix.is_empty(), || "rows not cleared".into())?;
    // Self-correction: a flagged agent that passes later returns to low.
    let mut again = CrossEvalMatrix::default();
    again.push(CrossEvalRow { assignment: (0..5).collect(), rewards: vec![0.1; 5] });
    let healed = update_comm_intervals(&mut again, &next).map_err(|e| e.to_string())?;
    ensure(healed.comm == vec![8; 5], || format!("after passing: {:?}", healed.comm))
}
