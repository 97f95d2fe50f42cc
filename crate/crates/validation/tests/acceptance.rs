//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Every attacked run is scored against the no-attack run with the same seed,
//! maze set and defense; scores are then averaged over seeds 0, 1 and 2.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Duration;

use rand::SeedableRng;
use rayon::prelude::*;

use fedrl::config::{AttackChoice, Defense, RunConfig};
use fedrl::harness::{run_single, RunResult};
use fedrl::metrics::score_from_ratios;
use fedrl::rng::SimRng;

const SEEDS: [u64; 3] = [0, 1, 2];
const MAZE_SEED_STRIDE: u64 = 1000;

const BASELINE_MIN_WR: f64 = 0.85;
const MAX_SECONDS_PER_RUN: f64 = 300.0;
const HEADLINE_MIN_PSA: f64 = 0.90;
const WEAK_MAX_PSA: f64 = 0.65;
const WEAK_GAP: f64 = 0.25;
const STRONG_MIN_PSA: f64 = 0.90;
const TREND_BAND: f64 = 0.05;
const EQUIVALENCE_BAND: f64 = 0.05;
const DEFENDED_MAX_PSA: f64 = 0.15;
const DEFENDED_WR_BAND: f64 = 0.10;
const DEFENSE_TRANSPARENCY_BAND: f64 = 0.05;
const INTERVAL_RATIO: f64 = 2.0;

const ATTACKS: [AttackChoice; 3] = [AttackChoice::Rand, AttackChoice::Opposite, AttackChoice::Adaming];
const DELTAS: [f64; 4] = [0.1, 0.2, 0.5, 1.0];

/// The headline configuration for one seed: 12 agents, 1000 episodes,
/// threshold 600, δ = 0.2, γ = 0.95.
fn headline(seed: u64) -> RunConfig {
    RunConfig { seed, maze_seed_base: seed * MAZE_SEED_STRIDE, ..RunConfig::default() }
}

fn attacked(seed: u64, attack: AttackChoice, lambda: f64) -> RunConfig {
    RunConfig { attack, lambda, ..headline(seed) }
}

fn every_config() -> Vec<RunConfig> {
    let mut out = Vec::new();
    for seed in SEEDS {
        for lambda in [1.0, 11.0] {
            for attack in ATTACKS {
                out.push(attacked(seed, attack, lambda));
                out.push(RunConfig { defense: Defense::Comafedrl, ..attacked(seed, attack, lambda) });
            }
        }
        for delta in DELTAS {
            out.push(RunConfig { delta, ..attacked(seed, AttackChoice::Adaming, 1.0) });
        }
        out.push(RunConfig { n: 8, ..attacked(seed, AttackChoice::Adaming, 1.0) });
        out.push(RunConfig { n: 12, ..attacked(seed, AttackChoice::Adaming, 2.0) });
    }
    let baselines: Vec<RunConfig> = out.iter().map(RunConfig::baseline).collect();
    out.extend(baselines);
    let mut unique = BTreeMap::new();
    for c in out {
        unique.entry(c.run_id()).or_insert(c);
    }
    unique.into_values().collect()
}

struct Runs {
    results: BTreeMap<String, (RunResult, Duration)>,
}

impl Runs {
    fn execute(configs: &[RunConfig]) -> Self {
        let results = configs
            .par_iter()
            .map(|c| {
                let out = run_single(c).unwrap_or_else(|e| panic!("run {} failed: {e}", c.run_id()));
                (c.run_id(), (out.result, out.wall_time))
            })
            .collect();
        Self { results }
    }

    fn get(&self, c: &RunConfig) -> &RunResult {
        &self.results[&c.run_id()].0
    }

    fn wr(&self, c: &RunConfig) -> f64 {
        self.get(c).eval.wr
    }

    /// Per-seed p_sa against the seed-matched baseline.
    fn p_sa(&self, c: &RunConfig) -> f64 {
        score_from_ratios(self.wr(c), self.wr(&c.baseline())).map(|s| s.p_sa).unwrap_or(f64::NAN)
    }

    /// Seed-averaged p_sa for the configuration family `make(seed)`.
    fn mean_p_sa(&self, make: impl Fn(u64) -> RunConfig) -> f64 {
        mean(SEEDS.iter().map(|&s| self.p_sa(&make(s))))
    }

    fn mean_wr(&self, make: impl Fn(u64) -> RunConfig) -> f64 {
        mean(SEEDS.iter().map(|&s| self.wr(&make(s))))
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("{id} {} {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn coma(c: RunConfig) -> RunConfig {
    RunConfig { defense: Defense::Comafedrl, ..c }
}

fn main() -> ExitCode {
    let configs = every_config();
    let runs = Runs::execute(&configs);
    let mut report = Report { failures: 0 };

    // 1. Baseline learning and runtime.
    let base_wr = runs.mean_wr(headline);
    let slowest = SEEDS.iter().map(|&s| runs.results[&headline(s).run_id()].1.as_secs_f64()).fold(0.0, f64::max);
    report.line(
        "C1 baseline-learning",
        base_wr >= BASELINE_MIN_WR && slowest <= MAX_SECONDS_PER_RUN,
        format!("mean WR {base_wr:.3} (need >= {BASELINE_MIN_WR}); slowest seed {slowest:.2}s (limit {MAX_SECONDS_PER_RUN}s)"),
    );

    // 2. Cancelling attack at λ = 1.
    let ad1 = runs.mean_p_sa(|s| attacked(s, AttackChoice::Adaming, 1.0));
    report.line("C2 adaming-headline", ad1 >= HEADLINE_MIN_PSA, format!("p_sa {ad1:.3} (need >= {HEADLINE_MIN_PSA})"));

    // 3. Weak attacks at λ = 1.
    let rand1 = runs.mean_p_sa(|s| attacked(s, AttackChoice::Rand, 1.0));
    let opp1 = runs.mean_p_sa(|s| attacked(s, AttackChoice::Opposite, 1.0));
    report.line(
        "C3 weak-attacks",
        rand1 <= WEAK_MAX_PSA && opp1 <= WEAK_MAX_PSA && ad1 - rand1.max(opp1) >= WEAK_GAP,
        format!(
            "p_sa rand {rand1:.3}, opposite {opp1:.3} (need <= {WEAK_MAX_PSA}); adaming margin {:.3} (need >= {WEAK_GAP})",
            ad1 - rand1.max(opp1)
        ),
    );

    // 4. Every attack at λ = n − 1.
    let strong: Vec<(AttackChoice, f64)> =
        ATTACKS.iter().map(|&a| (a, runs.mean_p_sa(|s| attacked(s, a, 11.0)))).collect();
    report.line(
        "C4 attacks-at-n-1",
        strong.iter().all(|(_, p)| *p >= STRONG_MIN_PSA),
        format!(
            "p_sa {} (need each >= {STRONG_MIN_PSA})",
            strong.iter().map(|(a, p)| format!("{} {p:.3}", a.name())).collect::<Vec<_>>().join(", ")
        ),
    );

    // 5. Learning-rate trend.
    let trend: Vec<f64> = DELTAS
        .iter()
        .map(|&delta| runs.mean_p_sa(|s| RunConfig { delta, ..attacked(s, AttackChoice::Adaming, 1.0) }))
        .collect();
    report.line(
        "C5 learning-rate-trend",
        trend.windows(2).all(|w| w[1] <= w[0] + TREND_BAND),
        format!("p_sa over delta {DELTAS:?}: {trend:.3?} (non-increasing within {TREND_BAND})"),
    );

    // 6. λ and n equivalence.
    let n8 = runs.mean_p_sa(|s| RunConfig { n: 8, ..attacked(s, AttackChoice::Adaming, 1.0) });
    let n12 = runs.mean_p_sa(|s| attacked(s, AttackChoice::Adaming, 2.0));
    report.line(
        "C6 lambda-n-equivalence",
        (n8 - n12).abs() <= EQUIVALENCE_BAND && n8.min(n12) >= HEADLINE_MIN_PSA,
        format!("p_sa (lambda 1, n 8) {n8:.3} vs (lambda 2, n 12) {n12:.3} (within {EQUIVALENCE_BAND}, both >= {HEADLINE_MIN_PSA})"),
    );

    // 7. Defense at λ = 1, plus transparency without an adversary.
    let coma_base = runs.mean_wr(|s| coma(headline(s)));
    let defended: Vec<(AttackChoice, f64, f64)> = ATTACKS
        .iter()
        .map(|&a| {
            (a, runs.mean_p_sa(|s| coma(attacked(s, a, 1.0))), runs.mean_wr(|s| coma(attacked(s, a, 1.0))))
        })
        .collect();
    let defended_ok =
        defended.iter().all(|(_, p, wr)| *p <= DEFENDED_MAX_PSA && (coma_base - wr).abs() <= DEFENDED_WR_BAND);
    report.line(
        "C7 defense",
        defended_ok && (coma_base - base_wr).abs() <= DEFENSE_TRANSPARENCY_BAND,
        format!(
            "lambda 1: {}; no-attack WR defended {coma_base:.3} vs plain {base_wr:.3} (within {DEFENSE_TRANSPARENCY_BAND})",
            defended
                .iter()
                .map(|(a, p, wr)| format!("{} p_sa {p:.3} WR {wr:.3}", a.name()))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
    let strong_defended: Vec<String> = ATTACKS
        .iter()
        .map(|&a| {
            let p = runs.mean_p_sa(|s| coma(attacked(s, a, 11.0)));
            let wr = runs.mean_wr(|s| coma(attacked(s, a, 11.0)));
            format!("{} p_sa {p:.3} WR {wr:.3}", a.name())
        })
        .collect();
    println!("   info: defended at lambda n-1: {}", strong_defended.join(", "));

    // 8. Interval separation under the cancelling attack.
    let intervals: Vec<(f64, f64)> = SEEDS
        .iter()
        .map(|&s| {
            let r = runs.get(&coma(attacked(s, AttackChoice::Adaming, 1.0)));
            (r.mean_comm_adversary.unwrap_or(f64::NAN), r.mean_comm_honest.unwrap_or(f64::NAN))
        })
        .collect();
    let adv = mean(intervals.iter().map(|x| x.0));
    let honest = mean(intervals.iter().map(|x| x.1));
    report.line(
        "C8 interval-separation",
        adv >= INTERVAL_RATIO * honest,
        format!("mean interval adversary {adv:.1} vs honest {honest:.1} (need ratio >= {INTERVAL_RATIO})"),
    );

    // 9. Property suite on a fixed sample, plus full-run determinism.
    let props = property_suite(&runs);
    report.line(
        "C9 property-suite",
        props.is_ok(),
        match props {
            Ok(count) => format!("{count} checks"),
            Err(e) => e,
        },
    );

    println!("acceptance: {} of 9 criteria failed", report.failures);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn property_suite(runs: &Runs) -> Result<usize, String> {
    use fedrl::attacks::{eval_g, g_steady_state, lambda_for_agents};
    use fedrl::federation::SmoothingSchedule;

    let mut rng = SimRng::seed_from_u64(2024);
    let mut count = 0;
    let mut tally = |r: common::Check| r.map(|_| count += 1);
    for _ in 0..100 {
        let table = common::random_table(&mut rng, 10.0);
        tally(common::softmax_normalized_and_shift_invariant(&table, 37.5))?;
        let trace = common::random_trace(&mut rng, 12);
        tally(common::gradient_matches_finite_differences(&table.scaled(0.2), &trace))?;
    }
    for n in [2usize, 5, 12, 40] {
        let schedule = SmoothingSchedule::new(n, 600).map_err(|e| e.to_string())?;
        for k in [1u64, 50, 599, 600, 1000] {
            let shares: Vec<_> = (0..n).map(|_| common::random_table(&mut rng, 3.0)).collect();
            let w = schedule.weights(k).map_err(|e| e.to_string())?;
            tally(common::aggregation_linear_and_fixed_point(&shares, w, -2.5))?;
            if n >= 3 {
                tally(common::decomposition_identity(&mut rng, n, k as usize % n, k))?;
            }
        }
    }
    for n in [3usize, 8, 12, 50] {
        tally(common::perfect_cancellation(&mut rng, n, 50))?;
    }
    for n in 3..=200usize {
        let w = 1.0 / n as f64;
        for i in 0..=10 {
            let lambda = i as f64 / 10.0 * (n - 1) as f64;
            let g = eval_g(lambda, n, w, w).map_err(|e| e.to_string())?;
            tally(common::ensure((g - g_steady_state(lambda, n)).abs() <= 1e-12, || format!("g({lambda}, {n}) = {g}")))?;
        }
        tally(common::ensure(g_steady_state((n - 1) as f64, n) == 0.0, || format!("g_ss(n-1, {n}) != 0")))?;
        if n > 3 {
            tally(common::ensure(g_steady_state(1.0, n) > g_steady_state(1.0, n - 1), || format!("g_ss(1, n) not rising at {n}")))?;
        }
    }
    tally(common::ensure(g_steady_state(1.0, 200) > 0.98, || "g_ss(1, 200) not near 1".into()))?;
    let l2 = lambda_for_agents(1.0, 8, 12).map_err(|e| e.to_string())?;
    tally(common::ensure((l2 - 2.0).abs() < 1e-12, || format!("lambda_for_agents(1, 8, 12) = {l2}")))?;
    tally(common::ensure(lambda_for_agents(3.0, 9, 9).unwrap() == 3.0, || "identity case".into()))?;
    tally(common::ensure((lambda_for_agents(7.0, 8, 30).unwrap() - 29.0).abs() < 1e-12, || "optimality not kept".into()))?;
    tally(common::cross_eval_permutations(&mut rng, 1000))?;
    tally(common::interval_branch_table())?;
    for config in [attacked(0, AttackChoice::Adaming, 1.0), coma(attacked(1, AttackChoice::Opposite, 1.0))] {
        let again = run_single(&config).map_err(|e| e.to_string())?.result;
        tally(common::ensure(&again == runs.get(&config), || format!("run {} not reproducible", config.run_id())))?;
    }
    Ok(count)
}
