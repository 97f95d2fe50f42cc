use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fedrl::config::{AttackChoice, Defense, EvalMode, OptimizerChoice, RunConfig};
use fedrl::gridworld::generate_maze;
use fedrl::harness::{emit_analysis_tables, run_single, write_run, Campaign};
use fedrl::metrics::evaluate_policy;
use fedrl::policy::PolicyTable;

/// Federated reinforcement learning under model-poisoning adversaries.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Directory for config.toml, rounds.jsonl, policy.bin and result.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sweep file or a named preset.
    Campaign {
        /// Sweep file (TOML).
        file: Option<PathBuf>,
        #[arg(long, conflicts_with = "file")]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Concurrent runs.
        #[arg(long, default_value_t = 4)]
        jobs: usize,
        /// Replace the sweep's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Write steady-state g tables as CSV.
    Analyze {
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
    },
    /// Score a saved policy snapshot on a configuration's mazes.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Generate a maze and print it in the text format.
    GenMaze {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        width: usize,
        #[arg(long, default_value_t = 10)]
        height: usize,
        #[arg(long, default_value_t = 0.25)]
        density: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in campaign presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Base configuration (TOML); flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "num-agents", short = 'n')]
    num_agents: Option<usize>,
    #[arg(long)]
    episodes: Option<u64>,
    /// Smoothing-average threshold iteration.
    #[arg(long)]
    threshold: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    attack: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    adversary_index: Option<usize>,
    #[arg(long = "maze-file")]
    maze_files: Vec<PathBuf>,
    #[arg(long)]
    maze_seed_base: Option<u64>,
    #[arg(long)]
    hell_density: Option<f64>,
    #[arg(long)]
    defense: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    r_th: Option<f64>,
    #[arg(long)]
    low_comm: Option<u64>,
    #[arg(long)]
    high_comm: Option<u64>,
    #[arg(long)]
    base_comm: Option<u64>,
    #[arg(long)]
    wait_comm: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    eval_attempts: Option<usize>,
    /// Evaluate with argmax actions instead of sampling.
    #[arg(long)]
    greedy: bool,
}

impl RunArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident <- $arg:ident),* $(,)?) => {
                $(if let Some(v) = self.$arg.clone() { c.$field = v; })*
            };
        }
        set!(
            n <- num_agents, episodes <- episodes, threshold <- threshold, seed <- seed,
            delta <- delta, gamma <- gamma, lambda <- lambda, adversary_index <- adversary_index,
            maze_seed_base <- maze_seed_base, hell_density <- hell_density, r_th <- r_th,
            low_comm <- low_comm, high_comm <- high_comm, base_comm <- base_comm,
            wait_comm <- wait_comm, eval_episodes <- eval_episodes, eval_attempts <- eval_attempts,
        );
        if let Some(a) = &self.attack {
            c.attack = a.parse::<AttackChoice>()?;
        }
        if let Some(d) = &self.defense {
            c.defense = d.parse::<Defense>()?;
        }
        if let Some(o) = &self.optimizer {
            c.optimizer = match o.as_str() {
                "plain" => OptimizerChoice::Plain,
                "adam" => OptimizerChoice::Adam,
                other => bail!("unknown optimizer {other:?} (plain or adam)"),
            };
        }
        if !self.maze_files.is_empty() {
            c.maze_files = self.maze_files.clone();
        }
        if self.greedy {
            c.eval_mode = EvalMode::Greedy;
        }
        c.validate()?;
        Ok(c)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { run, out } => {
            let config = run.build()?;
            let outcome = run_single(&config)?;
            let r = &outcome.result;
            println!("run {}  attack={} defense={} lambda={}", r.run_id, config.attack.name(), config.defense.name(), config.lambda);
            println!("win ratio {:.4}  consensus std {:.4}  ({:.2?})", r.eval.wr, r.eval.consensus_std, outcome.wall_time);
            if let Some(comm) = &r.final_comm {
                println!("final intervals {comm:?}");
            }
            if let Some(dir) = out {
                write_run(&dir, &outcome)?;
                println!("wrote {}", dir.display());
            }
        }
        Command::Campaign { file, preset, out, jobs, seeds } => {
            let mut campaign = match (file, preset) {
                (Some(f), None) => Campaign::load(&f)?,
                (None, Some(p)) => Campaign::preset(&p)?,
                _ => bail!("give a sweep file or --preset"),
            };
            if let Some(s) = seeds {
                campaign.seeds = s;
            }
            let report = campaign.run(&out, jobs)?;
            println!(
                "{} rows ({} runs executed, {} reused) -> {}",
                report.rows.len(),
                report.executed,
                report.reused,
                out.join("summary.csv").display()
            );
        }
        Command::Analyze { out } => {
            for p in emit_analysis_tables(&out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Eval { policy, run } => {
            let config = run.build()?;
            let bytes = std::fs::read(&policy).with_context(|| format!("reading {}", policy.display()))?;
            let table = PolicyTable::from_bytes(&bytes)?;
            let mazes = config.load_mazes()?;
            let report = evaluate_policy(
                &table,
                &mazes,
                &fedrl::harness::scored_exclusions(&config),
                config.eval_attempts,
                config.eval_mode,
                &config.learning(),
                config.seed,
            )?;
            for e in &report.per_env {
                println!("env {:>3}: {}/{}", e.env, e.wins, e.attempts);
            }
            println!("win ratio {:.4}  consensus std {:.4}", report.wr, report.consensus_std);
        }
        Command::GenMaze { seed, width, height, density, out } => {
            let maze = generate_maze(seed, width, height, density)?;
            match out {
                Some(p) => std::fs::write(&p, maze.to_string()).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{maze}"),
            }
        }
        Command::Presets => {
            for name in Campaign::preset_names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}
