//! `odectrl run | benchmark | eval`.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use odectrl::actor_critic::evaluate_policy;
use odectrl::envs::{Controller, EnvKind, EnvSpec};
use odectrl::experiment::{
    load_checkpoint, mixed_policies, run_experiment, solver_benchmark, BenchSolver, RunConfig, Spacing,
};
use odectrl::seeds::rng_from;

#[derive(Parser)]
#[command(name = "odectrl", version, about = "Continuous-time model-based RL with neural ODE ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Narrow networks sized for one CPU core.
    Desk,
    /// Network sizes of the original experiments.
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Run rounds until the task is solved or the budget is spent.
    Run {
        #[arg(long, default_value = "pendulum")]
        env: EnvKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "fixed")]
        spacing: Spacing,
        /// Mean observation gap in seconds.
        #[arg(long, default_value_t = 0.1)]
        kappa: f64,
        /// Observation noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Round budget; defaults to 15 for pendulum and 25 otherwise.
        #[arg(long)]
        rounds: Option<usize>,
        /// Imagination horizon in seconds.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        n_ens: Option<usize>,
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        /// Record per-round wall-clock time (makes rounds.csv run-dependent).
        #[arg(long)]
        wall_clock: bool,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Compare integrators against the reference solver on closed loops.
    Benchmark {
        #[arg(long, default_value = "cartpole")]
        env: EnvKind,
        /// Comma-separated `name[:step|tol]` list.
        #[arg(long, default_value = "rk78:1e-10,dopri5,rk23:1e-6,rk4:0.1,euler:0.1,discrete:0.1")]
        solvers: String,
        #[arg(long, default_value_t = 20)]
        policies: usize,
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs/benchmark")]
        out: PathBuf,
    },
    /// Evaluate a saved policy on the true environment.
    Eval {
        /// A `checkpoints/round_k` directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            env,
            seed,
            spacing,
            kappa,
            noise,
            rounds,
            horizon,
            n_ens,
            preset,
            wall_clock,
            out,
        } => {
            let mut cfg = match preset {
                Preset::Desk => RunConfig::desk(env),
                Preset::Full => RunConfig::full(env),
            };
            cfg.seed = seed;
            cfg.spacing = spacing;
            cfg.kappa = kappa;
            cfg.noise = noise;
            cfg.record_wall_clock = wall_clock;
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            if let Some(h) = horizon {
                cfg.ac.horizon = h;
            }
            if let Some(n) = n_ens {
                cfg.dynamics.n_ens = n;
            }
            let state = run_experiment(cfg, Some(&out)).context("experiment failed")?;
            for r in &state.records {
                println!(
                    "round {:>2}  value {:>8.4}  upright {:>2}/{}  mse@2s {:>8.4}",
                    r.round,
                    r.mean_value,
                    r.success_count(),
                    r.success.len(),
                    r.dyn_mse_2s
                );
            }
            println!("{} after {} rounds; reports in {}", if state.solved() { "solved" } else { "not solved" }, state.records.len(), out.display());
        }
        Command::Benchmark {
            env,
            solvers,
            policies,
            duration,
            seed,
            out,
        } => {
            let solvers = solvers
                .split(',')
                .map(|s| s.trim().parse::<BenchSolver>().map_err(anyhow::Error::msg))
                .collect::<Result<Vec<_>>>()?;
            if policies == 0 {
                bail!("need at least one policy");
            }
            let spec = EnvSpec::new(env);
            let (boxed, x0s) = mixed_policies(&spec, policies, duration, &mut rng_from(seed))?;
            let refs: Vec<&dyn Controller> = boxed.iter().map(|p| p.as_ref()).collect();
            let n = (duration / 0.1).round() as usize;
            let times: Vec<f64> = (0..=n).map(|k| k as f64 * 0.1).collect();
            info!("benchmarking {} solvers on {policies} {env} closed loops", solvers.len());
            let table = solver_benchmark(&spec, &refs, &x0s, &solvers, &times)?;
            let path = out.join("benchmark.csv");
            table.write_csv(&path)?;
            for row in &table.rows {
                println!("{:<16} median error at {duration} s: {:.3e}", row.solver, row.median_curve().last().unwrap());
            }
            println!("table written to {}", path.display());
        }
        Command::Eval { checkpoint, trials, seed } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let env = EnvSpec::new(ckpt.meta.env);
            let mut cfg = ckpt.meta.eval.clone();
            cfg.trials = trials;
            let report = evaluate_policy(&env, &ckpt.ac.policy, &cfg, &mut rng_from(seed))?;
            for (i, (v, ok)) in report.values.iter().zip(&report.success).enumerate() {
                println!("trial {:>2}  value {v:>8.4}  {}", i + 1, if *ok { "upright" } else { "failed" });
            }
            println!(
                "mean value {:.4}; {}/{} upright{}",
                report.mean_value(),
                report.success_count(),
                report.success.len(),
                if report.solved() { "; solved" } else { "" }
            );
        }
    }
    Ok(())
}
