//! `ase`: run safe-exploration experiments, dump ground truth, and run the
//! property suites.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ase_core::envs::EnvName;
use ase_core::harness::{aggregate_metrics, emit_outputs, parse_config, run_experiment, EnvContext};
use ase_core::verify::{run_all_suites, SuiteSize};
use ase_core::{Pair, StateId};

#[derive(Parser)]
#[command(name = "ase", version, about = "Safe exploration with analogies in tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long, env = "ASE_CONFIG")]
        config: PathBuf,
        /// Base seed (overrides the config).
        #[arg(long, env = "ASE_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "ASE_TRIALS")]
        trials: Option<usize>,
        #[arg(long, env = "ASE_HORIZON")]
        horizon: Option<usize>,
        #[arg(long, env = "ASE_OUT")]
        out: Option<PathBuf>,
    },
    /// Print the true safe set and the safe-optimal Q of an environment as CSV.
    Oracle {
        #[arg(long, env = "ASE_ENV")]
        env: String,
    },
    /// Run the randomized property suites.
    Verify {
        /// Run reduced instance counts.
        #[arg(long)]
        quick: bool,
        #[arg(long, env = "ASE_SEED", default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, seed, trials, horizon, out } => {
            let mut cfg = parse_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
                cfg.seeds = None;
            }
            if let Some(trials) = trials {
                cfg.trials = trials;
                if cfg.seeds.as_ref().is_some_and(|s| s.len() != trials) {
                    cfg.seeds = None;
                }
            }
            if horizon.is_some() {
                cfg.horizon = horizon;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let start = Instant::now();
            let ctx = EnvContext::build(cfg.env)?;
            let traces = run_experiment(&cfg, &ctx)?;
            let agg = aggregate_metrics(&traces)?;
            emit_outputs(&cfg, &ctx.env, &traces, &agg, &cfg.output_dir)
                .with_context(|| format!("writing outputs to {}", cfg.output_dir.display()))?;
            eprintln!(
                "{} on {}: {} trials x {} steps in {:.1}s",
                cfg.agent.kind.as_str(),
                cfg.env.as_str(),
                cfg.trials,
                cfg.horizon(),
                start.elapsed().as_secs_f64()
            );
            for tr in &traces {
                eprintln!(
                    "  trial {}: suboptimal {} unsafe {} explored pairs {} safe set {}",
                    tr.trial,
                    tr.total_suboptimal(),
                    tr.total_unsafe(),
                    tr.explored_pairs,
                    tr.safe_set_size
                );
            }
            println!("mean suboptimal {} mean unsafe {}", agg.mean_suboptimal, agg.mean_unsafe);
        }
        Command::Oracle { env } => {
            let Some(name) = EnvName::parse(&env) else {
                bail!("unknown environment {env:?} (expected grid_world or platformer)");
            };
            let ctx = EnvContext::build(name)?;
            let mdp = &ctx.env.mdp;
            println!("state,action,in_z_safe,q");
            for s in 0..mdp.num_states() {
                for a in 0..mdp.num_actions() {
                    let p = Pair::new(s, a);
                    let q = ctx.q_star.get(p).finite().map_or_else(|| "bottom".to_string(), |v| v.to_string());
                    println!("{s},{a},{},{q}", u8::from(ctx.truth.z_safe.contains(p)));
                }
            }
            eprintln!(
                "{}: {} states, true safe set {} pairs (communicating: {}), V*(s_init) = {:?}",
                name.as_str(),
                mdp.num_states(),
                ctx.truth.z_safe.len(),
                ctx.truth.communicating,
                ctx.q_star.state_value(StateId(mdp.s_init.0)).finite()
            );
        }
        Command::Verify { quick, seed } => {
            let size = if quick { SuiteSize::Quick } else { SuiteSize::Full };
            let reports = run_all_suites(size, seed);
            let mut failed = false;
            for r in &reports {
                println!("{r}");
                failed |= !r.passed;
            }
            if failed {
                bail!("property suites failed");
            }
        }
    }
    Ok(())
}
