//! Experiment runner for attentional multi-agent PPO on the merge scenario.

pub mod compare;
pub mod config;
pub mod curves;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod stats;
pub mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use attn_marl_core::merge_env::EnvConfig;
use attn_marl_core::{Checkpoint, Error};
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{figure_preset, ExperimentConfig};
use crate::gradcheck::{run_gradcheck, GradArch};

pub const THREADS_ENV: &str = "ATTN_MARL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "attn-marl", version, about = "Attentional multi-agent PPO on a traffic merge")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ArchArg {
    Attn,
    Mlp,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every seed of one experiment config or of a figure preset.
    Train {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// fig3a (architectures), fig3b (relative positions) or fig3c (dropout).
        #[arg(long)]
        preset: Option<String>,
        /// Number of seeds (0..N) for a preset.
        #[arg(long, requires = "preset")]
        seeds: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Output directory; overrides the config's.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint with mean actions against the all-IDM road.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Evaluate on another scenario preset instead of the training one.
        #[arg(long)]
        scenario: Option<String>,
        /// Write one JSONL vehicle trace per episode here.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Aggregate metrics files into per-experiment curves and a plot.
    Curves {
        #[arg(long)]
        glob: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Welch t-test on the final-iteration rewards of two experiments.
    Compare { a: String, b: String },
    /// Finite-difference check of every network tensor.
    Gradcheck {
        #[arg(long, value_enum)]
        arch: ArchArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(THREADS_ENV, format!("expected a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn experiments(
    config: Option<PathBuf>,
    preset: Option<String>,
    seeds: Option<u64>,
    iterations: Option<usize>,
    out: Option<PathBuf>,
) -> anyhow::Result<Vec<ExperimentConfig>> {
    let mut list = match (config, preset) {
        (Some(path), _) => vec![ExperimentConfig::load(&path).with_context(|| format!("loading {}", path.display()))?],
        (None, Some(name)) => figure_preset(&name)?,
        (None, None) => bail!(Error::config("config", "either --config or --preset is required")),
    };
    for cfg in &mut list {
        if let Some(n) = seeds {
            cfg.seeds = (0..n).collect();
        }
        if let Some(n) = iterations {
            cfg.iterations = n;
        }
        if let Some(dir) = &out {
            cfg.output_dir = dir.clone();
        }
        cfg.validate()?;
    }
    Ok(list)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train {
            config,
            preset,
            seeds,
            iterations,
            out,
            quiet,
        } => {
            for cfg in experiments(config, preset, seeds, iterations, out)? {
                let runs = train::run_experiment(&cfg, !quiet)?;
                for r in runs {
                    let tail = metrics::tail_mean_reward(&r.rows).unwrap_or(f64::NAN);
                    println!(
                        "{} seed {}: mean episode reward {tail:.4} over the last {} iterations",
                        cfg.name,
                        r.seed,
                        metrics::FINAL_WINDOW.min(r.rows.len())
                    );
                }
                println!("wrote {}", cfg.run_dir().display());
            }
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            scenario,
            trace_dir,
        } => {
            let ckpt = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let env = match scenario {
                Some(name) => Some(EnvConfig::preset(&name)?),
                None => None,
            };
            if let Some(d) = &trace_dir {
                std::fs::create_dir_all(d)?;
            }
            let summary = eval::evaluate_checkpoint(&ckpt, env, episodes, seed, trace_dir.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Curves { glob, out } => {
            for path in curves::emit_curves(&glob, &out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Compare { a, b } => {
            let report = compare::compare_runs(&compare::load_runs(&a)?, &compare::load_runs(&b)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Gradcheck { arch, seed } => {
            let arch = match arch {
                ArchArg::Attn => GradArch::Attn,
                ArchArg::Mlp => GradArch::Mlp,
            };
            let mut failure = None;
            for (net, report) in run_gradcheck(arch, seed)? {
                for t in &report.tensors {
                    let mark = if t.max_rel_err < report.tol { "ok" } else { "FAIL" };
                    println!("{net:<20} {:<12} {:>6} params  max rel err {:.3e}  {mark}", t.name, t.len, t.max_rel_err);
                }
                if let Err(e) = report.ensure() {
                    failure.get_or_insert(e);
                }
            }
            if let Some(e) = failure {
                return Err(e.into());
            }
        }
    }
    Ok(())
}

/// 0 on success, 2 when the numerics fail, 1 for everything else
/// (configuration, input files, usage).
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numeric() => 2,
        _ => 1,
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
