use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ilbench::commands::{cmd_eval, cmd_gen, cmd_train, EvalInputs};
use ilbench::config::{BenchConfig, OUTPUT_ROOT_ENV};
use ilbench::error::{CliError, Result};
use ilbench::io::write_json;
use ilbench::sweep::{run_sweep, Preset, SweepOptions};
use ilbench::verify;

#[derive(Debug, Parser)]
#[command(name = "ilbench", version, about = "Compounding-error benchmark for imitation learning in control")]
struct Cli {
    /// JSON run configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; falls back to the environment, then the config file.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the instance and sample the expert dataset.
    Gen,
    /// Fit the configured learner.
    Train {
        /// Dataset written by `gen`; sampled from the config if absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Estimate the risks of a policy.
    Eval {
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Policy written by `train`; otherwise the configured learner is fitted first.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Run a preset grid with per-cell checkpoints.
    Sweep {
        #[arg(long, value_enum)]
        preset: Preset,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        workers: Option<usize>,
        /// Recompute this cell (by slug) even if checkpointed; repeatable.
        #[arg(long)]
        only: Vec<String>,
        /// Ignore all checkpoints.
        #[arg(long)]
        fresh: bool,
    },
    /// Run the invariant suite.
    Verify,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let root = cfg.output_root(cli.out.as_deref());
    match cli.command {
        Command::Gen => {
            let out = cmd_gen(&cfg, &root)?;
            println!("wrote {} and {}", out.instance.display(), out.dataset.display());
        }
        Command::Train { dataset } => {
            let path = cmd_train(&cfg, dataset.as_deref(), &root)?;
            println!("wrote {}", path.display());
        }
        Command::Eval { instance, dataset, policy } => {
            let file = cmd_eval(&cfg, &EvalInputs { instance, dataset, policy }, &root)?;
            let r = &file.report;
            println!(
                "{} on {}: expert_l2 {:.4e} ± {:.1e}, cost_risk {:.4e} ± {:.1e}, blowups {}",
                file.policy_kind, file.instance_id, r.expert_l2.value, r.expert_l2.stderr, r.cost_risk.value, r.cost_risk.stderr, r.blowups
            );
        }
        Command::Sweep { preset, workers, only, fresh } => {
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let out = run_sweep(&cfg, preset, &root, &SweepOptions { workers, only, fresh })?;
            println!("wrote {} ({} rows, {} cells reused)", out.results.display(), out.rows.len(), out.reused);
            if !out.failed.is_empty() {
                return Err(CliError::Runtime(format!("{} cell(s) failed: {}", out.failed.len(), out.failed.join(", "))));
            }
        }
        Command::Verify => {
            let checks = verify::run_all(&cfg);
            print!("{}", verify::report_text(&checks));
            write_json(&root.join("verify.json"), &checks)?;
            verify::failures(&checks)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
