//! `embdyn`: train the siamese system, run the particle simulator,
//! evaluate checkpoints, and verify gradients.
//!
//! Exit codes: 0 on success, 1 on validation/usage/IO errors, 2 on
//! numerical-check failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use embdyn_core::config::RunConfig;
use embdyn_core::error::Error;
use embdyn_core::gradcheck::{run_full_suite, suite_op_names, FD_TOLERANCE};
use embdyn_core::train::{run_eval, run_simulate, run_training};

#[derive(Parser)]
#[command(name = "embdyn", version, about = "Deterministic multiview embedding-dynamics engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration file (flat key = value sections). Defaults apply
    /// when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed, overriding [run] seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory, overriding [run] out_dir.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Config override as section.key=value; repeatable.
    #[arg(long = "override", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the siamese MLP system and write metrics plus checkpoints.
    Train(CommonArgs),
    /// Evolve the network-free particle system and write the trajectory.
    Simulate(CommonArgs),
    /// Evaluate a checkpoint with the k-NN / linear-probe protocols.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Parameter checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference verification of every op and loss.
    Gradcheck {
        /// Seed for the random instances.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Random instances per op.
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Comma-separated op names to check (default: all).
        #[arg(long, value_delimiter = ',')]
        ops: Vec<String>,
    },
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, Error> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    if let Some(out) = &common.out {
        overrides.push(format!("run.out_dir={}", out.display()));
    }
    match &common.config {
        Some(path) => RunConfig::from_file(path, &overrides),
        None => RunConfig::from_text("", &overrides),
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, bytes)?;
    Ok(path)
}

fn cmd_train(common: &CommonArgs) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let out = run_training(&cfg)?;
    let dir = PathBuf::from(&cfg.run.out_dir);
    let csv = write_file(&dir, "metrics.csv", out.metrics_csv.as_bytes())?;
    let ckpt = write_file(&dir, "checkpoint.bin", &out.final_checkpoint)?;
    for (epoch, bytes) in &out.periodic_checkpoints {
        write_file(&dir, &format!("checkpoint_epoch{epoch}.bin"), bytes)?;
    }
    println!("metrics: {}", csv.display());
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn cmd_simulate(common: &CommonArgs) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let out = run_simulate(&cfg)?;
    let dir = PathBuf::from(&cfg.run.out_dir);
    let csv = write_file(&dir, "trajectory.csv", out.trajectory_csv.as_bytes())?;
    let state = write_file(&dir, "sim_final.bin", &out.final_state)?;
    println!("trajectory: {}", csv.display());
    println!("final state: {}", state.display());
    if let Some(svg) = &out.svg {
        let path = write_file(&dir, "trajectory.svg", svg.as_bytes())?;
        println!("chart: {}", path.display());
    }
    Ok(())
}

fn cmd_eval(common: &CommonArgs, checkpoint: &Path) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let bytes = std::fs::read(checkpoint).map_err(|e| {
        Error::Invalid(format!("cannot read checkpoint {}: {e}", checkpoint.display()))
    })?;
    let out = run_eval(&cfg, &bytes)?;
    print!("{}", out.report);
    let dir = PathBuf::from(&cfg.run.out_dir);
    let csv = write_file(&dir, "eval.csv", out.csv.as_bytes())?;
    println!("eval csv: {}", csv.display());
    Ok(())
}

fn cmd_gradcheck(seed: u64, instances: usize, ops: &[String]) -> Result<bool, Error> {
    let filter: Option<&[String]> = if ops.is_empty() { None } else { Some(ops) };
    let reports = run_full_suite(seed, instances, filter)?;
    if reports.is_empty() {
        eprintln!(
            "warning: no ops matched the filter; known ops: {}",
            suite_op_names().join(", ")
        );
        println!("vacuous pass (0 ops checked)");
        return Ok(true);
    }
    let mut all_passed = true;
    println!(
        "{:<32} {:>9} {:>13} {:>10} {:>6}",
        "op", "instances", "max_rel_err", "tolerance", "status"
    );
    for r in &reports {
        println!(
            "{:<32} {:>9} {:>13.3e} {:>10.1e} {:>6}",
            r.name,
            r.instances,
            r.max_rel_err,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" }
        );
        all_passed &= r.passed;
    }
    if !all_passed {
        eprintln!("gradient check failed at tolerance {FD_TOLERANCE:e}");
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<bool, Error> = match &cli.command {
        Command::Train(common) => cmd_train(common).map(|_| true),
        Command::Simulate(common) => cmd_simulate(common).map(|_| true),
        Command::Eval { common, checkpoint } => cmd_eval(common, checkpoint).map(|_| true),
        Command::Gradcheck { seed, instances, ops } => cmd_gradcheck(*seed, *instances, ops),
    };
    match result {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(2),
        Err(Error::NumericalCheck(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
