use std::path::PathBuf;
use std::process::ExitCode;

use boxpush::harness::config::{Mode, RunConfig};
use boxpush::harness::plot::emit_plots;
use boxpush::harness::run;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "boxpush", version, about = "Batched box-pushing RL: training, evaluation, benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_envs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the step-based policy.
    TrainStep(Common),
    /// Train the movement-primitive (black-box) policy.
    TrainBb(Common),
    /// Evaluate a saved checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Measure raw environment stepping throughput.
    Bench(Common),
    /// Render success-rate curves from one or more metrics CSVs.
    Plot {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn load(common: &Common, mode: Mode) -> boxpush::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.mode = mode;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.n_envs {
        cfg.n_envs = n;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The resolved `config.toml` a training run wrote next to (or one level
/// above) its checkpoints.
fn run_config_near(checkpoint: &std::path::Path) -> Option<PathBuf> {
    checkpoint
        .ancestors()
        .skip(1)
        .take(2)
        .map(|d| d.join(run::CONFIG_FILE))
        .find(|p| p.is_file())
}

fn train(common: &Common, mode: Mode) -> boxpush::Result<()> {
    let cfg = load(common, mode)?;
    let s = run::train(&cfg, mode)?;
    let last = s.rows.last();
    println!(
        "{}: {} iterations, {} env interactions, {:.1} s",
        mode.as_str(),
        s.rows.len(),
        last.map_or(0, |r| r.env_interactions),
        last.map_or(0.0, |r| r.wall_seconds)
    );
    println!(
        "final checkpoint {} (eval over {} episodes: success {:.3}, mean return {:.2})",
        s.final_checkpoint.display(),
        s.final_eval.episodes,
        s.final_eval.success_rate,
        s.final_eval.mean_return
    );
    Ok(())
}

fn execute(cli: Cli) -> boxpush::Result<()> {
    match cli.cmd {
        Cmd::TrainStep(c) => train(&c, Mode::TrainStep),
        Cmd::TrainBb(c) => train(&c, Mode::TrainBb),
        Cmd::Eval { mut common, checkpoint } => {
            if common.config.is_none() {
                common.config = run_config_near(&checkpoint);
            }
            let cfg = load(&common, Mode::Eval)?;
            let (ckpt, res) = run::evaluate_checkpoint(&cfg, &checkpoint)?;
            println!(
                "success {:.3}, mean return {:.2} over {} episodes",
                res.success_rate, res.mean_return, res.episodes
            );
            if ckpt.meta.eval_episodes > 0 {
                println!(
                    "logged at save (iteration {}): success {:.3}, mean return {:.2}",
                    ckpt.meta.iteration, ckpt.meta.eval_success, ckpt.meta.eval_return
                );
            }
            Ok(())
        }
        Cmd::Bench(c) => {
            let cfg = load(&c, Mode::Bench)?;
            let rows = run::bench(&cfg)?;
            println!("n_envs,workers,fps,efficiency");
            for r in &rows {
                println!("{},{},{:.0},{:.3}", r.n_envs, r.workers, r.fps, r.efficiency);
            }
            println!("wrote {}", cfg.out_dir.join("bench.csv").display());
            Ok(())
        }
        Cmd::Plot { metrics, out } => {
            for p in emit_plots(&metrics, &out)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
