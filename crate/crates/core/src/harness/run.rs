//! Training, evaluation and benchmark entry points shared by the CLI and the
//! test suites. Step-based and black-box training differ only in the
//! environment handed to the generic trainer.

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::bbrl::BlackBoxEnv;
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::env::{BoxPushEnv, VecEnv, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::harness::bench::{bench_svg, run_bench, write_bench_csv, BenchRow};
use crate::harness::config::{Mode, RunConfig};
use crate::harness::metrics::{MetricsRow, MetricsWriter};
use crate::parallel::Workers;
use crate::policy::ActorCritic;
use crate::ppo::{evaluate, EvalResult, RunningNormalizer, Trainer};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub rows: Vec<MetricsRow>,
    pub final_checkpoint: PathBuf,
    pub final_eval: EvalResult,
}

fn workers_for(cfg: &RunConfig) -> Workers {
    Workers::from_env_or(cfg.workers)
}

fn step_env(cfg: &RunConfig, n_envs: usize, seed: u64) -> Result<BoxPushEnv> {
    let env_cfg = crate::env::EnvConfig {
        n_envs,
        seed,
        ..cfg.env_config()
    };
    BoxPushEnv::new(env_cfg, workers_for(cfg))
}

fn bb_env(cfg: &RunConfig, n_envs: usize, seed: u64) -> Result<BlackBoxEnv> {
    BlackBoxEnv::new(step_env(cfg, n_envs, seed)?, cfg.promp_config(), cfg.context.mask())
}

/// Trains in `mode` (`TrainStep` or `TrainBb`), writing the resolved config,
/// metrics CSV and checkpoints into `cfg.out_dir`.
pub fn train(cfg: &RunConfig, mode: Mode) -> Result<TrainSummary> {
    cfg.validate()?;
    match mode {
        Mode::TrainStep => {
            let env = step_env(cfg, cfg.n_envs, cfg.seed)?;
            drive(cfg, mode, env, |c| step_env(c, c.eval.episodes, c.eval.seed))
        }
        Mode::TrainBb => {
            let env = bb_env(cfg, cfg.n_envs, cfg.seed)?;
            drive(cfg, mode, env, |c| bb_env(c, c.eval.episodes, c.eval.seed))
        }
        other => Err(Error::Config(format!("{} is not a training mode", other.as_str()))),
    }
}

fn drive<E, F>(cfg: &RunConfig, mode: Mode, env: E, make_eval_env: F) -> Result<TrainSummary>
where
    E: VecEnv,
    F: Fn(&RunConfig) -> Result<E>,
{
    let out = &cfg.out_dir;
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let resolved = RunConfig {
        mode,
        ..cfg.clone()
    };
    std::fs::write(out.join(CONFIG_FILE), resolved.to_toml())?;
    let mut metrics = MetricsWriter::create(&out.join(METRICS_FILE))?;
    let workers = workers_for(cfg);
    let mut trainer = Trainer::new(env, cfg.ppo(mode).clone(), &cfg.policy, cfg.seed, workers)?;
    let budget = (cfg.wall_budget_s > 0.0).then(|| Duration::from_secs_f64(cfg.wall_budget_s));
    let mut rows = Vec::new();
    let save = |t: &Trainer<E>, path: &Path| -> Result<EvalResult> {
        let mut eval_env = make_eval_env(cfg)?;
        let res = evaluate(
            &mut eval_env,
            t.actor_critic(),
            t.normalizer(),
            cfg.eval.episodes,
            &workers_for(cfg),
        )?;
        Checkpoint {
            ac: t.actor_critic().clone(),
            normalizer: t.normalizer().cloned(),
            meta: CheckpointMeta {
                iteration: t.iteration() as u64,
                env_interactions: t.env_interactions(),
                eval_episodes: res.episodes as u64,
                eval_success: res.success_rate,
                eval_return: res.mean_return,
            },
        }
        .save(path)?;
        Ok(res)
    };
    trainer.train(budget, |s, t| {
        let row = MetricsRow::from(s);
        metrics.write(&row)?;
        rows.push(row);
        if cfg.checkpoint_every > 0 && s.iteration % cfg.checkpoint_every == 0 {
            save(t, &ckpt_dir.join(format!("iter_{:06}.ckpt", s.iteration)))?;
        }
        Ok(true)
    })?;
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    let final_eval = save(&trainer, &final_checkpoint)?;
    Ok(TrainSummary {
        rows,
        final_checkpoint,
        final_eval,
    })
}

/// Whether a policy with these dimensions drives the step-based environment
/// (7 joint actions) or the black-box wrapper (7·K weights).
pub fn checkpoint_mode(ac: &ActorCritic) -> Mode {
    if ac.action_dim() == ACTION_DIM && ac.obs_dim() == OBS_DIM {
        Mode::TrainStep
    } else {
        Mode::TrainBb
    }
}

/// Evaluates a policy on `cfg.eval.episodes` fresh episodes seeded with
/// `cfg.eval.seed`.
pub fn evaluate_policy(cfg: &RunConfig, ac: &ActorCritic, norm: Option<&RunningNormalizer>) -> Result<EvalResult> {
    cfg.validate()?;
    let w = workers_for(cfg);
    match checkpoint_mode(ac) {
        Mode::TrainStep => evaluate(&mut step_env(cfg, cfg.eval.episodes, cfg.eval.seed)?, ac, norm, cfg.eval.episodes, &w),
        _ => evaluate(&mut bb_env(cfg, cfg.eval.episodes, cfg.eval.seed)?, ac, norm, cfg.eval.episodes, &w),
    }
}

pub fn evaluate_checkpoint(cfg: &RunConfig, path: &Path) -> Result<(Checkpoint, EvalResult)> {
    let ckpt = Checkpoint::load(path)?;
    let res = evaluate_policy(cfg, &ckpt.ac, ckpt.normalizer.as_ref())?;
    Ok((ckpt, res))
}

/// Runs the throughput sweep and writes `bench.csv` and `bench.svg`.
pub fn bench(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let rows = run_bench(&cfg.env_config(), &cfg.bench, cfg.seed)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_bench_csv(&cfg.out_dir.join("bench.csv"), &rows)?;
    std::fs::write(cfg.out_dir.join("bench.svg"), bench_svg(&rows)?)?;
    Ok(rows)
}
