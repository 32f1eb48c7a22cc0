//! Raw environment stepping throughput across batch sizes and worker counts.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::env::{BoxPushEnv, EnvConfig, ACTION_DIM};
use crate::error::Result;
use crate::harness::config::BenchConfig;
use crate::harness::plot::bar_chart_svg;
use crate::mathcore::RngStream;
use crate::parallel::Workers;

/// Distinct random action batches cycled during a measurement.
const ACTION_BANK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub n_envs: usize,
    pub workers: usize,
    pub steps: u64,
    pub env_interactions: u64,
    pub seconds: f64,
    pub fps: f64,
    /// `fps / (workers · fps at one worker)` for the same batch size.
    pub efficiency: f64,
}

/// Steps `n_envs` environments with uniform random actions in `[-1, 1]` for
/// at least `window` of wall time.
pub fn measure(env_cfg: &EnvConfig, n_envs: usize, workers: usize, window: Duration, seed: u64) -> Result<BenchRow> {
    let cfg = EnvConfig {
        n_envs,
        seed,
        ..env_cfg.clone()
    };
    let mut env = BoxPushEnv::new(cfg, Workers::new(workers))?;
    let mut rng = RngStream::new(seed, u64::MAX);
    let bank: Vec<Vec<f64>> = (0..ACTION_BANK)
        .map(|_| (0..n_envs * ACTION_DIM).map(|_| 2.0 * rng.unit() - 1.0).collect())
        .collect();
    // Warm-up so pool start-up is not timed.
    env.step_actions_raw(&bank[0])?;
    let start = Instant::now();
    let mut steps = 0u64;
    while start.elapsed() < window {
        env.step_actions_raw(&bank[steps as usize % ACTION_BANK])?;
        steps += 1;
    }
    let seconds = start.elapsed().as_secs_f64();
    let env_interactions = steps * n_envs as u64;
    Ok(BenchRow {
        n_envs,
        workers: env.workers().count(),
        steps,
        env_interactions,
        seconds,
        fps: env_interactions as f64 / seconds,
        efficiency: f64::NAN,
    })
}

/// Full sweep; with `repeats > 1` the median FPS of each cell is kept.
pub fn run_bench(env_cfg: &EnvConfig, bench: &BenchConfig, seed: u64) -> Result<Vec<BenchRow>> {
    let window = Duration::from_secs_f64(bench.window_s);
    let mut rows = Vec::new();
    for &n in &bench.n_envs {
        let mut base = f64::NAN;
        for &w in &bench.workers {
            let mut reps = (0..bench.repeats)
                .map(|_| measure(env_cfg, n, w, window, seed))
                .collect::<Result<Vec<_>>>()?;
            reps.sort_by(|a, b| a.fps.total_cmp(&b.fps));
            let mut row = reps[reps.len() / 2];
            if w == 1 {
                base = row.fps;
            }
            row.efficiency = row.fps / (w as f64 * base);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "n_envs,workers,steps,env_interactions,seconds,fps,efficiency")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.n_envs, r.workers, r.steps, r.env_interactions, r.seconds, r.fps, r.efficiency
        )?;
    }
    Ok(())
}

/// FPS bars grouped by batch size, one bar per worker count.
pub fn bench_svg(rows: &[BenchRow]) -> Result<String> {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.n_envs).collect();
    sizes.dedup();
    let mut workers: Vec<usize> = rows.iter().map(|r| r.workers).collect();
    workers.sort_unstable();
    workers.dedup();
    let categories: Vec<String> = sizes.iter().map(|n| format!("{n} envs")).collect();
    let series: Vec<(String, Vec<f64>)> = workers
        .iter()
        .map(|&w| {
            let vals = sizes
                .iter()
                .map(|&n| {
                    rows.iter()
                        .find(|r| r.n_envs == n && r.workers == w)
                        .map_or(0.0, |r| r.fps)
                })
                .collect();
            (format!("{w} workers"), vals)
        })
        .collect();
    bar_chart_svg("Environment stepping throughput", "env-steps / s", &categories, &series)
}
