//! PPO with GAE, running observation normalization and separate actor and
//! critic epoch counts. Drives any [`VecEnv`], so the step-based environment
//! and the black-box wrapper train through the same code path.

use std::time::{Duration, Instant};

use ndarray::{s, Array2, ArrayView2};

use crate::env::VecEnv;
use crate::error::{Error, Result};
use crate::mathcore::RngStream;
use crate::parallel::Workers;
use crate::policy::{grad_tensors, ActorCritic, Adam, Dense, Mlp};

/// Stream ids for the trainer's random streams; environment `i` samples its
/// actions from `POLICY_STREAM + i`.
pub const POLICY_STREAM: u64 = 1 << 32;
pub const SHUFFLE_STREAM: u64 = 1 << 33;
pub const INIT_STREAM: u64 = 1 << 34;

/// Rows per gradient chunk. Fixed so the reduction order, and therefore every
/// bit of the result, does not depend on the worker count.
const GRAD_CHUNK: usize = 256;

const NORM_EPS: f64 = 1e-8;
const NORM_CLIP: f64 = 10.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub actor_epochs: usize,
    pub critic_epochs: usize,
    pub minibatches: usize,
    pub steps_per_iter: usize,
    pub normalize_obs: bool,
    pub max_iterations: usize,
    pub entropy_coef: f64,
    /// Global L2 gradient-norm cap per network; `0` disables it.
    pub max_grad_norm: f64,
}

impl PpoConfig {
    pub fn step_based() -> Self {
        PpoConfig {
            gamma: 0.98,
            lambda: 0.95,
            clip: 0.2,
            lr: 1e-4,
            actor_epochs: 10,
            critic_epochs: 5,
            minibatches: 4,
            steps_per_iter: 24,
            normalize_obs: true,
            max_iterations: 1500,
            entropy_coef: 0.0,
            max_grad_norm: 1.0,
        }
    }

    pub fn black_box() -> Self {
        PpoConfig {
            actor_epochs: 100,
            critic_epochs: 100,
            minibatches: 1,
            steps_per_iter: 1,
            normalize_obs: false,
            ..PpoConfig::step_based()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.minibatches == 0 || self.steps_per_iter == 0 {
            return bad("minibatches and steps_per_iter must be at least 1");
        }
        if self.actor_epochs == 0 && self.critic_epochs == 0 {
            return bad("at least one of actor_epochs, critic_epochs must be positive");
        }
        if !(self.entropy_coef >= 0.0) || !(self.max_grad_norm >= 0.0) {
            return bad("entropy_coef and max_grad_norm must be non-negative");
        }
        Ok(())
    }
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig::step_based()
    }
}

/// Network shapes and initial exploration noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub init_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: vec![256, 128, 64],
            critic_hidden: vec![256, 128, 64],
            init_std: 1.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }
}

/// Welford mean/variance over observation columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNormalizer {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        RunningNormalizer {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Population variance; zero before any update.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        self.m2.iter().map(|m| m / self.count as f64).collect()
    }

    /// Merges a row-major batch (`rows × dim`) into the accumulators.
    pub fn update(&mut self, batch: &[f64]) -> Result<()> {
        let d = self.dim();
        if d == 0 || !batch.len().is_multiple_of(d) {
            return Err(Error::Shape {
                what: "normalizer batch",
                expected: d,
                got: batch.len(),
            });
        }
        let nb = batch.len() / d;
        if nb == 0 {
            return Ok(());
        }
        let mut bmean = vec![0.0; d];
        for row in batch.chunks_exact(d) {
            bmean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        bmean.iter_mut().for_each(|m| *m /= nb as f64);
        let mut bm2 = vec![0.0; d];
        for row in batch.chunks_exact(d) {
            for j in 0..d {
                let e = row[j] - bmean[j];
                bm2[j] += e * e;
            }
        }
        let na = self.count as f64;
        let nbf = nb as f64;
        let n = na + nbf;
        for j in 0..d {
            let delta = bmean[j] - self.mean[j];
            self.mean[j] += delta * nbf / n;
            self.m2[j] += bm2[j] + delta * delta * na * nbf / n;
        }
        self.count += nb as u64;
        Ok(())
    }

    /// Normalizes one row into `out`. Before the first update this is the
    /// identity.
    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        if self.count == 0 {
            out.copy_from_slice(x);
            return;
        }
        let n = self.count as f64;
        for j in 0..x.len() {
            let sd = (self.m2[j] / n + NORM_EPS).sqrt();
            out[j] = ((x[j] - self.mean[j]) / sd).clamp(-NORM_CLIP, NORM_CLIP);
        }
    }

    pub fn normalize(&self, batch: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; batch.len()];
        for (x, o) in batch.chunks_exact(self.dim()).zip(out.chunks_exact_mut(self.dim())) {
            self.normalize_into(x, o);
        }
        out
    }
}

/// One iteration of transitions, time-major: row `t·n_envs + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub steps: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Raw (unnormalized) observations.
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub logp: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Critic value of the observation following the last step.
    pub last_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(steps: usize, n_envs: usize, obs_dim: usize, action_dim: usize) -> Self {
        let n = steps * n_envs;
        RolloutBuffer {
            n_envs,
            steps,
            obs_dim,
            action_dim,
            obs: Vec::with_capacity(n * obs_dim),
            actions: Vec::with_capacity(n * action_dim),
            logp: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            last_values: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Fills `advantages` and `returns` from the stored transitions.
    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let (a, r) = gae(
            &self.rewards,
            &self.values,
            &self.dones,
            &self.last_values,
            self.n_envs,
            gamma,
            lambda,
        )?;
        self.advantages = a;
        self.returns = r;
        Ok(())
    }
}

/// GAE over a time-major batch of `n_envs` parallel sequences.
/// `last_values` bootstraps the step after the final one.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    n_envs: usize,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if n_envs == 0 || !n.is_multiple_of(n_envs) {
        return Err(Error::Shape {
            what: "rewards",
            expected: n_envs,
            got: n,
        });
    }
    for (what, len) in [("values", values.len()), ("dones", dones.len())] {
        if len != n {
            return Err(Error::Shape { what, expected: n, got: len });
        }
    }
    if last_values.len() != n_envs {
        return Err(Error::Shape {
            what: "last_values",
            expected: n_envs,
            got: last_values.len(),
        });
    }
    let steps = n / n_envs;
    let mut adv = vec![0.0; n];
    for e in 0..n_envs {
        let mut next_value = last_values[e];
        let mut next_adv = 0.0;
        for t in (0..steps).rev() {
            let k = t * n_envs + e;
            let live = if dones[k] { 0.0 } else { 1.0 };
            let delta = rewards[k] + gamma * next_value * live - values[k];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[k] = next_adv;
            next_value = values[k];
        }
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shifts and scales to zero mean, unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / sd);
}

/// Per-sample clipped surrogate `min(ρA, clamp(ρ, 1±clip)·A)`.
#[inline]
pub fn clipped_surrogate(ratio: f64, adv: f64, clip: f64) -> f64 {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
    unclipped.min(clipped)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Normalized copy of `obs` (or the raw values without a normalizer).
fn normalized(norm: Option<&RunningNormalizer>, obs: &[f64]) -> Vec<f64> {
    match norm {
        Some(n) => n.normalize(obs),
        None => obs.to_vec(),
    }
}

/// Row-chunked forward pass; identical to `net.forward` for any worker count.
pub fn forward_batched(workers: &Workers, net: &Mlp, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let rows = x.nrows();
    if rows <= GRAD_CHUNK || !workers.is_parallel() {
        return net.forward(x);
    }
    let n_chunks = rows.div_ceil(GRAD_CHUNK);
    let parts = workers.map(n_chunks, |c| {
        let lo = c * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(rows);
        net.forward(x.slice(s![lo..hi, ..]))
    });
    let mut out = Array2::zeros((rows, net.out_dim()));
    for (c, p) in parts.into_iter().enumerate() {
        let lo = c * GRAD_CHUNK;
        let p = p?;
        out.slice_mut(s![lo..lo + p.nrows(), ..]).assign(&p);
    }
    Ok(out)
}

struct ActorChunk {
    grads: Vec<Dense>,
    log_std_grad: Vec<f64>,
    surrogate: f64,
    kl: f64,
    clipped: usize,
}

struct CriticChunk {
    grads: Vec<Dense>,
    sq_err: f64,
}

fn add_grads(acc: &mut [Dense], g: &[Dense]) {
    for (a, b) in acc.iter_mut().zip(g) {
        a.w += &b.w;
        a.b += &b.b;
    }
}

/// Scales all tensors so their joint L2 norm is at most `max_norm`.
fn clip_grad_norm(tensors: &mut [&mut [f64]], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let sq: f64 = tensors.iter().flat_map(|t| t.iter()).map(|v| v * v).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let k = max_norm / (norm + 1e-6);
        tensors.iter_mut().for_each(|t| t.iter_mut().for_each(|v| *v *= k));
    }
}

/// Clipped-surrogate actor step and squared-error critic step, run over
/// shuffled minibatches. Expects `buffer.advantages`/`returns` filled;
/// advantages are normalized here over the whole batch.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    ac: &mut ActorCritic,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    buffer: &RolloutBuffer,
    norm: Option<&RunningNormalizer>,
    cfg: &PpoConfig,
    shuffle_rng: &mut RngStream,
    workers: &Workers,
) -> Result<UpdateStats> {
    let b = buffer.len();
    if buffer.advantages.len() != b || buffer.returns.len() != b {
        return Err(Error::Shape {
            what: "advantages",
            expected: b,
            got: buffer.advantages.len(),
        });
    }
    if b == 0 {
        return Ok(UpdateStats::default());
    }
    let od = buffer.obs_dim;
    let ad = buffer.action_dim;
    let nobs = Array2::from_shape_vec((b, od), normalized(norm, &buffer.obs)).expect("obs shape");
    let actions = ArrayView2::from_shape((b, ad), &buffer.actions).map_err(|_| Error::Shape {
        what: "actions",
        expected: b * ad,
        got: buffer.actions.len(),
    })?;
    let mut adv = buffer.advantages.clone();
    normalize_advantages(&mut adv);

    let mut idx: Vec<usize> = (0..b).collect();
    let mb = cfg.minibatches.min(b);
    let mb_size = b.div_ceil(mb);
    let mut stats = UpdateStats::default();
    let (mut n_actor, mut n_critic) = (0usize, 0usize);

    for epoch in 0..cfg.actor_epochs.max(cfg.critic_epochs) {
        for i in (1..b).rev() {
            let j = (shuffle_rng.next_u64() % (i as u64 + 1)) as usize;
            idx.swap(i, j);
        }
        for chunk in idx.chunks(mb_size) {
            let m = chunk.len();
            let x = Array2::from_shape_fn((m, od), |(r, c)| nobs[[chunk[r], c]]);
            if epoch < cfg.actor_epochs {
                let a = Array2::from_shape_fn((m, ad), |(r, c)| actions[[chunk[r], c]]);
                let lp: Vec<f64> = chunk.iter().map(|&k| buffer.logp[k]).collect();
                let av: Vec<f64> = chunk.iter().map(|&k| adv[k]).collect();
                let (loss, kl, cf) = actor_step(ac, actor_opt, &x, &a, &lp, &av, cfg, workers)?;
                stats.actor_loss += loss;
                stats.approx_kl += kl;
                stats.clip_fraction += cf;
                n_actor += 1;
            }
            if epoch < cfg.critic_epochs {
                let ret: Vec<f64> = chunk.iter().map(|&k| buffer.returns[k]).collect();
                stats.critic_loss += critic_step(ac, critic_opt, &x, &ret, cfg, workers)?;
                n_critic += 1;
            }
        }
    }
    if n_actor > 0 {
        stats.actor_loss /= n_actor as f64;
        stats.approx_kl /= n_actor as f64;
        stats.clip_fraction /= n_actor as f64;
    }
    if n_critic > 0 {
        stats.critic_loss /= n_critic as f64;
    }
    Ok(stats)
}

/// Actor loss `−mean(surrogate) − c·entropy` and its gradients.
pub struct ActorGrads {
    pub loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub layers: Vec<Dense>,
    pub log_std: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn actor_step(
    ac: &mut ActorCritic,
    opt: &mut Adam,
    x: &Array2<f64>,
    a: &Array2<f64>,
    logp_old: &[f64],
    adv: &[f64],
    cfg: &PpoConfig,
    workers: &Workers,
) -> Result<(f64, f64, f64)> {
    let ActorGrads {
        loss,
        approx_kl,
        clip_fraction,
        layers: mut grads,
        log_std: mut log_std_grad,
    } = actor_grads(ac, x.view(), a.view(), logp_old, adv, cfg, workers)?;
    {
        let mut gt: Vec<&mut [f64]> = grads
            .iter_mut()
            .flat_map(|l| [l.w.as_slice_mut().unwrap(), l.b.as_slice_mut().unwrap()])
            .collect();
        gt.push(&mut log_std_grad);
        clip_grad_norm(&mut gt, cfg.max_grad_norm);
    }
    let mut g = grad_tensors(&grads);
    g.push(&log_std_grad);
    let mut params = ac.actor_tensors_mut();
    opt.step(&mut params, &g)?;
    Ok((loss, approx_kl, clip_fraction))
}

/// Loss and gradients of the clipped-surrogate objective on one minibatch.
pub fn actor_grads(
    ac: &ActorCritic,
    x: ArrayView2<f64>,
    a: ArrayView2<f64>,
    logp_old: &[f64],
    adv: &[f64],
    cfg: &PpoConfig,
    workers: &Workers,
) -> Result<ActorGrads> {
    let m = x.nrows();
    let d = a.ncols();
    let inv_m = 1.0 / m as f64;
    let log_std = ac.log_std.to_vec();
    let inv_std: Vec<f64> = log_std.iter().map(|l| (-l).exp()).collect();
    let log_std_sum: f64 = log_std.iter().sum();
    let actor = &ac.actor;
    let n_chunks = m.div_ceil(GRAD_CHUNK);
    let parts = workers.map(n_chunks, |c| -> Result<ActorChunk> {
        let lo = c * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(m);
        let (mean, cache) = actor.forward_cached(x.slice(s![lo..hi, ..]))?;
        let mut grad_mean = Array2::zeros(mean.raw_dim());
        let mut log_std_grad = vec![0.0; d];
        let (mut surrogate, mut kl, mut clipped) = (0.0, 0.0, 0usize);
        for r in 0..hi - lo {
            let k = lo + r;
            let mut sq = 0.0;
            for j in 0..d {
                let z = (a[[k, j]] - mean[[r, j]]) * inv_std[j];
                sq += z * z;
            }
            let logp = -0.5 * sq - log_std_sum - d as f64 * HALF_LN_2PI;
            let log_ratio = logp - logp_old[k];
            let ratio = log_ratio.exp();
            let unclipped = ratio * adv[k];
            let clip_val = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv[k];
            surrogate += unclipped.min(clip_val);
            kl += (ratio - 1.0) - log_ratio;
            if (ratio - 1.0).abs() > cfg.clip {
                clipped += 1;
            }
            // d(loss)/d(logp): only the unclipped branch carries gradient.
            let g = if unclipped <= clip_val { -adv[k] * ratio * inv_m } else { 0.0 };
            if g != 0.0 {
                for j in 0..d {
                    let z = (a[[k, j]] - mean[[r, j]]) * inv_std[j];
                    grad_mean[[r, j]] = g * z * inv_std[j];
                    log_std_grad[j] += g * (z * z - 1.0);
                }
            }
        }
        Ok(ActorChunk {
            grads: actor.backward(&cache, grad_mean.view()),
            log_std_grad,
            surrogate,
            kl,
            clipped,
        })
    });
    let mut grads: Option<Vec<Dense>> = None;
    let mut log_std_grad = vec![-cfg.entropy_coef; d];
    let (mut surrogate, mut kl, mut clipped) = (0.0, 0.0, 0usize);
    for p in parts {
        let p = p?;
        match grads.as_mut() {
            None => grads = Some(p.grads),
            Some(g) => add_grads(g, &p.grads),
        }
        log_std_grad.iter_mut().zip(&p.log_std_grad).for_each(|(a, b)| *a += b);
        surrogate += p.surrogate;
        kl += p.kl;
        clipped += p.clipped;
    }
    let entropy: f64 = log_std.iter().map(|l| l + 0.5 + HALF_LN_2PI).sum();
    let loss = -surrogate * inv_m - cfg.entropy_coef * entropy;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss("actor"));
    }
    Ok(ActorGrads {
        loss,
        approx_kl: kl * inv_m,
        clip_fraction: clipped as f64 * inv_m,
        layers: grads.expect("non-empty minibatch"),
        log_std: log_std_grad,
    })
}

fn critic_step(
    ac: &mut ActorCritic,
    opt: &mut Adam,
    x: &Array2<f64>,
    returns: &[f64],
    cfg: &PpoConfig,
    workers: &Workers,
) -> Result<f64> {
    let m = x.nrows();
    let inv_m = 1.0 / m as f64;
    let critic = &ac.critic;
    let n_chunks = m.div_ceil(GRAD_CHUNK);
    let parts = workers.map(n_chunks, |c| -> Result<CriticChunk> {
        let lo = c * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(m);
        let (v, cache) = critic.forward_cached(x.slice(s![lo..hi, ..]))?;
        let mut grad = Array2::zeros(v.raw_dim());
        let mut sq_err = 0.0;
        for r in 0..hi - lo {
            let e = v[[r, 0]] - returns[lo + r];
            sq_err += e * e;
            grad[[r, 0]] = 2.0 * e * inv_m;
        }
        Ok(CriticChunk {
            grads: critic.backward(&cache, grad.view()),
            sq_err,
        })
    });
    let mut grads: Option<Vec<Dense>> = None;
    let mut sq_err = 0.0;
    for p in parts {
        let p = p?;
        match grads.as_mut() {
            None => grads = Some(p.grads),
            Some(g) => add_grads(g, &p.grads),
        }
        sq_err += p.sq_err;
    }
    let loss = sq_err * inv_m;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss("critic"));
    }
    let mut grads = grads.expect("non-empty minibatch");
    {
        let mut gt: Vec<&mut [f64]> = grads
            .iter_mut()
            .flat_map(|l| [l.w.as_slice_mut().unwrap(), l.b.as_slice_mut().unwrap()])
            .collect();
        clip_grad_norm(&mut gt, cfg.max_grad_norm);
    }
    let g = grad_tensors(&grads);
    let mut params = ac.critic.tensors_mut();
    opt.step(&mut params, &g)?;
    Ok(loss)
}

/// Metrics of one completed training iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    /// 1-based.
    pub iteration: usize,
    /// Cumulative simulator steps across all environments.
    pub env_interactions: u64,
    pub wall_seconds: f64,
    /// Simulator steps per second during this iteration.
    pub fps: f64,
    /// Mean undiscounted return of episodes finished this iteration, or the
    /// previous value if none finished.
    pub mean_return: f64,
    pub success_rate: f64,
    pub episodes: usize,
    pub update: UpdateStats,
}

/// Owns an environment, the actor-critic and optimizer state.
pub struct Trainer<E: VecEnv> {
    env: E,
    cfg: PpoConfig,
    ac: ActorCritic,
    actor_opt: Adam,
    critic_opt: Adam,
    normalizer: Option<RunningNormalizer>,
    rngs: Vec<RngStream>,
    shuffle_rng: RngStream,
    workers: Workers,
    obs: Vec<f64>,
    iteration: usize,
    interactions: u64,
    elapsed: Duration,
    last_return: f64,
    last_success: f64,
}

impl<E: VecEnv> Trainer<E> {
    pub fn new(mut env: E, cfg: PpoConfig, policy: &PolicyConfig, seed: u64, workers: Workers) -> Result<Self> {
        cfg.validate()?;
        policy.validate()?;
        let mut init = RngStream::new(seed, INIT_STREAM);
        let ac = ActorCritic::new(
            env.obs_dim(),
            env.action_dim(),
            &policy.hidden,
            &policy.critic_hidden,
            policy.init_std,
            &mut init,
        );
        let obs = env.reset_all()?;
        let rngs = (0..env.n_envs())
            .map(|i| RngStream::new(seed, POLICY_STREAM + i as u64))
            .collect();
        Ok(Trainer {
            normalizer: cfg.normalize_obs.then(|| RunningNormalizer::new(env.obs_dim())),
            actor_opt: Adam::new(cfg.lr),
            critic_opt: Adam::new(cfg.lr),
            shuffle_rng: RngStream::new(seed, SHUFFLE_STREAM),
            env,
            cfg,
            ac,
            rngs,
            workers,
            obs,
            iteration: 0,
            interactions: 0,
            elapsed: Duration::ZERO,
            last_return: 0.0,
            last_success: 0.0,
        })
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn actor_critic(&self) -> &ActorCritic {
        &self.ac
    }

    pub fn normalizer(&self) -> Option<&RunningNormalizer> {
        self.normalizer.as_ref()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn env_interactions(&self) -> u64 {
        self.interactions
    }

    pub fn elapsed(&self) -> Duration {
        self.elapsed
    }

    /// Runs `steps_per_iter` synchronous steps with the current policy.
    /// Returns the buffer plus returns and success flags of finished episodes.
    pub fn collect(&mut self) -> Result<(RolloutBuffer, Vec<f64>, Vec<bool>)> {
        let n = self.env.n_envs();
        let od = self.env.obs_dim();
        let ad = self.env.action_dim();
        if self.ac.obs_dim() != od || self.ac.action_dim() != ad {
            return Err(Error::Shape {
                what: "policy dims",
                expected: od,
                got: self.ac.obs_dim(),
            });
        }
        let mut buf = RolloutBuffer::new(self.cfg.steps_per_iter, n, od, ad);
        let mut returns = Vec::new();
        let mut successes = Vec::new();
        for _ in 0..self.cfg.steps_per_iter {
            let x = normalized(self.normalizer.as_ref(), &self.obs);
            let xv = ArrayView2::from_shape((n, od), &x).expect("obs shape");
            let mean = forward_batched(&self.workers, &self.ac.actor, xv)?;
            let values = forward_batched(&self.workers, &self.ac.critic, xv)?;
            let log_std = self.ac.log_std.to_vec();
            let (actions, logp) = crate::policy::sample_and_logprob(mean.view(), &log_std, &mut self.rngs)?;
            let actions = actions.into_raw_vec_and_offset().0;
            let step = self.env.step(&actions)?;
            buf.obs.extend_from_slice(&self.obs);
            buf.actions.extend_from_slice(&actions);
            buf.logp.extend_from_slice(&logp);
            buf.values.extend(values.column(0).iter());
            buf.rewards.extend_from_slice(&step.reward);
            buf.dones.extend_from_slice(&step.terminated);
            for i in 0..n {
                if step.terminated[i] {
                    returns.push(step.episode_return[i]);
                    successes.push(step.success[i]);
                }
            }
            self.obs = step.obs;
        }
        let x = normalized(self.normalizer.as_ref(), &self.obs);
        let xv = ArrayView2::from_shape((n, od), &x).expect("obs shape");
        buf.last_values = forward_batched(&self.workers, &self.ac.critic, xv)?
            .column(0)
            .to_vec();
        Ok((buf, returns, successes))
    }

    /// One collect → GAE → update cycle. The normalizer stays frozen during
    /// the cycle and absorbs the collected observations afterwards.
    pub fn iterate(&mut self) -> Result<IterationStats> {
        let start = Instant::now();
        let (mut buf, returns, successes) = self.collect()?;
        buf.compute_gae(self.cfg.gamma, self.cfg.lambda)?;
        let update = ppo_update(
            &mut self.ac,
            &mut self.actor_opt,
            &mut self.critic_opt,
            &buf,
            self.normalizer.as_ref(),
            &self.cfg,
            &mut self.shuffle_rng,
            &self.workers,
        )?;
        if let Some(norm) = self.normalizer.as_mut() {
            norm.update(&buf.obs)?;
        }
        let new_interactions = (buf.len() as u64) * self.env.interactions_per_step();
        self.interactions += new_interactions;
        self.iteration += 1;
        if !returns.is_empty() {
            self.last_return = returns.iter().sum::<f64>() / returns.len() as f64;
            self.last_success = successes.iter().filter(|s| **s).count() as f64 / successes.len() as f64;
        }
        let dt = start.elapsed();
        self.elapsed += dt;
        Ok(IterationStats {
            iteration: self.iteration,
            env_interactions: self.interactions,
            wall_seconds: self.elapsed.as_secs_f64(),
            fps: new_interactions as f64 / dt.as_secs_f64().max(1e-9),
            mean_return: self.last_return,
            success_rate: self.last_success,
            episodes: returns.len(),
            update,
        })
    }

    /// Iterates until `max_iterations` or the wall budget runs out; the
    /// callback sees every iteration and may stop training by returning
    /// `Ok(false)`.
    pub fn train<F>(&mut self, budget: Option<Duration>, mut on_iter: F) -> Result<Vec<IterationStats>>
    where
        F: FnMut(&IterationStats, &Self) -> Result<bool>,
    {
        let mut out = Vec::new();
        while self.iteration < self.cfg.max_iterations {
            if budget.is_some_and(|b| self.elapsed >= b) {
                break;
            }
            let s = self.iterate()?;
            out.push(s);
            if !on_iter(&s, self)? {
                break;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

/// Runs the mean (noise-free) policy from a fresh reset until `episodes`
/// episodes have finished; ties within one step go to lower env indices.
pub fn evaluate<E: VecEnv>(
    env: &mut E,
    ac: &ActorCritic,
    norm: Option<&RunningNormalizer>,
    episodes: usize,
    workers: &Workers,
) -> Result<EvalResult> {
    let n = env.n_envs();
    let od = env.obs_dim();
    if ac.obs_dim() != od || ac.action_dim() != env.action_dim() {
        return Err(Error::Shape {
            what: "policy dims",
            expected: od,
            got: ac.obs_dim(),
        });
    }
    let mut obs = env.reset_all()?;
    let (mut done, mut succ, mut ret) = (0usize, 0usize, 0.0);
    while done < episodes {
        let x = normalized(norm, &obs);
        let mean = forward_batched(workers, &ac.actor, ArrayView2::from_shape((n, od), &x).expect("obs shape"))?;
        let actions: Vec<f64> = mean.iter().copied().collect();
        let step = env.step(&actions)?;
        for i in 0..n {
            if step.terminated[i] && done < episodes {
                done += 1;
                ret += step.episode_return[i];
                succ += usize::from(step.success[i]);
            }
        }
        obs = step.obs;
    }
    Ok(EvalResult {
        episodes,
        success_rate: if episodes == 0 { 0.0 } else { succ as f64 / episodes as f64 },
        mean_return: if episodes == 0 { 0.0 } else { ret / episodes as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Direct summation `A_t = Σ_k (γλ)^k δ_{t+k}` truncated at the first done.
    fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let next_v = |t: usize| if t + 1 < n { v[t + 1] } else { last };
        let delta: Vec<f64> = (0..n)
            .map(|t| r[t] + g * next_v(t) * if d[t] { 0.0 } else { 1.0 } - v[t])
            .collect();
        (0..n)
            .map(|t| {
                let mut acc = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    acc += w * delta[k];
                    if d[k] {
                        break;
                    }
                    w *= g * l;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn gae_single_done_step() {
        let (a, r) = gae(&[1.5], &[0.4], &[true], &[9.0], 1, 0.98, 0.95).unwrap();
        assert_abs_diff_eq!(a[0], 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(r[0], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn gae_myopic_limit() {
        let rw = [1.0, -2.0, 0.5, 3.0];
        let v = [0.1, 0.2, -0.3, 0.4];
        let (a, _) = gae(&rw, &v, &[false; 4], &[5.0], 1, 1e-300, 0.9).unwrap();
        for t in 0..4 {
            assert_abs_diff_eq!(a[t], rw[t] - v[t], epsilon = 1e-12);
        }
    }

    #[test]
    fn gae_matches_oracle_random() {
        let mut rng = RngStream::new(11, 0);
        for _ in 0..100 {
            let n_envs = 1 + (rng.next_u64() % 3) as usize;
            let steps = 1 + (rng.next_u64() % 32) as usize;
            let n = n_envs * steps;
            let r: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            let d: Vec<bool> = (0..n).map(|_| rng.unit() < 0.2).collect();
            let last: Vec<f64> = (0..n_envs).map(|_| rng.standard_normal()).collect();
            let (g, l) = (rng.unit(), rng.unit());
            let (a, ret) = gae(&r, &v, &d, &last, n_envs, g, l).unwrap();
            for e in 0..n_envs {
                let pick = |x: &[f64]| (0..steps).map(|t| x[t * n_envs + e]).collect::<Vec<_>>();
                let dd: Vec<bool> = (0..steps).map(|t| d[t * n_envs + e]).collect();
                let want = gae_oracle(&pick(&r), &pick(&v), &dd, last[e], g, l);
                for t in 0..steps {
                    assert!((a[t * n_envs + e] - want[t]).abs() < 1e-10);
                    assert_abs_diff_eq!(ret[t * n_envs + e], a[t * n_envs + e] + v[t * n_envs + e]);
                }
            }
        }
    }

    #[test]
    fn gae_one_step_all_done_ignores_discount() {
        let r = [3.0, -1.0, 0.25];
        let v = [1.0, 0.5, -0.5];
        for (g, l) in [(0.98, 0.95), (0.5, 0.0), (1.0, 1.0)] {
            let (a, _) = gae(&r, &v, &[true; 3], &[7.0, 8.0, 9.0], 3, g, l).unwrap();
            for i in 0..3 {
                assert_eq!(a[i], r[i] - v[i]);
            }
        }
    }

    #[test]
    fn advantage_normalization_moments() {
        let mut rng = RngStream::new(12, 0);
        let mut a: Vec<f64> = (0..1000).map(|_| 3.0 + 2.0 * rng.standard_normal()).collect();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let m = a.iter().sum::<f64>() / n;
        let sd = (a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
        assert!(m.abs() < 1e-10);
        assert!((sd - 1.0).abs() < 1e-8);
    }

    #[test]
    fn surrogate_examples() {
        for a in [-1.3, 0.0, 2.5] {
            assert_eq!(clipped_surrogate(1.0, a, 0.2), a);
        }
        assert_abs_diff_eq!(clipped_surrogate(2.0, 1.5, 0.2), 1.2 * 1.5, epsilon = 1e-15);
        // Negative advantage keeps the pessimistic (unclipped) branch.
        assert_eq!(clipped_surrogate(2.0, -1.0, 0.2), -2.0);
    }

    fn two_pass(x: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
        let n = (x.len() / d) as f64;
        let mut m = vec![0.0; d];
        for r in x.chunks(d) {
            (0..d).for_each(|j| m[j] += r[j] / n);
        }
        let mut v = vec![0.0; d];
        for r in x.chunks(d) {
            (0..d).for_each(|j| v[j] += (r[j] - m[j]).powi(2) / n);
        }
        (m, v)
    }

    #[test]
    fn normalizer_matches_two_pass() {
        let mut rng = RngStream::new(13, 0);
        let d = 5;
        let x: Vec<f64> = (0..d * 400).map(|i| (i % d) as f64 * 10.0 + rng.standard_normal()).collect();
        let mut one = RunningNormalizer::new(d);
        one.update(&x).unwrap();
        let (m, v) = two_pass(&x, d);
        for j in 0..d {
            assert!((one.mean[j] - m[j]).abs() < 1e-10);
            assert!((one.variance()[j] - v[j]).abs() < 1e-10);
        }
        let mut halves = RunningNormalizer::new(d);
        halves.update(&x[..d * 150]).unwrap();
        halves.update(&x[d * 150..]).unwrap();
        for j in 0..d {
            assert!((halves.mean[j] - m[j]).abs() < 1e-9);
            assert!((halves.variance()[j] - v[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn normalizer_constant_column_and_purity() {
        let mut n = RunningNormalizer::new(2);
        n.update(&[4.0, 1.0, 4.0, 2.0, 4.0, 3.0]).unwrap();
        let before = n.clone();
        let y = n.normalize(&[4.0, 2.0]);
        assert_eq!(y[0], 0.0);
        assert_abs_diff_eq!(y[1], 0.0, epsilon = 1e-12);
        assert_eq!(n, before);
        assert_eq!(n.normalize(&[1e9, 0.0])[0], 10.0);
        assert!(n.update(&[1.0]).is_err());
    }

    fn synthetic_buffer() -> RolloutBuffer {
        let mut rng = RngStream::new(14, 0);
        let (steps, n, od, ad) = (4, 8, 3, 2);
        let mut b = RolloutBuffer::new(steps, n, od, ad);
        let k = steps * n;
        b.obs = (0..k * od).map(|_| rng.standard_normal()).collect();
        b.actions = (0..k * ad).map(|_| rng.standard_normal()).collect();
        b.logp = (0..k).map(|_| -2.0 + 0.1 * rng.standard_normal()).collect();
        b.values = (0..k).map(|_| rng.standard_normal()).collect();
        b.rewards = (0..k).map(|_| rng.standard_normal()).collect();
        b.dones = (0..k).map(|i| i >= k - n).collect();
        b.last_values = vec![0.0; n];
        b.compute_gae(0.98, 0.95).unwrap();
        b
    }

    fn run_update(b: &RolloutBuffer, workers: &Workers) -> (ActorCritic, UpdateStats) {
        let mut rng = RngStream::new(15, INIT_STREAM);
        let mut ac = ActorCritic::new(3, 2, &[8, 8], &[8], 1.0, &mut rng);
        let cfg = PpoConfig {
            minibatches: 2,
            actor_epochs: 3,
            critic_epochs: 2,
            lr: 1e-3,
            ..PpoConfig::step_based()
        };
        let (mut ao, mut co) = (Adam::new(cfg.lr), Adam::new(cfg.lr));
        let mut sh = RngStream::new(15, SHUFFLE_STREAM);
        let st = ppo_update(&mut ac, &mut ao, &mut co, b, None, &cfg, &mut sh, workers).unwrap();
        (ac, st)
    }

    #[test]
    fn update_is_reproducible() {
        let b = synthetic_buffer();
        let (a1, s1) = run_update(&b, &Workers::sequential());
        let (a2, s2) = run_update(&b, &Workers::sequential());
        assert_eq!(a1, a2);
        assert_eq!(s1, s2);
        assert!(s1.critic_loss.is_finite() && s1.actor_loss.is_finite());
    }

    #[test]
    fn non_finite_buffer_aborts() {
        let mut b = synthetic_buffer();
        b.returns[3] = f64::NAN;
        let mut rng = RngStream::new(15, INIT_STREAM);
        let mut ac = ActorCritic::new(3, 2, &[8], &[8], 1.0, &mut rng);
        let cfg = PpoConfig::black_box();
        let (mut ao, mut co) = (Adam::new(1e-3), Adam::new(1e-3));
        let mut sh = RngStream::new(0, SHUFFLE_STREAM);
        let err = ppo_update(&mut ac, &mut ao, &mut co, &b, None, &cfg, &mut sh, &Workers::sequential());
        assert!(matches!(err, Err(Error::NonFiniteLoss("critic"))));
    }

    #[test]
    fn actor_gradients_match_finite_differences() {
        let mut rng = RngStream::new(16, 0);
        let (m, od, ad) = (12, 3, 2);
        let mut ac = ActorCritic::new(od, ad, &[6, 5], &[4], 1.0, &mut rng);
        for t in ac.actor_tensors_mut() {
            t.iter_mut().for_each(|v| *v += 0.2 * rng.standard_normal());
        }
        let x = Array2::from_shape_fn((m, od), |_| rng.standard_normal());
        let a = Array2::from_shape_fn((m, ad), |_| rng.standard_normal());
        let adv: Vec<f64> = (0..m).map(|_| rng.standard_normal()).collect();
        // Old log-probs near the current ones so both clip branches occur.
        let mean = ac.actor.forward(x.view()).unwrap();
        let logp_old: Vec<f64> = (0..m)
            .map(|r| {
                let lp = crate::policy::gaussian_log_prob(
                    &a.row(r).to_vec(),
                    &mean.row(r).to_vec(),
                    ac.log_std.as_slice().unwrap(),
                );
                lp + 0.4 * rng.standard_normal()
            })
            .collect();
        let cfg = PpoConfig { entropy_coef: 0.01, ..PpoConfig::default() };
        let w = Workers::sequential();
        let g = actor_grads(&ac, x.view(), a.view(), &logp_old, &adv, &cfg, &w).unwrap();
        let mut analytic: Vec<Vec<f64>> = grad_tensors(&g.layers).iter().map(|t| t.to_vec()).collect();
        analytic.push(g.log_std.clone());
        let loss = |p: &ActorCritic| actor_grads(p, x.view(), a.view(), &logp_old, &adv, &cfg, &w).unwrap().loss;
        let h = 1e-6;
        for (ti, gt) in analytic.iter().enumerate() {
            for k in 0..gt.len() {
                let mut p = ac.clone();
                p.actor_tensors_mut()[ti][k] += h;
                let mut q = ac.clone();
                q.actor_tensors_mut()[ti][k] -= h;
                let fd = (loss(&p) - loss(&q)) / (2.0 * h);
                let rel = (fd - gt[k]).abs() / fd.abs().max(gt[k].abs()).max(1e-6);
                assert!(rel < 1e-4, "tensor {ti} entry {k}: fd {fd} analytic {}", gt[k]);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::step_based().validate().is_ok());
        assert!(PpoConfig::black_box().validate().is_ok());
        assert!(PpoConfig { gamma: 0.0, ..PpoConfig::default() }.validate().is_err());
        assert!(PpoConfig { lambda: 1.5, ..PpoConfig::default() }.validate().is_err());
        assert!(PpoConfig { clip: 0.0, ..PpoConfig::default() }.validate().is_err());
    }
}
