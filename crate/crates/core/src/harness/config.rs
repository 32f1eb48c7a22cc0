//! Run configuration loaded from TOML. Every key is optional; missing keys
//! take the defaults below, unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bbrl::ContextMask;
use crate::env::{EnvConfig, RewardWeights, SuccessThresholds, TargetRanges};
use crate::error::{Error, Result};
use crate::kinematics::{ArmModel, Joints};
use crate::pushworld::{BoxPose, CavityModel};
use crate::ppo::{PolicyConfig, PpoConfig};
use crate::promp::ProMpConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    TrainStep,
    TrainBb,
    Eval,
    Bench,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::TrainStep => "train-step",
            Mode::TrainBb => "train-bb",
            Mode::Eval => "eval",
            Mode::Bench => "bench",
        }
    }
}

/// Which observation entries form the black-box context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextChoice {
    /// Box pose and target pose.
    ObjectAndTarget,
    All,
}

impl ContextChoice {
    pub fn mask(&self) -> ContextMask {
        match self {
            ContextChoice::ObjectAndTarget => ContextMask::object_and_target(),
            ContextChoice::All => ContextMask::all(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 1000,
            seed: 1_000_003,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub n_envs: Vec<usize>,
    pub workers: Vec<usize>,
    /// Wall-clock seconds of stepping per measurement.
    pub window_s: f64,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_envs: vec![256, 1024, 4096],
            workers: vec![1, 2, 4, 8],
            window_s: 2.0,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub n_envs: usize,
    /// Worker threads; `0` uses every core.
    pub workers: usize,
    pub out_dir: PathBuf,
    /// Iterations between checkpoints; `0` writes only the final one.
    pub checkpoint_every: usize,
    /// Training wall-clock budget in seconds; `0` means unlimited.
    pub wall_budget_s: f64,
    pub env: EnvConfig,
    pub promp: ProMpConfig,
    pub context: ContextChoice,
    pub ppo_step: PpoConfig,
    pub ppo_bb: PpoConfig,
    pub policy: PolicyConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::TrainBb,
            seed: 0,
            n_envs: 4096,
            workers: 0,
            out_dir: PathBuf::from("runs/default"),
            checkpoint_every: 50,
            wall_budget_s: 0.0,
            env: EnvConfig::default(),
            promp: ProMpConfig::default(),
            context: ContextChoice::ObjectAndTarget,
            ppo_step: PpoConfig::step_based(),
            ppo_bb: PpoConfig::black_box(),
            policy: PolicyConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    /// Environment config with the run-level `n_envs` and `seed` applied.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            n_envs: self.n_envs,
            seed: self.seed,
            ..self.env.clone()
        }
    }

    pub fn promp_config(&self) -> ProMpConfig {
        ProMpConfig {
            horizon: self.env.horizon,
            ..self.promp
        }
    }

    /// PPO settings for the given training mode.
    pub fn ppo(&self, mode: Mode) -> &PpoConfig {
        match mode {
            Mode::TrainBb => &self.ppo_bb,
            _ => &self.ppo_step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 {
            return Err(Error::Config("n_envs must be >= 1".into()));
        }
        if !(self.wall_budget_s >= 0.0) {
            return Err(Error::Config("wall_budget_s must be >= 0".into()));
        }
        self.env_config().validate()?;
        self.promp_config().validate()?;
        self.ppo_step.validate()?;
        self.ppo_bb.validate()?;
        self.policy.validate()?;
        if self.eval.episodes == 0 {
            return Err(Error::Config("eval.episodes must be >= 1".into()));
        }
        let b = &self.bench;
        if b.n_envs.is_empty() || b.workers.is_empty() || b.n_envs.contains(&0) || b.workers.contains(&0) {
            return Err(Error::Config("bench.n_envs and bench.workers must be non-empty and positive".into()));
        }
        if !(b.window_s > 0.0) || b.repeats == 0 {
            return Err(Error::Config("bench.window_s and bench.repeats must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
            Error::ConfigParse {
                line,
                msg: e.message().trim().to_string(),
            }
        })?;
        let cfg = raw.resolve()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml_str(&text)
    }

    /// Fully spelled-out TOML that loads back to `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&RawConfig::from_resolved(self)).expect("config serializes")
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

// Raw file layout. Every field optional so partial files work.

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<Mode>,
    seed: Option<u64>,
    n_envs: Option<usize>,
    workers: Option<usize>,
    out_dir: Option<PathBuf>,
    checkpoint_every: Option<usize>,
    wall_budget_s: Option<f64>,
    env: Option<RawEnv>,
    promp: Option<RawPromp>,
    ppo: Option<RawPpoModes>,
    policy: Option<RawPolicy>,
    eval: Option<RawEval>,
    bench: Option<RawBench>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnv {
    dt: Option<f64>,
    horizon: Option<usize>,
    substeps: Option<usize>,
    q0: Option<Joints>,
    box0: Option<[f64; 3]>,
    box_center_z: Option<f64>,
    reward: Option<RawReward>,
    success: Option<RawSuccess>,
    targets: Option<RawTargets>,
    cavity: Option<RawCavity>,
    arm: Option<RawArm>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReward {
    w_rod: Option<f64>,
    w_rod_rot: Option<f64>,
    w_energy: Option<f64>,
    w_lim: Option<f64>,
    w_rot: Option<f64>,
    w_goal: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuccess {
    distance: Option<f64>,
    yaw: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTargets {
    x: Option<[f64; 2]>,
    y: Option<[f64; 2]>,
    yaw: Option<[f64; 2]>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCavity {
    half_width: Option<f64>,
    rot_coupling: Option<f64>,
    insert_height: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArm {
    kp: Option<Joints>,
    /// Defaults to critical damping for the configured `kp` and inertia.
    kd: Option<Joints>,
    inertia: Option<Joints>,
    damping: Option<Joints>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPromp {
    n_basis: Option<usize>,
    bandwidth: Option<f64>,
    weight_scale: Option<f64>,
    context: Option<ContextChoice>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPpoModes {
    step: Option<RawPpo>,
    bb: Option<RawPpo>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPpo {
    gamma: Option<f64>,
    lambda: Option<f64>,
    clip: Option<f64>,
    lr: Option<f64>,
    actor_epochs: Option<usize>,
    critic_epochs: Option<usize>,
    minibatches: Option<usize>,
    steps_per_iter: Option<usize>,
    normalize_obs: Option<bool>,
    max_iterations: Option<usize>,
    entropy_coef: Option<f64>,
    max_grad_norm: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    hidden: Option<Vec<usize>>,
    critic_hidden: Option<Vec<usize>>,
    init_std: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEval {
    episodes: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBench {
    n_envs: Option<Vec<usize>>,
    workers: Option<Vec<usize>>,
    window_s: Option<f64>,
    repeats: Option<usize>,
}

fn set<T>(dst: &mut T, src: Option<T>) {
    if let Some(v) = src {
        *dst = v;
    }
}

impl RawPpo {
    fn apply(self, c: &mut PpoConfig) {
        set(&mut c.gamma, self.gamma);
        set(&mut c.lambda, self.lambda);
        set(&mut c.clip, self.clip);
        set(&mut c.lr, self.lr);
        set(&mut c.actor_epochs, self.actor_epochs);
        set(&mut c.critic_epochs, self.critic_epochs);
        set(&mut c.minibatches, self.minibatches);
        set(&mut c.steps_per_iter, self.steps_per_iter);
        set(&mut c.normalize_obs, self.normalize_obs);
        set(&mut c.max_iterations, self.max_iterations);
        set(&mut c.entropy_coef, self.entropy_coef);
        set(&mut c.max_grad_norm, self.max_grad_norm);
    }

    fn from_resolved(c: &PpoConfig) -> Self {
        RawPpo {
            gamma: Some(c.gamma),
            lambda: Some(c.lambda),
            clip: Some(c.clip),
            lr: Some(c.lr),
            actor_epochs: Some(c.actor_epochs),
            critic_epochs: Some(c.critic_epochs),
            minibatches: Some(c.minibatches),
            steps_per_iter: Some(c.steps_per_iter),
            normalize_obs: Some(c.normalize_obs),
            max_iterations: Some(c.max_iterations),
            entropy_coef: Some(c.entropy_coef),
            max_grad_norm: Some(c.max_grad_norm),
        }
    }
}

impl RawConfig {
    fn resolve(self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        set(&mut c.mode, self.mode);
        set(&mut c.seed, self.seed);
        set(&mut c.n_envs, self.n_envs);
        set(&mut c.workers, self.workers);
        set(&mut c.out_dir, self.out_dir);
        set(&mut c.checkpoint_every, self.checkpoint_every);
        set(&mut c.wall_budget_s, self.wall_budget_s);
        if let Some(e) = self.env {
            let env = &mut c.env;
            set(&mut env.dt, e.dt);
            set(&mut env.horizon, e.horizon);
            set(&mut env.substeps, e.substeps);
            set(&mut env.q0, e.q0);
            if let Some([x, y, yaw]) = e.box0 {
                env.box0 = BoxPose::new(x, y, yaw);
            }
            set(&mut env.box_center_z, e.box_center_z);
            if let Some(r) = e.reward {
                let w = &mut env.weights;
                set(&mut w.rod, r.w_rod);
                set(&mut w.rod_rot, r.w_rod_rot);
                set(&mut w.en, r.w_energy);
                set(&mut w.lim, r.w_lim);
                set(&mut w.rot, r.w_rot);
                set(&mut w.goal, r.w_goal);
            }
            if let Some(s) = e.success {
                set(&mut env.success.distance, s.distance);
                set(&mut env.success.yaw, s.yaw);
            }
            if let Some(t) = e.targets {
                let r = &mut env.ranges;
                set(&mut r.x, t.x.map(|[a, b]| (a, b)));
                set(&mut r.y, t.y.map(|[a, b]| (a, b)));
                set(&mut r.yaw, t.yaw.map(|[a, b]| (a, b)));
            }
            if let Some(cv) = e.cavity {
                let d = env.cavity;
                env.cavity = CavityModel::new(
                    cv.half_width.unwrap_or(d.half_width),
                    cv.rot_coupling.unwrap_or(d.rot_coupling),
                    cv.insert_height.unwrap_or(d.insert_height),
                )?;
            }
            if let Some(a) = e.arm {
                let d = ArmModel::default();
                let kp = a.kp.unwrap_or(d.kp);
                let inertia = a.inertia.unwrap_or(d.inertia);
                let kd = a.kd.unwrap_or_else(|| crate::kinematics::critical_damping(&kp, &inertia));
                env.arm = ArmModel::new(
                    d.joints,
                    d.flange,
                    d.rod_length,
                    d.q_lo,
                    d.q_hi,
                    d.qd_max,
                    d.tau_max,
                    kp,
                    kd,
                    inertia,
                    a.damping.unwrap_or(d.damping),
                )?;
            }
        }
        if let Some(p) = self.promp {
            set(&mut c.promp.n_basis, p.n_basis);
            set(&mut c.promp.bandwidth, p.bandwidth);
            set(&mut c.promp.weight_scale, p.weight_scale);
            set(&mut c.context, p.context);
        }
        if let Some(p) = self.ppo {
            if let Some(s) = p.step {
                s.apply(&mut c.ppo_step);
            }
            if let Some(b) = p.bb {
                b.apply(&mut c.ppo_bb);
            }
        }
        if let Some(p) = self.policy {
            set(&mut c.policy.hidden, p.hidden);
            set(&mut c.policy.critic_hidden, p.critic_hidden);
            set(&mut c.policy.init_std, p.init_std);
        }
        if let Some(e) = self.eval {
            set(&mut c.eval.episodes, e.episodes);
            set(&mut c.eval.seed, e.seed);
        }
        if let Some(b) = self.bench {
            set(&mut c.bench.n_envs, b.n_envs);
            set(&mut c.bench.workers, b.workers);
            set(&mut c.bench.window_s, b.window_s);
            set(&mut c.bench.repeats, b.repeats);
        }
        c.promp.horizon = c.env.horizon;
        Ok(c)
    }

    fn from_resolved(c: &RunConfig) -> Self {
        let e = &c.env;
        let w: &RewardWeights = &e.weights;
        let s: &SuccessThresholds = &e.success;
        let r: &TargetRanges = &e.ranges;
        RawConfig {
            mode: Some(c.mode),
            seed: Some(c.seed),
            n_envs: Some(c.n_envs),
            workers: Some(c.workers),
            out_dir: Some(c.out_dir.clone()),
            checkpoint_every: Some(c.checkpoint_every),
            wall_budget_s: Some(c.wall_budget_s),
            env: Some(RawEnv {
                dt: Some(e.dt),
                horizon: Some(e.horizon),
                substeps: Some(e.substeps),
                q0: Some(e.q0),
                box0: Some([e.box0.x, e.box0.y, e.box0.yaw]),
                box_center_z: Some(e.box_center_z),
                reward: Some(RawReward {
                    w_rod: Some(w.rod),
                    w_rod_rot: Some(w.rod_rot),
                    w_energy: Some(w.en),
                    w_lim: Some(w.lim),
                    w_rot: Some(w.rot),
                    w_goal: Some(w.goal),
                }),
                success: Some(RawSuccess {
                    distance: Some(s.distance),
                    yaw: Some(s.yaw),
                }),
                targets: Some(RawTargets {
                    x: Some([r.x.0, r.x.1]),
                    y: Some([r.y.0, r.y.1]),
                    yaw: Some([r.yaw.0, r.yaw.1]),
                }),
                cavity: Some(RawCavity {
                    half_width: Some(e.cavity.half_width),
                    rot_coupling: Some(e.cavity.rot_coupling),
                    insert_height: Some(e.cavity.insert_height),
                }),
                arm: Some(RawArm {
                    kp: Some(e.arm.kp),
                    kd: Some(e.arm.kd),
                    inertia: Some(e.arm.inertia),
                    damping: Some(e.arm.damping),
                }),
            }),
            promp: Some(RawPromp {
                n_basis: Some(c.promp.n_basis),
                bandwidth: Some(c.promp.bandwidth),
                weight_scale: Some(c.promp.weight_scale),
                context: Some(c.context),
            }),
            ppo: Some(RawPpoModes {
                step: Some(RawPpo::from_resolved(&c.ppo_step)),
                bb: Some(RawPpo::from_resolved(&c.ppo_bb)),
            }),
            policy: Some(RawPolicy {
                hidden: Some(c.policy.hidden.clone()),
                critic_hidden: Some(c.policy.critic_hidden.clone()),
                init_std: Some(c.policy.init_std),
            }),
            eval: Some(RawEval {
                episodes: Some(c.eval.episodes),
                seed: Some(c.eval.seed),
            }),
            bench: Some(RawBench {
                n_envs: Some(c.bench.n_envs.clone()),
                workers: Some(c.bench.workers.clone()),
                window_s: Some(c.bench.window_s),
                repeats: Some(c.bench.repeats),
            }),
        }
    }
}
