//! Batched step-based box-pushing environment.
//!
//! Observation layout (35 reals per environment):
//!
//! | range   | content                                   |
//! |---------|-------------------------------------------|
//! | 0..7    | joint positions                           |
//! | 7..14   | joint velocities                          |
//! | 14..21  | box pose `x, y, z, qw, qx, qy, qz`        |
//! | 21..28  | target pose, same layout                  |
//! | 28..35  | last action (normalized to `[-1, 1]`)     |
//!
//! Episodes end by timeout only; terminated environments are reset inside
//! the same call and their pre-reset observation is returned separately.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::kinematics::{
    integrate_unchecked, limit_excess, pd_torque, rod_down_error, rod_down_error_axis, tip_frame,
    ArmModel, JointState, Joints, TipPose, Vec3, N_JOINTS,
};
use crate::mathcore::{quat_from_yaw, yaw_error_unchecked, RngStream};
use crate::parallel::Workers;
use crate::pushworld::{planar_distance, resolve_contact, tip_in_box_frame, BoxPose, CavityModel};

pub const OBS_DIM: usize = 35;
pub const ACTION_DIM: usize = N_JOINTS;

/// Observation block offsets.
pub mod layout {
    use std::ops::Range;

    pub const Q: Range<usize> = 0..7;
    pub const QD: Range<usize> = 7..14;
    pub const BOX: Range<usize> = 14..21;
    pub const TARGET: Range<usize> = 21..28;
    pub const LAST_ACTION: Range<usize> = 28..35;
}

/// Home joint configuration: rod tip at (0.45, 0, 0.03) pointing down.
/// Values are the 12-digit IK solution, the last joint included.
#[allow(clippy::approx_constant)]
pub const DEFAULT_Q0: Joints = [
    0.0,
    0.392331305383,
    0.0,
    -2.527477717195,
    0.0,
    2.919809022578,
    0.785398163397,
];

/// Positive magnitudes; every term is applied with a negative sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub rod: f64,
    pub rod_rot: f64,
    pub en: f64,
    pub lim: f64,
    pub rot: f64,
    pub goal: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            rod: 1.0,
            rod_rot: 1.0,
            en: 5e-4,
            lim: 1.0,
            rot: 2.0,
            goal: 3.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRanges {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub yaw: (f64, f64),
}

impl Default for TargetRanges {
    fn default() -> Self {
        TargetRanges {
            x: (0.3, 0.6),
            y: (-0.45, 0.45),
            yaw: (0.0, TAU),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessThresholds {
    pub distance: f64,
    pub yaw: f64,
}

impl Default for SuccessThresholds {
    fn default() -> Self {
        SuccessThresholds {
            distance: 0.05,
            yaw: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub n_envs: usize,
    pub dt: f64,
    pub horizon: usize,
    pub substeps: usize,
    pub q0: Joints,
    pub box0: BoxPose,
    /// Height of the box centre point (table surface + half the box).
    pub box_center_z: f64,
    pub ranges: TargetRanges,
    pub weights: RewardWeights,
    pub success: SuccessThresholds,
    pub seed: u64,
    pub arm: ArmModel,
    pub cavity: CavityModel,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_envs: 4096,
            dt: 0.02,
            horizon: 100,
            substeps: 4,
            q0: DEFAULT_Q0,
            box0: BoxPose::new(0.45, 0.0, 0.0),
            box_center_z: 0.05,
            ranges: TargetRanges::default(),
            weights: RewardWeights::default(),
            success: SuccessThresholds::default(),
            seed: 0,
            arm: ArmModel::default(),
            cavity: CavityModel::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 {
            return Err(Error::Config("n_envs must be >= 1".into()));
        }
        if self.horizon == 0 || self.substeps == 0 || !(self.dt > 0.0) {
            return Err(Error::Config("horizon, substeps and dt must be positive".into()));
        }
        if (self.horizon as f64 * self.dt - 2.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "episode length horizon·dt must be 2.0 s, got {}",
                self.horizon as f64 * self.dt
            )));
        }
        for (name, (lo, hi)) in [("x", self.ranges.x), ("y", self.ranges.y), ("yaw", self.ranges.yaw)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("target range {name} is not well ordered")));
            }
        }
        let w = &self.weights;
        if [w.rod, w.rod_rot, w.en, w.lim, w.rot, w.goal].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("reward weights must be >= 0".into()));
        }
        if self.q0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("q0 must be finite".into()));
        }
        let frame = tip_frame(&self.arm, &self.q0);
        let local = tip_in_box_frame(&self.box0, &[frame.position[0], frame.position[1]]);
        let h = self.cavity.half_width;
        if local[0].abs() > h || local[1].abs() > h || frame.position[2] > self.cavity.insert_height {
            return Err(Error::Config(format!(
                "q0 places the rod tip at ({:.4}, {:.4}, {:.4}), outside the box cavity",
                frame.position[0], frame.position[1], frame.position[2]
            )));
        }
        Ok(())
    }
}

/// Commanded target pose. `yaw` is kept as sampled, in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Command {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Command {
    pub fn target(&self) -> BoxPose {
        BoxPose::new(self.x, self.y, self.yaw)
    }
}

/// Unweighted dense reward terms, all non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardTerms {
    pub goal: f64,
    pub rot: f64,
    pub en: f64,
    pub lim: f64,
    pub rod: f64,
    pub rod_rot: f64,
}

/// Draws a target uniformly from the configured ranges.
pub fn sample_target(rng: &mut RngStream, ranges: &TargetRanges) -> Result<Command> {
    Ok(Command {
        x: rng.uniform(ranges.x.0, ranges.x.1)?,
        y: rng.uniform(ranges.y.0, ranges.y.1)?,
        yaw: rng.uniform(ranges.yaw.0, ranges.yaw.1)?,
    })
}

/// The six dense reward terms. `s` should hold the pre-clamp joint values.
#[allow(clippy::too_many_arguments)]
pub fn reward_terms(
    arm: &ArmModel,
    s: &JointState,
    tau: &Joints,
    tip: &TipPose,
    b: &BoxPose,
    cmd: &Command,
    box_center_z: f64,
) -> RewardTerms {
    terms_from_parts(arm, s, tau, &tip.position, rod_down_error(tip), b, cmd, box_center_z)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn terms_from_parts(
    arm: &ArmModel,
    s: &JointState,
    tau: &Joints,
    tip_pos: &Vec3,
    rod_rot: f64,
    b: &BoxPose,
    cmd: &Command,
    box_center_z: f64,
) -> RewardTerms {
    let dx = tip_pos[0] - b.x;
    let dy = tip_pos[1] - b.y;
    let dz = tip_pos[2] - box_center_z;
    RewardTerms {
        goal: (b.x - cmd.x).hypot(b.y - cmd.y),
        rot: yaw_error_unchecked(b.yaw, cmd.yaw),
        en: tau.iter().map(|t| t * t).sum(),
        lim: limit_excess(arm, s),
        rod: (dx * dx + dy * dy + dz * dz).sqrt(),
        rod_rot,
    }
}

#[inline]
pub fn total_reward(t: &RewardTerms, w: &RewardWeights) -> f64 {
    -w.rod * t.rod - w.rod_rot * t.rod_rot - w.en * t.en - w.lim * t.lim - w.rot * t.rot - w.goal * t.goal
}

#[inline]
pub fn is_success(b: &BoxPose, cmd: &Command, thr: &SuccessThresholds) -> bool {
    planar_distance(b, &cmd.target()) <= thr.distance && yaw_error_unchecked(b.yaw, cmd.yaw) <= thr.yaw
}

/// Per-environment state.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub joints: JointState,
    pub box_pose: BoxPose,
    pub command: Command,
    pub last_action: Joints,
    pub step_count: usize,
    pub episode_return: f64,
    rng: RngStream,
}

impl EnvState {
    fn new(cfg: &EnvConfig, env_id: usize) -> Result<Self> {
        let mut s = EnvState {
            joints: JointState::at_rest(cfg.q0),
            box_pose: cfg.box0,
            command: Command::default(),
            last_action: [0.0; N_JOINTS],
            step_count: 0,
            episode_return: 0.0,
            rng: RngStream::new(cfg.seed, env_id as u64),
        };
        s.reset(cfg)?;
        Ok(s)
    }

    fn reset(&mut self, cfg: &EnvConfig) -> Result<()> {
        self.joints = JointState::at_rest(cfg.q0);
        self.box_pose = BoxPose::new(cfg.box0.x, cfg.box0.y, cfg.box0.yaw);
        self.last_action = [0.0; N_JOINTS];
        self.step_count = 0;
        self.episode_return = 0.0;
        self.command = sample_target(&mut self.rng, &cfg.ranges)?;
        Ok(())
    }

    pub fn rng(&self) -> &RngStream {
        &self.rng
    }

    fn write_obs(&self, cfg: &EnvConfig, out: &mut [f64]) {
        out[layout::Q].copy_from_slice(&self.joints.q);
        out[layout::QD].copy_from_slice(&self.joints.qd);
        write_pose(&mut out[layout::BOX], &self.box_pose, cfg.box_center_z);
        write_pose(&mut out[layout::TARGET], &self.command.target(), cfg.box_center_z);
        out[layout::LAST_ACTION].copy_from_slice(&self.last_action);
    }
}

fn write_pose(out: &mut [f64], p: &BoxPose, z: f64) {
    let q = quat_from_yaw(p.yaw);
    out[0] = p.x;
    out[1] = p.y;
    out[2] = z;
    out[3] = q.w;
    out[4] = q.x;
    out[5] = q.y;
    out[6] = q.z;
}

/// How a step drives the joint targets.
#[derive(Clone, Copy)]
pub(crate) enum Control<'a> {
    /// Normalized actions mapped affinely onto the joint range.
    Action(&'a [f64]),
    /// Absolute joint targets, clamped to the joint limits.
    Target(&'a [f64]),
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Outcome {
    pub reward: f64,
    pub terms: RewardTerms,
    pub success: bool,
    pub terminated: bool,
    pub episode_return: f64,
}

impl Default for Outcome {
    fn default() -> Self {
        Outcome {
            reward: 0.0,
            terms: RewardTerms::default(),
            success: false,
            terminated: false,
            episode_return: 0.0,
        }
    }
}

/// Advances one environment by one control step. On timeout the pre-reset
/// observation goes to `final_obs` and the state is reset in place.
pub(crate) fn advance(cfg: &EnvConfig, s: &mut EnvState, control: Control<'_>, final_obs: Option<&mut [f64]>) -> Outcome {
    let arm = &cfg.arm;
    let (q_des, last_action) = match control {
        Control::Action(a) => {
            let a: Joints = std::array::from_fn(|i| a[i].clamp(-1.0, 1.0));
            (arm.action_to_target(&a), a)
        }
        Control::Target(t) => {
            let t: Joints = std::array::from_fn(|i| t[i]);
            let q = arm.clamp_to_limits(&t);
            (q, arm.target_to_action(&q))
        }
    };
    let tau = pd_torque(arm, &q_des, &s.joints);
    let integ = integrate_unchecked(arm, &s.joints, &tau, cfg.dt, cfg.substeps);
    s.joints = integ.state;
    let frame = tip_frame(arm, &s.joints.q);
    let tip = frame.position;
    s.box_pose = resolve_contact(&s.box_pose, &[tip[0], tip[1]], tip[2], &cfg.cavity);
    let terms = terms_from_parts(
        arm,
        &integ.unclamped,
        &tau,
        &tip,
        rod_down_error_axis(&frame.rod_axis()),
        &s.box_pose,
        &s.command,
        cfg.box_center_z,
    );
    let reward = total_reward(&terms, &cfg.weights);
    s.last_action = last_action;
    s.step_count += 1;
    s.episode_return += reward;
    let success = is_success(&s.box_pose, &s.command, &cfg.success);
    let terminated = s.step_count >= cfg.horizon;
    let episode_return = s.episode_return;
    if terminated {
        if let Some(out) = final_obs {
            s.write_obs(cfg, out);
        }
        // Range validity was checked at construction, so sampling cannot fail.
        s.reset(cfg).expect("validated target ranges");
    }
    Outcome {
        reward,
        terms,
        success,
        terminated,
        episode_return,
    }
}

/// Batch output of one synchronous step.
#[derive(Debug, Clone, Default)]
pub struct StepBatch {
    /// `n_envs × obs_dim`, post-reset for terminated environments.
    pub obs: Vec<f64>,
    pub reward: Vec<f64>,
    pub terminated: Vec<bool>,
    /// Success evaluated after this step (before any auto-reset).
    pub success: Vec<bool>,
    /// Pre-reset observation; only meaningful where `terminated`.
    pub final_obs: Vec<f64>,
    /// Undiscounted return of the episode that just ended; only meaningful
    /// where `terminated`.
    pub episode_return: Vec<f64>,
    pub terms: Vec<RewardTerms>,
}

/// Common surface of the step-based environment and the black-box wrapper.
pub trait VecEnv {
    fn n_envs(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Simulator steps consumed per environment by one call to `step`.
    fn interactions_per_step(&self) -> u64;
    fn observe(&self) -> Vec<f64>;
    fn reset_all(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, actions: &[f64]) -> Result<StepBatch>;
}

#[derive(Debug, Clone, Copy)]
struct Scratch {
    obs: [f64; OBS_DIM],
    final_obs: [f64; OBS_DIM],
    outcome: Outcome,
}

impl Default for Scratch {
    fn default() -> Self {
        Scratch {
            obs: [0.0; OBS_DIM],
            final_obs: [0.0; OBS_DIM],
            outcome: Outcome::default(),
        }
    }
}

/// `n_envs` independent box-pushing environments stepped in lockstep.
#[derive(Debug)]
pub struct BoxPushEnv {
    cfg: EnvConfig,
    states: Vec<EnvState>,
    workers: Workers,
    scratch: Vec<Scratch>,
}

impl BoxPushEnv {
    pub fn new(cfg: EnvConfig, workers: Workers) -> Result<Self> {
        cfg.validate()?;
        let states = (0..cfg.n_envs)
            .map(|i| EnvState::new(&cfg, i))
            .collect::<Result<Vec<_>>>()?;
        let scratch = vec![Scratch::default(); cfg.n_envs];
        Ok(BoxPushEnv {
            cfg,
            states,
            workers,
            scratch,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn workers(&self) -> &Workers {
        &self.workers
    }

    pub fn state(&self, env: usize) -> &EnvState {
        &self.states[env]
    }

    /// Direct state access for tests and tooling.
    pub fn state_mut(&mut self, env: usize) -> &mut EnvState {
        &mut self.states[env]
    }

    pub(crate) fn states_mut(&mut self) -> (&EnvConfig, &Workers, &mut [EnvState]) {
        (&self.cfg, &self.workers, &mut self.states)
    }

    /// Resets the listed environments and returns their observations
    /// (`env_ids.len() × 35`).
    pub fn reset(&mut self, env_ids: &[usize]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; env_ids.len() * OBS_DIM];
        for (k, &id) in env_ids.iter().enumerate() {
            let n = self.states.len();
            let s = self.states.get_mut(id).ok_or(Error::Shape {
                what: "env id",
                expected: n,
                got: id,
            })?;
            s.reset(&self.cfg)?;
            s.write_obs(&self.cfg, &mut out[k * OBS_DIM..(k + 1) * OBS_DIM]);
        }
        Ok(out)
    }

    pub fn observe_into(&self, out: &mut [f64]) {
        for (s, o) in self.states.iter().zip(out.chunks_exact_mut(OBS_DIM)) {
            s.write_obs(&self.cfg, o);
        }
    }

    /// Steps with normalized actions (`n_envs × 7`, clamped to `[-1, 1]`).
    pub fn step_actions(&mut self, actions: &[f64]) -> Result<StepBatch> {
        self.check_input(actions)?;
        Ok(self.step_impl(actions, false))
    }

    /// Steps with absolute joint targets (`n_envs × 7`), bypassing the action map.
    pub fn step_targets(&mut self, targets: &[f64]) -> Result<StepBatch> {
        self.check_input(targets)?;
        Ok(self.step_impl(targets, true))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        let expected = self.cfg.n_envs * ACTION_DIM;
        if input.len() != expected {
            return Err(Error::Shape {
                what: "actions",
                expected,
                got: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("actions"));
        }
        Ok(())
    }

    fn step_impl(&mut self, input: &[f64], absolute: bool) -> StepBatch {
        let cfg = &self.cfg;
        self.workers
            .for_each_zip(&mut self.states, &mut self.scratch, |i, s, scr| {
                let row = &input[i * ACTION_DIM..(i + 1) * ACTION_DIM];
                let control = if absolute {
                    Control::Target(row)
                } else {
                    Control::Action(row)
                };
                scr.outcome = advance(cfg, s, control, Some(&mut scr.final_obs));
                s.write_obs(cfg, &mut scr.obs);
            });
        self.collect_batch()
    }

    fn collect_batch(&self) -> StepBatch {
        let n = self.cfg.n_envs;
        let mut b = StepBatch {
            obs: Vec::with_capacity(n * OBS_DIM),
            reward: Vec::with_capacity(n),
            terminated: Vec::with_capacity(n),
            success: Vec::with_capacity(n),
            final_obs: vec![0.0; n * OBS_DIM],
            episode_return: vec![0.0; n],
            terms: Vec::with_capacity(n),
        };
        for (i, scr) in self.scratch.iter().enumerate() {
            b.obs.extend_from_slice(&scr.obs);
            b.reward.push(scr.outcome.reward);
            b.terminated.push(scr.outcome.terminated);
            b.success.push(scr.outcome.success);
            b.terms.push(scr.outcome.terms);
            if scr.outcome.terminated {
                b.final_obs[i * OBS_DIM..(i + 1) * OBS_DIM].copy_from_slice(&scr.final_obs);
                b.episode_return[i] = scr.outcome.episode_return;
            }
        }
        b
    }

    /// Raw stepping without assembling a [`StepBatch`]; used by the
    /// throughput benchmark.
    pub fn step_actions_raw(&mut self, actions: &[f64]) -> Result<()> {
        self.check_input(actions)?;
        let cfg = &self.cfg;
        self.workers
            .for_each_zip(&mut self.states, &mut self.scratch, |i, s, scr| {
                let row = &actions[i * ACTION_DIM..(i + 1) * ACTION_DIM];
                scr.outcome = advance(cfg, s, Control::Action(row), None);
                s.write_obs(cfg, &mut scr.obs);
            });
        Ok(())
    }
}

impl VecEnv for BoxPushEnv {
    fn n_envs(&self) -> usize {
        self.cfg.n_envs
    }

    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn interactions_per_step(&self) -> u64 {
        1
    }

    fn observe(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cfg.n_envs * OBS_DIM];
        self.observe_into(&mut out);
        out
    }

    fn reset_all(&mut self) -> Result<Vec<f64>> {
        let ids: Vec<usize> = (0..self.cfg.n_envs).collect();
        self.reset(&ids)
    }

    fn step(&mut self, actions: &[f64]) -> Result<StepBatch> {
        self.step_actions(actions)
    }
}
