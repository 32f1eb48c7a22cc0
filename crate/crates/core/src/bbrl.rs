//! Black-box wrapper: one step consumes a whole episode. The policy emits a
//! weight vector per environment, the generator turns it into a desired
//! joint trajectory, and the trajectory is tracked for `horizon` control
//! steps while rewards are summed.

use std::io::Write;
use std::path::Path;

use crate::env::{advance, layout, BoxPushEnv, Control, StepBatch, VecEnv, OBS_DIM};
use crate::error::{Error, Result};
use crate::kinematics::{Joints, N_JOINTS};
use crate::promp::{ProMp, ProMpConfig};

/// Selects the observation entries that form the policy context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextMask {
    mask: [bool; OBS_DIM],
}

impl ContextMask {
    pub fn new(mask: &[bool]) -> Result<Self> {
        if mask.len() != OBS_DIM {
            return Err(Error::Shape {
                what: "context mask",
                expected: OBS_DIM,
                got: mask.len(),
            });
        }
        if !mask.iter().any(|m| *m) {
            return Err(Error::Config("context mask selects no entries".into()));
        }
        let mut m = [false; OBS_DIM];
        m.copy_from_slice(mask);
        Ok(ContextMask { mask: m })
    }

    pub fn all() -> Self {
        ContextMask { mask: [true; OBS_DIM] }
    }

    /// Box pose and target pose blocks.
    pub fn object_and_target() -> Self {
        let mut m = [false; OBS_DIM];
        for i in layout::BOX.chain(layout::TARGET) {
            m[i] = true;
        }
        ContextMask { mask: m }
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply_into(&self, obs: &[f64], out: &mut Vec<f64>) {
        out.extend(obs.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(v, _)| *v));
    }
}

impl Default for ContextMask {
    fn default() -> Self {
        ContextMask::object_and_target()
    }
}

/// Compacts the masked entries of one observation, preserving order.
pub fn context(obs: &[f64], mask: &ContextMask) -> Result<Vec<f64>> {
    if obs.len() != OBS_DIM {
        return Err(Error::Shape {
            what: "observation",
            expected: OBS_DIM,
            got: obs.len(),
        });
    }
    let mut out = Vec::with_capacity(mask.len());
    mask.apply_into(obs, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BBStepResult {
    pub episode_return: f64,
    pub success: bool,
    pub next_context: Vec<f64>,
}

/// Desired and realized joint positions for one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub reference: Vec<Joints>,
    pub actual: Vec<Joints>,
}

#[derive(Debug, Clone)]
struct Episode {
    reference: Vec<Joints>,
    actual: Vec<Joints>,
    ret: f64,
    success: bool,
    final_obs: [f64; OBS_DIM],
    error: Option<String>,
}

/// Episode-level wrapper around [`BoxPushEnv`].
#[derive(Debug)]
pub struct BlackBoxEnv {
    env: BoxPushEnv,
    promp: ProMp,
    mask: ContextMask,
    episodes: Vec<Episode>,
}

impl BlackBoxEnv {
    pub fn new(env: BoxPushEnv, promp_cfg: ProMpConfig, mask: ContextMask) -> Result<Self> {
        if promp_cfg.horizon != env.config().horizon {
            return Err(Error::Config(format!(
                "promp horizon {} differs from env horizon {}",
                promp_cfg.horizon,
                env.config().horizon
            )));
        }
        let promp = ProMp::new(promp_cfg)?;
        let t_len = promp_cfg.horizon;
        let episodes = vec![
            Episode {
                reference: vec![[0.0; N_JOINTS]; t_len],
                actual: vec![[0.0; N_JOINTS]; t_len],
                ret: 0.0,
                success: false,
                final_obs: [0.0; OBS_DIM],
                error: None,
            };
            env.config().n_envs
        ];
        Ok(BlackBoxEnv {
            env,
            promp,
            mask,
            episodes,
        })
    }

    pub fn inner(&self) -> &BoxPushEnv {
        &self.env
    }

    pub fn inner_mut(&mut self) -> &mut BoxPushEnv {
        &mut self.env
    }

    pub fn promp(&self) -> &ProMp {
        &self.promp
    }

    pub fn mask(&self) -> &ContextMask {
        &self.mask
    }

    pub fn context_dim(&self) -> usize {
        self.mask.len()
    }

    pub fn weight_dim(&self) -> usize {
        self.promp.config().n_weights()
    }

    /// Current contexts, `n_envs × context_dim`.
    pub fn contexts(&self) -> Vec<f64> {
        let obs = self.env.observe();
        let mut out = Vec::with_capacity(self.env.n_envs() * self.context_dim());
        for o in obs.chunks_exact(OBS_DIM) {
            self.mask.apply_into(o, &mut out);
        }
        out
    }

    /// Runs one full episode per environment from `w_batch`
    /// (`n_envs × 7·n_basis`, joint-major per row).
    pub fn bb_step(&mut self, w_batch: &[f64]) -> Result<Vec<BBStepResult>> {
        self.run(w_batch)?;
        Ok(self.results())
    }

    /// Like [`BlackBoxEnv::bb_step`], also returning reference and realized
    /// joint trajectories.
    pub fn record_trajectories(&mut self, w_batch: &[f64]) -> Result<(Vec<TrajectoryRecord>, Vec<BBStepResult>)> {
        self.run(w_batch)?;
        let records = self
            .episodes
            .iter()
            .map(|e| TrajectoryRecord {
                reference: e.reference.clone(),
                actual: e.actual.clone(),
            })
            .collect();
        Ok((records, self.results()))
    }

    fn results(&self) -> Vec<BBStepResult> {
        let ctx = self.contexts();
        let d = self.context_dim();
        self.episodes
            .iter()
            .zip(ctx.chunks_exact(d))
            .map(|(e, c)| BBStepResult {
                episode_return: e.ret,
                success: e.success,
                next_context: c.to_vec(),
            })
            .collect()
    }

    fn run(&mut self, w_batch: &[f64]) -> Result<()> {
        let n = self.env.n_envs();
        let wd = self.weight_dim();
        if w_batch.len() != n * wd {
            return Err(Error::Shape {
                what: "weight batch",
                expected: n * wd,
                got: w_batch.len(),
            });
        }
        if w_batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weight batch"));
        }
        for i in 0..n {
            let step = self.env.state(i).step_count;
            if step != 0 {
                return Err(Error::MidEpisode { env: i, step });
            }
        }
        let promp = &self.promp;
        let (cfg, workers, states) = self.env.states_mut();
        workers.for_each_zip(states, &mut self.episodes, |i, s, ep| {
            let w = &w_batch[i * wd..(i + 1) * wd];
            ep.error = promp
                .generate_into(w, &s.joints.q, &mut ep.reference)
                .err()
                .map(|e| e.to_string());
            if ep.error.is_some() {
                return;
            }
            let mut ret = 0.0;
            let mut success = false;
            let last = ep.reference.len() - 1;
            for t in 0..=last {
                let final_obs = if t == last { Some(&mut ep.final_obs[..]) } else { None };
                let out = advance(cfg, s, Control::Target(&ep.reference[t]), final_obs);
                // On the last step the state has already been reset, so read
                // the realized joints back from the pre-reset observation.
                ep.actual[t] = if t == last {
                    std::array::from_fn(|j| ep.final_obs[j])
                } else {
                    s.joints.q
                };
                ret += out.reward;
                success = out.success;
            }
            ep.ret = ret;
            ep.success = success;
        });
        if let Some(e) = self.episodes.iter().find_map(|e| e.error.clone()) {
            return Err(Error::Config(e));
        }
        Ok(())
    }
}

impl VecEnv for BlackBoxEnv {
    fn n_envs(&self) -> usize {
        self.env.n_envs()
    }

    fn obs_dim(&self) -> usize {
        self.context_dim()
    }

    fn action_dim(&self) -> usize {
        self.weight_dim()
    }

    fn interactions_per_step(&self) -> u64 {
        self.promp.config().horizon as u64
    }

    fn observe(&self) -> Vec<f64> {
        self.contexts()
    }

    fn reset_all(&mut self) -> Result<Vec<f64>> {
        self.env.reset_all()?;
        Ok(self.contexts())
    }

    fn step(&mut self, actions: &[f64]) -> Result<StepBatch> {
        self.run(actions)?;
        let n = self.env.n_envs();
        let d = self.context_dim();
        let mut final_obs = Vec::with_capacity(n * d);
        for e in &self.episodes {
            self.mask.apply_into(&e.final_obs, &mut final_obs);
        }
        Ok(StepBatch {
            obs: self.contexts(),
            reward: self.episodes.iter().map(|e| e.ret).collect(),
            terminated: vec![true; n],
            success: self.episodes.iter().map(|e| e.success).collect(),
            final_obs,
            episode_return: self.episodes.iter().map(|e| e.ret).collect(),
            terms: Vec::new(),
        })
    }
}

/// Writes trajectory records as CSV: `env_id,t,joint,reference,actual`.
pub fn write_trajectory_csv(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "env_id,t,joint,reference,actual")?;
    for (env_id, r) in records.iter().enumerate() {
        for (t, (rf, ac)) in r.reference.iter().zip(&r.actual).enumerate() {
            for j in 0..N_JOINTS {
                writeln!(f, "{env_id},{t},{j},{:e},{:e}", rf[j], ac[j])?;
            }
        }
    }
    f.flush()?;
    Ok(())
}
