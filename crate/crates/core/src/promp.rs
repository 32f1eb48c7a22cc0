//! Movement-primitive trajectory generator: per-joint weights over
//! normalized Gaussian basis functions, offset so the trajectory starts at
//! the current joint configuration.

use crate::error::{Error, Result};
use crate::kinematics::{Joints, N_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProMpConfig {
    pub n_basis: usize,
    /// Basis width in phase units.
    pub bandwidth: f64,
    pub weight_scale: f64,
    pub horizon: usize,
}

impl Default for ProMpConfig {
    fn default() -> Self {
        ProMpConfig {
            n_basis: 5,
            bandwidth: 0.2,
            weight_scale: 0.3,
            horizon: 100,
        }
    }
}

impl ProMpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_basis < 2 {
            return Err(Error::Config("promp n_basis must be >= 2".into()));
        }
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::Config("promp bandwidth must be > 0".into()));
        }
        if self.horizon < 2 {
            return Err(Error::Config("promp horizon must be >= 2".into()));
        }
        if !self.weight_scale.is_finite() {
            return Err(Error::Config("promp weight_scale must be finite".into()));
        }
        Ok(())
    }

    /// Number of weights per trajectory (`7 × n_basis`).
    pub fn n_weights(&self) -> usize {
        N_JOINTS * self.n_basis
    }
}

/// `horizon × n_basis` matrix of normalized basis activations, row-major.
pub fn basis_matrix(cfg: &ProMpConfig) -> Vec<f64> {
    let (t_len, k_len) = (cfg.horizon, cfg.n_basis);
    let mut out = vec![0.0; t_len * k_len];
    for t in 0..t_len {
        let z = t as f64 / (t_len - 1) as f64;
        let row = &mut out[t * k_len..(t + 1) * k_len];
        basis_row(cfg, z, row);
    }
    out
}

fn basis_row(cfg: &ProMpConfig, z: f64, row: &mut [f64]) {
    let k_len = cfg.n_basis;
    let denom = 2.0 * cfg.bandwidth * cfg.bandwidth;
    let mut sum = 0.0;
    for (k, v) in row.iter_mut().enumerate() {
        let c = k as f64 / (k_len - 1) as f64;
        *v = (-(z - c) * (z - c) / denom).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Desired joint positions, one row per control step.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredTrajectory {
    pub positions: Vec<Joints>,
}

/// Generator with the start-offset basis precomputed.
#[derive(Debug, Clone)]
pub struct ProMp {
    cfg: ProMpConfig,
    /// `φ_k(z_t) − φ_k(0)`, row-major `horizon × n_basis`.
    offset_basis: Vec<f64>,
}

impl ProMp {
    pub fn new(cfg: ProMpConfig) -> Result<Self> {
        cfg.validate()?;
        let basis = basis_matrix(&cfg);
        let k_len = cfg.n_basis;
        let first: Vec<f64> = basis[..k_len].to_vec();
        let offset_basis = basis
            .chunks_exact(k_len)
            .flat_map(|row| row.iter().zip(&first).map(|(b, f)| b - f).collect::<Vec<_>>())
            .collect();
        Ok(ProMp { cfg, offset_basis })
    }

    pub fn config(&self) -> &ProMpConfig {
        &self.cfg
    }

    /// Weights are joint-major: `w[j * n_basis + k]`. `_qd0` is accepted for
    /// interface compatibility; resets always start at rest.
    pub fn generate(&self, w: &[f64], q0: &Joints, _qd0: &Joints) -> Result<DesiredTrajectory> {
        let mut positions = vec![[0.0; N_JOINTS]; self.cfg.horizon];
        self.generate_into(w, q0, &mut positions)?;
        Ok(DesiredTrajectory { positions })
    }

    pub fn generate_into(&self, w: &[f64], q0: &Joints, out: &mut [Joints]) -> Result<()> {
        let k_len = self.cfg.n_basis;
        if w.len() != self.cfg.n_weights() {
            return Err(Error::Shape {
                what: "promp weights",
                expected: self.cfg.n_weights(),
                got: w.len(),
            });
        }
        if out.len() != self.cfg.horizon {
            return Err(Error::Shape {
                what: "trajectory rows",
                expected: self.cfg.horizon,
                got: out.len(),
            });
        }
        for (row, phi) in out.iter_mut().zip(self.offset_basis.chunks_exact(k_len)) {
            for j in 0..N_JOINTS {
                let wj = &w[j * k_len..(j + 1) * k_len];
                let mut acc = 0.0;
                for k in 0..k_len {
                    acc += phi[k] * wj[k];
                }
                row[j] = q0[j] + self.cfg.weight_scale * acc;
            }
        }
        Ok(())
    }
}
