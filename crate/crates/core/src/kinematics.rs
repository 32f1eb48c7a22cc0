//! Seven-joint arm: forward kinematics to the push-rod tip, PD torques and a
//! decoupled per-joint integrator.
//!
//! The chain uses URDF-style joint frames: each joint applies a fixed
//! origin transform (translation, then roll-pitch-yaw) followed by a
//! rotation of `q_i` about its local axis. A fixed flange offset follows the
//! last joint and the rod extends `rod_length` along the flange z axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::UnitQuat;

pub const N_JOINTS: usize = 7;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];
pub type Joints = [f64; N_JOINTS];

/// Joint positions and velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointState {
    pub q: Joints,
    pub qd: Joints,
}

impl JointState {
    pub fn at_rest(q: Joints) -> Self {
        JointState {
            q,
            qd: [0.0; N_JOINTS],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}

/// Fixed frame preceding a revolute joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointFrame {
    pub xyz: Vec3,
    pub rpy: Vec3,
    pub axis: Vec3,
}

/// Kinematic chain plus actuator and limit parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    pub joints: [JointFrame; N_JOINTS],
    pub flange: Vec3,
    pub rod_length: f64,
    pub q_lo: Joints,
    pub q_hi: Joints,
    pub qd_max: Joints,
    pub tau_max: Joints,
    pub kp: Joints,
    pub kd: Joints,
    pub inertia: Joints,
    pub damping: Joints,
    // Cached per-joint fixed rotations and unit axes.
    fixed_rot: [Mat3; N_JOINTS],
    unit_axis: [Vec3; N_JOINTS],
}

/// Panda joint frames as published in the manufacturer's URDF description.
pub fn panda_joint_frames() -> [JointFrame; N_JOINTS] {
    use std::f64::consts::FRAC_PI_2 as H;
    let z = [0.0, 0.0, 1.0];
    [
        JointFrame { xyz: [0.0, 0.0, 0.333], rpy: [0.0, 0.0, 0.0], axis: z },
        JointFrame { xyz: [0.0, 0.0, 0.0], rpy: [-H, 0.0, 0.0], axis: z },
        JointFrame { xyz: [0.0, -0.316, 0.0], rpy: [H, 0.0, 0.0], axis: z },
        JointFrame { xyz: [0.0825, 0.0, 0.0], rpy: [H, 0.0, 0.0], axis: z },
        JointFrame { xyz: [-0.0825, 0.384, 0.0], rpy: [-H, 0.0, 0.0], axis: z },
        JointFrame { xyz: [0.0, 0.0, 0.0], rpy: [H, 0.0, 0.0], axis: z },
        JointFrame { xyz: [0.088, 0.0, 0.0], rpy: [H, 0.0, 0.0], axis: z },
    ]
}

pub const PANDA_FLANGE: Vec3 = [0.0, 0.0, 0.107];
pub const PANDA_Q_LO: Joints = [-2.8973, -1.7628, -2.8973, -3.0718, -2.8973, -0.0175, -2.8973];
pub const PANDA_Q_HI: Joints = [2.8973, 1.7628, 2.8973, -0.0698, 2.8973, 3.7525, 2.8973];
pub const PANDA_QD_MAX: Joints = [2.175, 2.175, 2.175, 2.175, 2.61, 2.61, 2.61];
pub const PANDA_TAU_MAX: Joints = [87.0, 87.0, 87.0, 87.0, 12.0, 12.0, 12.0];

impl Default for ArmModel {
    fn default() -> Self {
        let kp = [200.0; N_JOINTS];
        let inertia = [1.0; N_JOINTS];
        let kd = critical_damping(&kp, &inertia);
        ArmModel::new(
            panda_joint_frames(),
            PANDA_FLANGE,
            0.1,
            PANDA_Q_LO,
            PANDA_Q_HI,
            PANDA_QD_MAX,
            PANDA_TAU_MAX,
            kp,
            kd,
            inertia,
            [0.1; N_JOINTS],
        )
        .expect("panda defaults are valid")
    }
}

/// `kd = 2·sqrt(kp·inertia)` per joint.
pub fn critical_damping(kp: &Joints, inertia: &Joints) -> Joints {
    std::array::from_fn(|i| 2.0 * (kp[i] * inertia[i]).sqrt())
}

impl ArmModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        joints: [JointFrame; N_JOINTS],
        flange: Vec3,
        rod_length: f64,
        q_lo: Joints,
        q_hi: Joints,
        qd_max: Joints,
        tau_max: Joints,
        kp: Joints,
        kd: Joints,
        inertia: Joints,
        damping: Joints,
    ) -> Result<Self> {
        for i in 0..N_JOINTS {
            if !(q_lo[i] < q_hi[i]) {
                return Err(Error::Config(format!("joint {i}: q_lo must be < q_hi")));
            }
            if !(kp[i] > 0.0 && kd[i] > 0.0 && inertia[i] > 0.0) {
                return Err(Error::Config(format!("joint {i}: kp, kd, inertia must be > 0")));
            }
            if !(qd_max[i] > 0.0 && tau_max[i] > 0.0 && damping[i] >= 0.0) {
                return Err(Error::Config(format!(
                    "joint {i}: qd_max, tau_max must be > 0 and damping >= 0"
                )));
            }
        }
        let mut unit_axis = [[0.0; 3]; N_JOINTS];
        for (i, j) in joints.iter().enumerate() {
            let n = norm(&j.axis);
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::Config(format!("joint {i}: zero rotation axis")));
            }
            unit_axis[i] = [j.axis[0] / n, j.axis[1] / n, j.axis[2] / n];
        }
        if !rod_length.is_finite() || rod_length < 0.0 {
            return Err(Error::Config("rod_length must be >= 0".into()));
        }
        let fixed_rot = std::array::from_fn(|i| rpy_matrix(&joints[i].rpy));
        Ok(ArmModel {
            joints,
            flange,
            rod_length,
            q_lo,
            q_hi,
            qd_max,
            tau_max,
            kp,
            kd,
            inertia,
            damping,
            fixed_rot,
            unit_axis,
        })
    }

    /// Affine map of a normalized action in `[-1, 1]` onto `[q_lo, q_hi]`.
    #[inline]
    pub fn action_to_target(&self, action: &Joints) -> Joints {
        std::array::from_fn(|i| {
            let a = action[i].clamp(-1.0, 1.0);
            self.q_lo[i] + 0.5 * (a + 1.0) * (self.q_hi[i] - self.q_lo[i])
        })
    }

    /// Inverse of [`ArmModel::action_to_target`] for targets inside the limits.
    #[inline]
    pub fn target_to_action(&self, q: &Joints) -> Joints {
        std::array::from_fn(|i| 2.0 * (q[i] - self.q_lo[i]) / (self.q_hi[i] - self.q_lo[i]) - 1.0)
    }

    #[inline]
    pub fn clamp_to_limits(&self, q: &Joints) -> Joints {
        std::array::from_fn(|i| q[i].clamp(self.q_lo[i], self.q_hi[i]))
    }
}

/// Rod-tip pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipPose {
    pub position: Vec3,
    pub orientation: UnitQuat,
}

/// Rod-tip frame as rotation matrix and position; cheaper than [`TipPose`]
/// for the stepping hot path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipFrame {
    pub rotation: Mat3,
    pub position: Vec3,
}

impl TipFrame {
    /// Tool z axis (rod direction) expressed in the world frame.
    #[inline]
    pub fn rod_axis(&self) -> Vec3 {
        [self.rotation[0][2], self.rotation[1][2], self.rotation[2][2]]
    }

    pub fn to_pose(&self) -> TipPose {
        TipPose {
            position: self.position,
            orientation: UnitQuat::from_rotation(&self.rotation),
        }
    }
}

/// Forward kinematics to the rod tip.
pub fn forward_kinematics(model: &ArmModel, q: &Joints) -> TipPose {
    tip_frame(model, q).to_pose()
}

/// Forward kinematics returning the raw frame.
pub fn tip_frame(model: &ArmModel, q: &Joints) -> TipFrame {
    let mut r = IDENTITY3;
    let mut p = [0.0; 3];
    for i in 0..N_JOINTS {
        let j = &model.joints[i];
        p = add(&p, &mat_vec(&r, &j.xyz));
        r = mat_mul(&r, &model.fixed_rot[i]);
        r = mat_mul(&r, &axis_angle(&model.unit_axis[i], q[i]));
    }
    p = add(&p, &mat_vec(&r, &model.flange));
    let rod = [r[0][2] * model.rod_length, r[1][2] * model.rod_length, r[2][2] * model.rod_length];
    TipFrame {
        rotation: r,
        position: add(&p, &rod),
    }
}

/// PD law `clamp(kp·(q_des − q) − kd·qd, ±tau_max)`.
#[inline]
pub fn pd_torque(model: &ArmModel, q_des: &Joints, s: &JointState) -> Joints {
    std::array::from_fn(|i| {
        let t = model.kp[i] * (q_des[i] - s.q[i]) - model.kd[i] * s.qd[i];
        t.clamp(-model.tau_max[i], model.tau_max[i])
    })
}

/// Integrated state plus the values from the final substep before any limit
/// clamping, which feed the limit penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrated {
    pub state: JointState,
    pub unclamped: JointState,
}

/// Semi-implicit Euler over `substeps` equal sub-intervals of `dt`.
pub fn integrate(
    model: &ArmModel,
    s: &JointState,
    tau: &Joints,
    dt: f64,
    substeps: usize,
) -> Result<Integrated> {
    if !s.is_finite() || tau.iter().any(|t| !t.is_finite()) || !dt.is_finite() {
        return Err(Error::NonFinite("integrate"));
    }
    if dt <= 0.0 || substeps == 0 {
        return Err(Error::Config("integrate needs dt > 0 and substeps >= 1".into()));
    }
    Ok(integrate_unchecked(model, s, tau, dt, substeps))
}

#[inline]
pub(crate) fn integrate_unchecked(
    model: &ArmModel,
    s: &JointState,
    tau: &Joints,
    dt: f64,
    substeps: usize,
) -> Integrated {
    let h = dt / substeps as f64;
    let mut state = *s;
    let mut unclamped = *s;
    for _ in 0..substeps {
        for i in 0..N_JOINTS {
            let qd_raw = state.qd[i] + (tau[i] - model.damping[i] * state.qd[i]) / model.inertia[i] * h;
            let qd = qd_raw.clamp(-model.qd_max[i], model.qd_max[i]);
            let q_raw = state.q[i] + qd * h;
            unclamped.q[i] = q_raw;
            unclamped.qd[i] = qd_raw;
            if q_raw > model.q_hi[i] {
                state.q[i] = model.q_hi[i];
                state.qd[i] = 0.0;
            } else if q_raw < model.q_lo[i] {
                state.q[i] = model.q_lo[i];
                state.qd[i] = 0.0;
            } else {
                state.q[i] = q_raw;
                state.qd[i] = qd;
            }
        }
    }
    Integrated { state, unclamped }
}

/// Summed position and velocity limit violations.
#[inline]
pub fn limit_excess(model: &ArmModel, s: &JointState) -> f64 {
    let mut total = 0.0;
    for i in 0..N_JOINTS {
        total += (s.q[i] - model.q_hi[i]).max(0.0) + (model.q_lo[i] - s.q[i]).max(0.0);
        total += (s.qd[i].abs() - model.qd_max[i]).max(0.0);
    }
    total
}

/// Angle between the rod axis and world −z.
pub fn rod_down_error(tip: &TipPose) -> f64 {
    let q = &tip.orientation;
    let axis = [
        2.0 * (q.x * q.z + q.w * q.y),
        2.0 * (q.y * q.z - q.w * q.x),
        1.0 - 2.0 * (q.x * q.x + q.y * q.y),
    ];
    rod_down_error_axis(&axis)
}

#[inline]
pub fn rod_down_error_axis(axis: &Vec3) -> f64 {
    let lateral = (axis[0] * axis[0] + axis[1] * axis[1]).sqrt();
    lateral.atan2(-axis[2])
}

const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[inline]
fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    std::array::from_fn(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

#[inline]
fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j]))
}

/// Fixed-axis roll-pitch-yaw: `Rz(yaw)·Ry(pitch)·Rx(roll)`.
fn rpy_matrix(rpy: &Vec3) -> Mat3 {
    let (sr, cr) = rpy[0].sin_cos();
    let (sp, cp) = rpy[1].sin_cos();
    let (sy, cy) = rpy[2].sin_cos();
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

/// Rodrigues rotation about a unit axis.
#[inline]
fn axis_angle(k: &Vec3, angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let v = 1.0 - c;
    let [x, y, z] = *k;
    [
        [c + x * x * v, x * y * v - z * s, x * z * v + y * s],
        [y * x * v + z * s, c + y * y * v, y * z * v - x * s],
        [z * x * v - y * s, z * y * v + x * s, c + z * z * v],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn unit_model(kp: f64, kd: f64, tau_max: f64) -> ArmModel {
        let m = ArmModel::default();
        ArmModel::new(
            m.joints,
            m.flange,
            m.rod_length,
            m.q_lo,
            m.q_hi,
            m.qd_max,
            [tau_max; N_JOINTS],
            [kp; N_JOINTS],
            [kd.max(1e-12); N_JOINTS],
            [1.0; N_JOINTS],
            [0.0; N_JOINTS],
        )
        .unwrap()
    }

    #[test]
    fn pd_torque_examples() {
        let m = unit_model(1.0, 1e-12, 1e6);
        let s = JointState::at_rest([0.0; 7]);
        let tau = pd_torque(&m, &[0.5; 7], &s);
        assert_abs_diff_eq!(tau[0], 0.5, epsilon = 1e-12);

        let s = JointState::at_rest([0.3; 7]);
        assert_eq!(pd_torque(&m, &[0.3; 7], &s), [0.0; 7]);

        let m = unit_model(100.0, 1.0, 87.0);
        let s = JointState::at_rest([0.0; 7]);
        assert_eq!(pd_torque(&m, &[10.0; 7], &s)[0], 87.0);
    }

    #[test]
    fn integrate_examples() {
        let m = unit_model(1.0, 1.0, 100.0);
        let s = JointState::at_rest([0.1, -0.2, 0.3, -1.0, 0.0, 1.0, 0.0]);
        let out = integrate(&m, &s, &[0.0; 7], 0.02, 4).unwrap();
        assert_eq!(out.state, s);

        let out = integrate(&m, &s, &[1.0; 7], 0.01, 1).unwrap();
        assert_abs_diff_eq!(out.state.qd[0], 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(out.state.q[0] - s.q[0], 1e-4, epsilon = 1e-15);

        let mut s = JointState::at_rest(m.q_hi);
        s.qd[0] = 0.5;
        let out = integrate(&m, &s, &[50.0; 7], 0.02, 4).unwrap();
        assert_eq!(out.state.q, m.q_hi);
        assert_eq!(out.state.qd, [0.0; 7]);
        assert!(out.unclamped.q[0] > m.q_hi[0]);

        assert!(integrate(&m, &s, &[f64::NAN; 7], 0.02, 4).is_err());
        assert!(integrate(&m, &s, &[0.0; 7], 0.0, 4).is_err());
        assert!(integrate(&m, &s, &[0.0; 7], 0.02, 0).is_err());
    }

    #[test]
    fn limit_excess_examples() {
        let m = ArmModel::default();
        let mid: Joints = std::array::from_fn(|i| 0.5 * (m.q_lo[i] + m.q_hi[i]));
        assert_eq!(limit_excess(&m, &JointState::at_rest(mid)), 0.0);

        let mut s = JointState::at_rest(mid);
        s.q[2] = m.q_hi[2] + 0.2;
        assert_abs_diff_eq!(limit_excess(&m, &s), 0.2, epsilon = 1e-12);

        let mut s = JointState::at_rest(mid);
        s.q[0] = m.q_lo[0] - 0.1;
        s.qd[4] = -(m.qd_max[4] + 0.3);
        assert_abs_diff_eq!(limit_excess(&m, &s), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn rod_down_examples() {
        let down = TipPose {
            position: [0.0; 3],
            orientation: UnitQuat { w: 0.0, x: 1.0, y: 0.0, z: 0.0 },
        };
        assert_abs_diff_eq!(rod_down_error(&down), 0.0, epsilon = 1e-15);
        let up = TipPose { position: [0.0; 3], orientation: UnitQuat::IDENTITY };
        assert_abs_diff_eq!(rod_down_error(&up), PI, epsilon = 1e-15);
        let h = 0.5f64.sqrt();
        let side = TipPose {
            position: [0.0; 3],
            orientation: UnitQuat { w: h, x: h, y: 0.0, z: 0.0 },
        };
        assert_abs_diff_eq!(rod_down_error(&side), FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn last_joint_spins_about_tool_axis() {
        let m = ArmModel::default();
        let q = [0.1, 0.4, -0.2, -2.3, 0.3, 2.6, 0.5];
        let mut q2 = q;
        q2[6] += 0.7;
        let a = tip_frame(&m, &q);
        let b = tip_frame(&m, &q2);
        for k in 0..3 {
            assert_abs_diff_eq!(a.position[k], b.position[k], epsilon = 1e-12);
        }
        // Same rod axis, rotated x axis.
        let (ra, rb) = (a.rod_axis(), b.rod_axis());
        for k in 0..3 {
            assert_abs_diff_eq!(ra[k], rb[k], epsilon = 1e-12);
        }
        let xa = [a.rotation[0][0], a.rotation[1][0], a.rotation[2][0]];
        let xb = [b.rotation[0][0], b.rotation[1][0], b.rotation[2][0]];
        let cos = xa[0] * xb[0] + xa[1] * xb[1] + xa[2] * xb[2];
        assert_abs_diff_eq!(cos, 0.7f64.cos(), epsilon = 1e-12);
    }

    #[test]
    fn invalid_models_rejected() {
        let m = ArmModel::default();
        let mut lo = m.q_lo;
        lo[0] = m.q_hi[0];
        assert!(ArmModel::new(
            m.joints, m.flange, 0.1, lo, m.q_hi, m.qd_max, m.tau_max, m.kp, m.kd, m.inertia, m.damping
        )
        .is_err());
        let mut kp = m.kp;
        kp[3] = 0.0;
        assert!(ArmModel::new(
            m.joints, m.flange, 0.1, m.q_lo, m.q_hi, m.qd_max, m.tau_max, kp, m.kd, m.inertia, m.damping
        )
        .is_err());
    }

    #[test]
    fn action_map_roundtrip() {
        let m = ArmModel::default();
        let a = [-1.0, -0.5, 0.0, 0.25, 0.5, 0.9, 1.0];
        let back = m.target_to_action(&m.action_to_target(&a));
        for i in 0..7 {
            assert_abs_diff_eq!(a[i], back[i], epsilon = 1e-12);
        }
        assert_eq!(m.action_to_target(&[-3.0; 7]), m.q_lo);
    }

    #[test]
    fn damped_coasting_loses_energy() {
        let m = ArmModel::default();
        let mut s = JointState {
            q: [0.0, 0.2, 0.0, -2.0, 0.0, 2.0, 0.0],
            qd: [0.5, -0.4, 0.3, 0.2, -0.1, 0.6, -0.7],
        };
        let mut energy = s.qd.iter().map(|v| v * v).sum::<f64>();
        for _ in 0..200 {
            s = integrate(&m, &s, &[0.0; 7], 0.02, 4).unwrap().state;
            let e = s.qd.iter().map(|v| v * v).sum::<f64>();
            assert!(e <= energy);
            energy = e;
        }
    }
}
