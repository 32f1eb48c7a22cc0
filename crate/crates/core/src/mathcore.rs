//! Scalar angle helpers, scalar-first unit quaternions and counter-based
//! random streams.
//!
//! Every random draw in the engine goes through an [`RngStream`] keyed by
//! `(seed, stream_id)`, so the value of draw `n` on a stream never depends on
//! which worker produced it or in what order environments were visited.

use std::f64::consts::{PI, TAU};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_to_pi(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFinite("wrap_to_pi"));
    }
    Ok(wrap_unchecked(a))
}

#[inline]
pub(crate) fn wrap_unchecked(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    // rem_euclid lands in [0, 2π); fold the upper half down.
    if r > PI {
        r -= TAU;
    }
    r
}

/// Absolute wrapped yaw difference, in `[0, π]`.
pub fn yaw_error(a: f64, b: f64) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("yaw_error"));
    }
    Ok(yaw_error_unchecked(a, b))
}

#[inline]
pub(crate) fn yaw_error_unchecked(a: f64, b: f64) -> f64 {
    // Wrap each side first so the difference of large angles keeps precision.
    wrap_unchecked(wrap_unchecked(a) - wrap_unchecked(b)).abs()
}

/// Unit quaternion stored scalar-first as `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a quaternion, rejecting inputs whose norm is off by more than 1e-9.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = UnitQuat { w, x, y, z };
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
            return Err(Error::NonUnitQuat(n));
        }
        Ok(q)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &UnitQuat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn neg(&self) -> UnitQuat {
        UnitQuat {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Converts a proper rotation matrix (row-major) to a quaternion with `w >= 0`.
    pub fn from_rotation(r: &[[f64; 3]; 3]) -> UnitQuat {
        let trace = r[0][0] + r[1][1] + r[2][2];
        let (w, x, y, z) = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            (
                0.25 * s,
                (r[2][1] - r[1][2]) / s,
                (r[0][2] - r[2][0]) / s,
                (r[1][0] - r[0][1]) / s,
            )
        } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
            let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
            (
                (r[2][1] - r[1][2]) / s,
                0.25 * s,
                (r[0][1] + r[1][0]) / s,
                (r[0][2] + r[2][0]) / s,
            )
        } else if r[1][1] > r[2][2] {
            let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
            (
                (r[0][2] - r[2][0]) / s,
                (r[0][1] + r[1][0]) / s,
                0.25 * s,
                (r[1][2] + r[2][1]) / s,
            )
        } else {
            let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
            (
                (r[1][0] - r[0][1]) / s,
                (r[0][2] + r[2][0]) / s,
                (r[1][2] + r[2][1]) / s,
                0.25 * s,
            )
        };
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        UnitQuat {
            w: sign * w / n,
            x: sign * x / n,
            y: sign * y / n,
            z: sign * z / n,
        }
    }
}

/// Rotation about world z by `yaw`.
pub fn quat_from_yaw(yaw: f64) -> UnitQuat {
    let (s, c) = (0.5 * yaw).sin_cos();
    UnitQuat {
        w: c,
        x: 0.0,
        y: 0.0,
        z: s,
    }
}

/// Geodesic angle between two rotations, `2·acos(|⟨q1, q2⟩|)`.
pub fn quat_angle(q1: &UnitQuat, q2: &UnitQuat) -> Result<f64> {
    for q in [q1, q2] {
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
            return Err(Error::NonUnitQuat(n));
        }
    }
    // Relative rotation conj(q1)·q2; atan2 keeps precision near zero angle.
    let w = q1.dot(q2);
    let x = q1.w * q2.x - q1.x * q2.w - q1.y * q2.z + q1.z * q2.y;
    let y = q1.w * q2.y + q1.x * q2.z - q1.y * q2.w - q1.z * q2.x;
    let z = q1.w * q2.z - q1.x * q2.y + q1.y * q2.x - q1.z * q2.w;
    let v = (x * x + y * y + z * z).sqrt();
    Ok(2.0 * v.atan2(w.abs()))
}

/// Counter-based random stream: ChaCha8 keyed by `seed`, with the environment
/// index as the ChaCha stream selector and the word position as the counter.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self::at(seed, stream_id, 0)
    }

    /// Stream positioned at an explicit 32-bit word counter.
    pub fn at(seed: u64, stream_id: u64, counter: u128) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        rng.set_word_pos(counter);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the interval is degenerate.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::NonFinite("uniform bounds"));
        }
        if lo > hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        let u = self.unit();
        if lo == hi {
            return Ok(lo);
        }
        let v = lo + (hi - lo) * u;
        // lo + span·u can round up to hi for u close to 1.
        Ok(if v >= hi { hi.next_down() } else { v })
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_to_pi(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(wrap_to_pi(TAU).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_to_pi(1.5 * PI).unwrap(), -FRAC_PI_2, epsilon = 1e-12);
        assert_eq!(wrap_to_pi(PI).unwrap(), PI);
        assert_abs_diff_eq!(wrap_to_pi(-PI).unwrap(), PI, epsilon = 1e-12);
        assert!(wrap_to_pi(f64::NAN).is_err());
        assert!(wrap_to_pi(f64::INFINITY).is_err());
    }

    #[test]
    fn yaw_error_examples() {
        assert_abs_diff_eq!(yaw_error(0.0, PI).unwrap(), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(yaw_error(0.1, TAU + 0.1).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(yaw_error(6.0, 0.2).unwrap(), TAU - 5.8, epsilon = 1e-12);
        assert_abs_diff_eq!(yaw_error(6.0, 0.2).unwrap(), 0.48319, epsilon = 1e-5);
        assert!(yaw_error(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn quat_examples() {
        let q = quat_from_yaw(0.0);
        assert_eq!(q, UnitQuat::IDENTITY);
        let q = quat_from_yaw(PI);
        assert_abs_diff_eq!(q.w, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.z, 1.0, epsilon = 1e-15);
        let q = quat_from_yaw(FRAC_PI_2);
        let h = 0.5f64.sqrt();
        assert_abs_diff_eq!(q.w, h, epsilon = 1e-15);
        assert_abs_diff_eq!(q.z, h, epsilon = 1e-15);

        let id = UnitQuat::IDENTITY;
        assert_eq!(quat_angle(&id, &id).unwrap(), 0.0);
        assert_abs_diff_eq!(quat_angle(&id, &quat_from_yaw(PI)).unwrap(), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(
            quat_angle(&quat_from_yaw(0.3), &quat_from_yaw(0.8)).unwrap(),
            0.5,
            epsilon = 1e-9
        );
        let bad = UnitQuat { w: 2.0, x: 0.0, y: 0.0, z: 0.0 };
        assert!(quat_angle(&bad, &id).is_err());
        assert!(UnitQuat::new(0.5, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn rotation_roundtrip() {
        for &yaw in &[0.0, 0.4, -2.0, PI, 3.0] {
            let (s, c) = f64::sin_cos(yaw);
            let r = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
            let q = UnitQuat::from_rotation(&r);
            assert!(quat_angle(&q, &quat_from_yaw(yaw)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn uniform_examples() {
        let mut s = RngStream::new(7, 3);
        assert_eq!(s.uniform(0.3, 0.3).unwrap(), 0.3);
        assert!(s.uniform(1.0, 0.0).is_err());

        let mut a = RngStream::at(11, 5, 40);
        let mut b = RngStream::at(11, 5, 40);
        assert_eq!(a.uniform(0.0, 1.0).unwrap().to_bits(), b.uniform(0.0, 1.0).unwrap().to_bits());
        assert_eq!(a.counter(), 42);
    }

    #[test]
    fn uniform_mean_law_of_large_numbers() {
        let mut s = RngStream::new(2024, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| s.uniform(0.0, 1.0).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn streams_are_distinct_and_replayable() {
        let mut a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 1);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
        // Jumping straight to a counter reproduces the tail of a sequential read.
        let mut c = RngStream::at(1, 0, 8);
        assert_eq!(c.next_u64(), xa[4]);
    }

    proptest! {
        #[test]
        fn wrap_is_periodic(a in -50.0f64..50.0, k in -20i32..20) {
            let w1 = wrap_to_pi(a).unwrap();
            let w2 = wrap_to_pi(a + TAU * k as f64).unwrap();
            let d = (w1 - w2).abs();
            // Both ends of (-π, π] are the same angle.
            prop_assert!(d <= 1e-9 || (d - TAU).abs() <= 1e-9);
            prop_assert!(w1 > -PI && w1 <= PI);
        }

        #[test]
        fn yaw_error_symmetric(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let e1 = yaw_error(a, b).unwrap();
            let e2 = yaw_error(b, a).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-12);
            prop_assert!((0.0..=PI).contains(&e1));
            prop_assert_eq!(yaw_error(a, a).unwrap(), 0.0);
        }

        #[test]
        fn quat_double_cover(yaw in -10.0f64..10.0) {
            let q = quat_from_yaw(yaw);
            prop_assert!(quat_angle(&q, &q).unwrap() < 1e-12);
            prop_assert!(quat_angle(&q, &q.neg()).unwrap() < 1e-12);
        }
    }
}
