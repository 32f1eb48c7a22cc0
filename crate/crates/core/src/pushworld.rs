//! Quasi-static planar pushing of an open-topped box by a rod tip inserted
//! in its cavity.
//!
//! The box has no velocity state. Whenever the lowered tip lies outside the
//! cavity square, the box is projected so that the tip sits back on the
//! violated wall(s):
//!
//! 1. translate along the wall normals by the penetration depths (box frame),
//!    which puts the tip exactly on the cavity boundary;
//! 2. rotate about the tip by `κ·Σ d·(c × n) / h²`, where `n` is the push
//!    direction, `h` the cavity half-width and `c` the lever arm, taken at the
//!    midpoint between the tip and its projection onto the boundary. Rotating
//!    about the tip leaves the tip's box-local coordinates unchanged, so
//!    containment survives the rotation, and the midpoint lever makes the
//!    one-shot result equal the limit of many small projections.
//!
//! At full lever (`|c_t| = h`) the rotation moves the wall at the contact by
//! `κ·d`, so `κ` reads as the fraction of a corner push that turns into spin.

use crate::error::{Error, Result};
use crate::mathcore::wrap_unchecked;

pub type Vec2 = [f64; 2];

/// Planar box pose; `yaw` is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl BoxPose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        BoxPose {
            x,
            y,
            yaw: wrap_unchecked(yaw),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityModel {
    pub half_width: f64,
    pub rot_coupling: f64,
    pub insert_height: f64,
}

impl Default for CavityModel {
    fn default() -> Self {
        CavityModel {
            half_width: 0.04,
            rot_coupling: 0.5,
            insert_height: 0.05,
        }
    }
}

impl CavityModel {
    pub fn new(half_width: f64, rot_coupling: f64, insert_height: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width < 0.05) {
            return Err(Error::Config(format!(
                "cavity half_width must lie in (0, 0.05), got {half_width}"
            )));
        }
        if !(rot_coupling >= 0.0) || !rot_coupling.is_finite() {
            return Err(Error::Config("cavity rot_coupling must be >= 0".into()));
        }
        if !insert_height.is_finite() {
            return Err(Error::Config("cavity insert_height must be finite".into()));
        }
        Ok(CavityModel {
            half_width,
            rot_coupling,
            insert_height,
        })
    }
}

/// `Rᵀ(yaw)·(tip − [x, y])`.
#[inline]
pub fn tip_in_box_frame(b: &BoxPose, tip: &Vec2) -> Vec2 {
    let (s, c) = b.yaw.sin_cos();
    let dx = tip[0] - b.x;
    let dy = tip[1] - b.y;
    [c * dx + s * dy, -s * dx + c * dy]
}

/// Projects the box so the tip lies inside the cavity; see the module docs.
pub fn resolve_contact(b: &BoxPose, tip: &Vec2, tip_z: f64, cav: &CavityModel) -> BoxPose {
    if tip_z > cav.insert_height {
        return *b;
    }
    let h = cav.half_width;
    let p = tip_in_box_frame(b, tip);
    let pen_x = p[0].abs() - h;
    let pen_y = p[1].abs() - h;
    if pen_x <= 0.0 && pen_y <= 0.0 {
        return *b;
    }
    let d_x = pen_x.max(0.0);
    let d_y = pen_y.max(0.0);
    let s_x = p[0].signum();
    let s_y = p[1].signum();
    // Lever arm: midpoint of the tip and its boundary projection, box frame.
    let cx = p[0] - 0.5 * s_x * d_x;
    let cy = p[1] - 0.5 * s_y * d_y;
    // c × n for n = (s_x, 0) and n = (0, s_y).
    let dyaw = cav.rot_coupling * (-cy * s_x * d_x + cx * s_y * d_y) / (h * h);

    let (sin0, cos0) = b.yaw.sin_cos();
    let tx = s_x * d_x;
    let ty = s_y * d_y;
    let x1 = b.x + cos0 * tx - sin0 * ty;
    let y1 = b.y + sin0 * tx + cos0 * ty;
    if dyaw == 0.0 {
        return BoxPose { x: x1, y: y1, yaw: b.yaw };
    }
    let (sr, cr) = dyaw.sin_cos();
    let rx = x1 - tip[0];
    let ry = y1 - tip[1];
    BoxPose {
        x: tip[0] + cr * rx - sr * ry,
        y: tip[1] + sr * rx + cr * ry,
        yaw: wrap_unchecked(b.yaw + dyaw),
    }
}

/// Euclidean distance in the table plane.
#[inline]
pub fn planar_distance(a: &BoxPose, b: &BoxPose) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}
