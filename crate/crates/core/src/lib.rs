//! Deterministic, data-parallel episodic RL engine for a planar box-pushing
//! task: a seven-joint arm with a push rod, a quasi-static contact model, a
//! movement-primitive black-box wrapper and a PPO trainer.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bbrl;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod harness;
pub mod kinematics;
pub mod mathcore;
pub mod parallel;
pub mod promp;
pub mod policy;
pub mod ppo;
pub mod pushworld;

pub use error::{Error, Result};
