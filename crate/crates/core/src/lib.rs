//! Longitudinal speed regulation of an autonomous vehicle driving through a
//! crossing pedestrian crowd.
//!
//! The pipeline at each control step:
//!
//! 1. roll the social-force crowd model forward under a constant-speed vehicle
//!    ([`predictor`]),
//! 2. extract the closest in-corridor pedestrian ahead at every horizon step,
//! 3. condense the vehicle model into a dense QP ([`mpc`]) and solve it with
//!    the dual active-set solver in [`qp`],
//! 4. apply the first optimal input, or fall back to the PID controller in
//!    [`pid`] when the QP is infeasible ([`supervisor`]).
//!
//! [`harness`] runs paired MPC/PID episodes over seeded random crowds and
//! aggregates the time differences.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod crowd;
pub mod error;
pub mod harness;
pub mod mpc;
pub mod pid;
pub mod predictor;
pub mod qp;
pub mod report;
pub mod supervisor;
pub mod vehicle;

pub use config::RunConfig;
pub use error::{Error, Result};

pub type Vec2 = nalgebra::Vector2<f64>;
