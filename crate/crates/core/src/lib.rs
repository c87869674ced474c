//! Force-sensing safe reinforcement learning for planar pushing.
//!
//! A goal-conditioned DDPG agent with hindsight experience replay learns to
//! push a block to a target on a simulated table. Wrist force and fingertip
//! touch readings enter the observation as binary indicators and shape the
//! sparse goal reward; a safety layer backs off under contact force, caps
//! end-effector speed and halts the episode on excessive force.
//!
//! Module map:
//!
//! - [`nn`]: dense networks, backpropagation, Adam, Polyak averaging
//! - [`sim`]: quasi-static pushing simulator with force and touch sensing
//! - [`reward`]: sparse reward plus force/touch shaping variants `r1`..`r4`
//! - [`replay`]: episode replay buffer and hindsight relabeling
//! - [`agent`]: DDPG learning rules
//! - [`safety`]: corrective action, velocity cap, emergency stop
//! - [`config`], [`checkpoint`], [`train`]: the training harness

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod nn;
pub mod replay;
pub mod reward;
pub mod safety;
pub mod scripted;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
