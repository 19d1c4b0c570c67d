//! Quadrotor simulation, simulation optimization and policy learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`]: rigid-body and motor physics with command latency.
//! * [`sensing`]: sensor noise, gyro bias drift and actuator noise.
//! * [`control`]: mixer and the cascaded PID structures.
//! * [`env`]: the circle-tracking task used for reinforcement learning.
//! * [`simopt`]: replay datasets, the discrepancy objective and Bayesian optimization.
//! * [`learn`]: MLPs with hand-written backprop, GAE and PPO.
//! * [`experiment`]: configuration, the hidden-parameter oracle and pipeline commands.

pub mod control;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod experiment;
pub mod learn;
pub mod seed;
pub mod sensing;
pub mod simopt;

pub use error::{Error, Result};
