//! Simulation optimization: fit the motor and latency parameters of the
//! simulator to logged flights.
//!
//! A [`FlightLog`] of (state, command) pairs is cut into fixed-length
//! mini-trajectories ([`Dataset`]). Each candidate parameter vector
//! `xi = [k_F, T_m, latency]` is scored by replaying every mini-trajectory from
//! its recorded initial state with the recorded commands and accumulating the
//! discounted, weighted L1 + L2 deviation from the recorded states
//! ([`objective`]). The score is minimized with Gaussian-process Bayesian
//! optimization ([`bo`]).

pub mod acquisition;
pub mod bo;
pub mod dataset;
pub mod gp;
pub mod objective;
pub mod optim;

pub use acquisition::{acquisition, AcquisitionKind};
pub use bo::{bo_minimize, latin_hypercube, BoConfig, BoRecord, BoResult, Evaluation};
pub use dataset::{build_dataset, Dataset, FlightLog, LogRow};
pub use gp::{gp_fit, GpHyper, GpModel};
pub use objective::{objective, replay, ObjectiveValue, SimOptConfig, SimOptimizer, XiBounds};
