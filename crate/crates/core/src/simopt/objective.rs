//! Replay of mini-trajectories and the discrepancy objective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{motor_step, DroneParams, DroneState, LatencyQueue, Rotors, SimParams, Simulator};
use crate::error::{Error, Result};
use crate::simopt::dataset::{Dataset, LOG_PERIOD};

/// Box constraints on `xi = [k_F, T_m, latency]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiBounds {
    pub k_f: (f64, f64),
    pub t_m: (f64, f64),
    pub latency: (f64, f64),
}

impl Default for XiBounds {
    fn default() -> Self {
        Self { k_f: (1.5, 2.5), t_m: (0.01, 0.50), latency: (0.0, 0.05) }
    }
}

impl XiBounds {
    pub fn as_array(&self) -> [(f64, f64); 3] {
        [self.k_f, self.t_m, self.latency]
    }

    pub fn contains(&self, xi: &[f64; 3]) -> bool {
        self.as_array().iter().zip(xi).all(|((lo, hi), x)| (*lo..=*hi).contains(x))
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidParameter("each bound needs lower < upper".into()));
        }
        Ok(())
    }
}

/// Settings of one simulation-optimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptConfig {
    /// Mini-trajectory length.
    pub len: usize,
    /// Rows between window starts.
    pub stride: usize,
    /// Per-step discount of later deviations, in (0, 1).
    pub discount: f64,
    /// Diagonal weights for `[r, v, q_wxyz, omega]`.
    pub weights: [f64; 13],
    pub bounds: XiBounds,
    /// Logged commands preceding a window that are replayed through the
    /// motor and latency model to initialize them, rows.
    pub warmup: usize,
    /// Use only every n-th window when scoring (1 = all).
    pub thin: usize,
}

impl Default for SimOptConfig {
    fn default() -> Self {
        Self {
            len: 50,
            stride: 10,
            discount: 0.95,
            weights: [1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 0.05, 0.05, 0.05],
            bounds: XiBounds::default(),
            warmup: 100,
            thin: 1,
        }
    }
}

impl SimOptConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidParameter(format!("discount must be in (0,1), got {}", self.discount)));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be non-negative".into()));
        }
        if self.len == 0 || self.stride == 0 {
            return Err(Error::InvalidParameter("len and stride must be positive".into()));
        }
        Ok(())
    }
}

/// Simulated states for one mini-trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub states: Vec<[f64; 13]>,
    pub diverged: bool,
}

/// Re-simulates a mini-trajectory from `x0` under the recorded commands.
///
/// Rotor speeds are not logged. They and the latency queue are brought to
/// the state the commands of `u_hist` leave them in under the candidate
/// parameters, starting from the steady state of the oldest one; with an empty
/// history they start at the steady state of the first command. Each 10 ms
/// command is held for the matching number of physics steps and the state is
/// recorded after each.
pub fn replay(
    x0: &[f64; 13],
    u_hist: &[Rotors],
    u_seq: &[Rotors],
    xi: &[f64; 3],
    params: &DroneParams,
    base: &SimParams,
) -> Replay {
    let sim = SimParams { k_f: xi[0], t_m: xi[1], latency: xi[2], ..*base };
    let clamp = |u: &Rotors| u.map(|v| v.clamp(0.0, 1.0));
    let first = clamp(u_hist.first().or(u_seq.first()).unwrap_or(&[0.0; 4]));
    let substeps = ((LOG_PERIOD / sim.dt).round() as usize).max(1);
    let mut queue = LatencyQueue::for_params(&sim, first);
    let mut nu = first.map(f64::sqrt);
    for u in u_hist {
        for _ in 0..substeps {
            nu = motor_step(&nu, &queue.push_pop(clamp(u)), sim.t_m, sim.dt);
        }
    }
    let mut s = Simulator::new(*params, sim, DroneState::from_array(x0, nu), first);
    *s.queue_mut() = queue;
    let mut states = Vec::with_capacity(u_seq.len());
    for u in u_seq {
        for _ in 0..substeps {
            if s.step(u).diverged {
                return Replay { states, diverged: true };
            }
        }
        states.push(s.state.to_array());
    }
    Replay { states, diverged: false }
}

/// Discounted `||W d||_1 + ||W d||_2` summed over one window.
///
/// The simulated quaternion is sign-aligned with the reference before
/// differencing, since `q` and `-q` are the same attitude.
pub fn window_discrepancy(sim: &[[f64; 13]], real: &[[f64; 13]], weights: &[f64; 13], discount: f64) -> f64 {
    let mut total = 0.0;
    let mut factor = 1.0;
    for (xs, xr) in sim.iter().zip(real) {
        let dot: f64 = (6..10).map(|k| xs[k] * xr[k]).sum();
        let sign = if dot < 0.0 { -1.0 } else { 1.0 };
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        for k in 0..13 {
            let s = if (6..10).contains(&k) { sign * xs[k] } else { xs[k] };
            let d = weights[k] * (s - xr[k]);
            l1 += d.abs();
            l2 += d * d;
        }
        total += factor * (l1 + l2.sqrt());
        factor *= discount;
    }
    total
}

/// Objective value together with a divergence flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    /// Mean window discrepancy over the non-diverged windows.
    pub value: f64,
    pub diverged: bool,
}

/// Mean discrepancy over every window of `dataset` for candidate `xi`.
///
/// Windows are evaluated in parallel; the reduction runs in window order so
/// the result does not depend on the thread count.
pub fn objective(xi: &[f64; 3], dataset: &Dataset, cfg: &SimOptConfig, params: &DroneParams, base: &SimParams) -> ObjectiveValue {
    let per_window: Vec<(f64, bool)> = (0..dataset.windows())
        .into_par_iter()
        .map(|k| {
            let w = dataset.window(k);
            let hist = &w.u_hist[w.u_hist.len().saturating_sub(cfg.warmup)..];
            let rep = replay(w.x0, hist, w.u_seq, xi, params, base);
            if rep.diverged {
                (0.0, true)
            } else {
                (window_discrepancy(&rep.states, w.x_seq, &cfg.weights, cfg.discount), false)
            }
        })
        .collect();
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut diverged = false;
    for (v, d) in per_window {
        if d || !v.is_finite() {
            diverged = true;
        } else {
            sum += v;
            n += 1;
        }
    }
    ObjectiveValue { value: if n > 0 { sum / n as f64 } else { f64::INFINITY }, diverged }
}

/// Objective bound to a dataset and the fixed (non-optimized) plant constants.
#[derive(Clone, Debug)]
pub struct SimOptimizer {
    pub dataset: Dataset,
    pub cfg: SimOptConfig,
    pub params: DroneParams,
    pub base: SimParams,
}

impl SimOptimizer {
    pub fn new(dataset: Dataset, cfg: SimOptConfig, params: DroneParams, base: SimParams) -> Self {
        let dataset = if cfg.thin > 1 { dataset.thinned(cfg.thin) } else { dataset };
        Self { dataset, cfg, params, base }
    }

    pub fn evaluate(&self, xi: &[f64; 3]) -> ObjectiveValue {
        objective(xi, &self.dataset, &self.cfg, &self.params, &self.base)
    }
}
