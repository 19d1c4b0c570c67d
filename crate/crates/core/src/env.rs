//! Circle-tracking task for reinforcement learning.
//!
//! An episode starts on a random point of a horizontal circle and the agent has
//! to follow a setpoint moving clockwise around it. Plant parameters are
//! resampled on every reset (domain randomization), the agent sees a noisy
//! state through a short observation history, and the chosen control level
//! turns its action into motor commands that are held for several physics
//! steps.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ActionRanges, Cascade, ControlLevel, ControlModel, ControllerGains};
use crate::dynamics::{quat_from_euler, DroneParams, DroneState, Rotors, SimParams, Simulator, Vec3};
use crate::error::{Error, Result};
use crate::sensing::{corrupt_state, ou_step, perturb_command, GyroBiasState, NoiseConfig, OuState};

/// Size of a single observation: 13 state + 3 position error + 4 previous action.
pub const OBS_DIM: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// m
    pub diameter: f64,
    /// s
    pub period: f64,
    /// m
    pub height: f64,
    pub clockwise: bool,
    /// Policy steps per training episode.
    pub episode_length: usize,
    /// Episode ends once the position error exceeds this, m.
    pub termination_radius: f64,
    pub terminal_reward: f64,
    /// Safety backup thresholds.
    pub max_tilt_deg: f64,
    pub max_rate_deg: f64,
    /// Initial attitude perturbation half-width, deg.
    pub init_attitude_deg: f64,
    /// Initial velocity perturbation half-width, m/s.
    pub init_velocity: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            diameter: 0.5,
            period: 3.0,
            height: 1.0,
            clockwise: true,
            episode_length: 500,
            termination_radius: 0.25,
            terminal_reward: -100.0,
            max_tilt_deg: 30.0,
            max_rate_deg: 800.0,
            init_attitude_deg: 2.0,
            init_velocity: 0.05,
        }
    }
}

impl TaskConfig {
    fn angle(&self, time: f64, phase: f64) -> f64 {
        let dir = if self.clockwise { -1.0 } else { 1.0 };
        phase + dir * 2.0 * PI * time / self.period
    }
}

/// Reference position on the circle at `time`, starting at angle `phase`.
pub fn circle_setpoint(time: f64, cfg: &TaskConfig, phase: f64) -> Vec3 {
    let radius = 0.5 * cfg.diameter;
    let theta = cfg.angle(time, phase);
    Vec3::new(radius * theta.cos(), radius * theta.sin(), cfg.height)
}

/// Time derivative of [`circle_setpoint`].
pub fn circle_velocity(time: f64, cfg: &TaskConfig, phase: f64) -> Vec3 {
    let radius = 0.5 * cfg.diameter;
    let dir = if cfg.clockwise { -1.0 } else { 1.0 };
    let rate = dir * 2.0 * PI / cfg.period;
    let theta = cfg.angle(time, phase);
    Vec3::new(-radius * rate * theta.sin(), radius * rate * theta.cos(), 0.0)
}

/// Relative half-width of the uniform parameter randomization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizationSpec {
    pub half_width: f64,
}

impl Default for RandomizationSpec {
    fn default() -> Self {
        Self { half_width: 0.10 }
    }
}

impl RandomizationSpec {
    pub fn none() -> Self {
        Self { half_width: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.half_width) {
            return Err(Error::InvalidParameter(format!(
                "randomization half-width must be in [0, 1), got {}",
                self.half_width
            )));
        }
        Ok(())
    }
}

/// Draws plant parameters uniformly within `±half_width` of nominal.
///
/// Randomized: k_F, physics step, mass, inertia diagonal, T_m, k_M1, k_M2.
/// Latency and gravity stay at nominal.
pub fn sample_params<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &RandomizationSpec,
    params: &DroneParams,
    sim: &SimParams,
) -> (DroneParams, SimParams) {
    let w = spec.half_width;
    let mut scale = || if w == 0.0 { 1.0 } else { rng.gen_range(1.0 - w..1.0 + w) };
    let mut p = *params;
    let mut s = *sim;
    s.k_f *= scale();
    s.dt *= scale();
    p.mass *= scale();
    for i in 0..3 {
        p.inertia[i] *= scale();
    }
    s.t_m *= scale();
    p.k_m1 *= scale();
    p.k_m2 *= scale();
    (p, s)
}

/// Per-step reward. All tracking and effort terms are penalties; the terminal
/// reward is added when the episode ends in failure.
pub fn reward(e: &Vec3, omega: &Vec3, a: &[f64; 4], a_prev: &[f64; 4], terminated: bool, task: &TaskConfig) -> f64 {
    let norm = |v: &[f64; 4]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = [a_prev[0] - a[0], a_prev[1] - a[1], a_prev[2] - a[2], a_prev[3] - a[3]];
    let penalty = e.norm() + 1e-4 * norm(a) + 1e-3 * norm(&diff) + 1e-3 * omega.norm();
    let terminal = if terminated { task.terminal_reward } else { 0.0 };
    -penalty + terminal
}

/// Ring of the `H` most recent observations.
#[derive(Clone, Debug)]
pub struct HistoryStack {
    frames: VecDeque<[f64; OBS_DIM]>,
    len: usize,
}

impl HistoryStack {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "history length must be at least 1");
        Self { frames: VecDeque::with_capacity(len), len }
    }

    pub fn capacity(&self) -> usize {
        self.len
    }

    /// Clears the stack and fills every slot with `first`.
    pub fn reset(&mut self, first: [f64; OBS_DIM]) {
        self.frames.clear();
        self.frames.extend(std::iter::repeat(first).take(self.len));
    }

    pub fn push(&mut self, obs: [f64; OBS_DIM]) {
        if self.frames.is_empty() {
            self.reset(obs);
            return;
        }
        if self.frames.len() == self.len {
            self.frames.pop_front();
        }
        self.frames.push_back(obs);
    }

    /// Oldest first, `OBS_DIM * H` values.
    pub fn flatten(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.iter().copied()).collect()
    }
}

/// Why an episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Position error beyond the termination radius.
    TrackingError,
    /// Roll or pitch beyond the safety limit.
    Attitude,
    /// Roll or pitch rate beyond the safety limit.
    Rates,
    /// Non-finite state.
    Diverged,
    /// Step budget exhausted; not a failure.
    TimeLimit,
}

impl Termination {
    pub fn is_failure(self) -> bool {
        self != Termination::TimeLimit
    }

    pub fn name(self) -> &'static str {
        match self {
            Termination::TrackingError => "tracking_error",
            Termination::Attitude => "attitude",
            Termination::Rates => "rates",
            Termination::Diverged => "diverged",
            Termination::TimeLimit => "time_limit",
        }
    }
}

/// Everything an environment needs besides its RNG seed.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub level: ControlLevel,
    pub task: TaskConfig,
    pub noise: NoiseConfig,
    pub randomization: RandomizationSpec,
    /// Nominal plant, also the controller's model.
    pub params: DroneParams,
    pub sim: SimParams,
    pub gains: ControllerGains,
    pub ranges: ActionRanges,
    pub history: usize,
    /// Thrust map the onboard controllers assume; `None` uses `sim.k_f`.
    pub model_k_f: Option<f64>,
}

impl EnvConfig {
    pub fn new(level: ControlLevel) -> Self {
        Self {
            level,
            task: TaskConfig::default(),
            noise: NoiseConfig::default(),
            randomization: RandomizationSpec::default(),
            params: DroneParams::default(),
            sim: SimParams::default(),
            gains: ControllerGains::default(),
            ranges: ActionRanges::default(),
            history: 2,
            model_k_f: None,
        }
    }

    pub fn obs_dim(&self) -> usize {
        OBS_DIM * self.history
    }
}

/// One row of an episode log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub state: DroneState,
    pub e: Vec3,
    pub a: [f64; 4],
    pub u: Rotors,
    pub reward: f64,
    pub done: bool,
}

/// Output of [`QuadEnv::step`].
#[derive(Clone, Debug)]
pub struct Transition {
    /// Stacked observation, `OBS_DIM * H` values.
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Set when `done`.
    pub cause: Option<Termination>,
    pub record: StepRecord,
}

/// The task environment. Owns its plant, controllers, noise processes and RNG.
#[derive(Clone, Debug)]
pub struct QuadEnv {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    sim: Simulator,
    cascade: Cascade,
    gyro: GyroBiasState,
    ou: OuState,
    history: HistoryStack,
    phase: f64,
    time: f64,
    steps: usize,
    max_steps: usize,
    substeps: usize,
    a_prev: [f64; 4],
    done: bool,
}

impl QuadEnv {
    pub fn new(cfg: EnvConfig, seed: u64) -> Self {
        let model = ControlModel { params: cfg.params, k_f: cfg.model_k_f.unwrap_or(cfg.sim.k_f) };
        let sim = Simulator::hovering(cfg.params, cfg.sim, Vec3::zeros());
        let substeps = cfg.level.substeps(cfg.sim.dt);
        Self {
            history: HistoryStack::new(cfg.history),
            cascade: Cascade::new(cfg.gains, model),
            max_steps: cfg.task.episode_length,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sim,
            gyro: GyroBiasState::default(),
            ou: OuState::default(),
            phase: 0.0,
            time: 0.0,
            steps: 0,
            substeps,
            a_prev: [0.0; 4],
            done: true,
            cfg,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Overrides the episode step budget (evaluation flies longer than training).
    pub fn set_max_steps(&mut self, steps: usize) {
        self.max_steps = steps;
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn plant(&self) -> (&DroneParams, &SimParams) {
        (&self.sim.params, &self.sim.sim)
    }

    pub fn state(&self) -> &DroneState {
        &self.sim.state
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Policy period in seconds; constant under physics-step randomization.
    pub fn policy_period(&self) -> f64 {
        self.cfg.level.period()
    }

    /// Starts a new episode with freshly sampled plant parameters.
    pub fn reset(&mut self) -> Vec<f64> {
        let (params, sim) = sample_params(&mut self.rng, &self.cfg.randomization, &self.cfg.params, &self.cfg.sim);
        self.phase = self.rng.gen_range(0.0..2.0 * PI);
        let start = circle_setpoint(0.0, &self.cfg.task, self.phase);
        let att = self.cfg.task.init_attitude_deg.to_radians();
        let vel = self.cfg.task.init_velocity;
        let mut jitter = |w: f64| if w == 0.0 { 0.0 } else { self.rng.gen_range(-w..w) };
        let q = quat_from_euler(jitter(att), jitter(att), jitter(att));
        let v = Vec3::new(jitter(vel), jitter(vel), jitter(vel));

        let hover = sim.hover_command();
        let state = DroneState { r: start, v, q, omega: Vec3::zeros(), nu: [hover.sqrt(); 4] };
        self.sim = Simulator::new(params, sim, state, [hover; 4]);
        self.substeps = self.cfg.level.substeps(sim.dt);
        self.cascade.reset();
        self.gyro = GyroBiasState::default();
        self.ou = OuState::default();
        self.time = 0.0;
        self.steps = 0;
        self.a_prev = [0.0; 4];
        self.done = false;

        let obs = self.observe(&start);
        self.history.reset(obs);
        self.history.flatten()
    }

    fn measure(&mut self, dt: f64) -> DroneState {
        let (noisy, gyro) = corrupt_state(&self.sim.state, &self.cfg.noise, &self.gyro, dt, &mut self.rng);
        self.gyro = gyro;
        noisy
    }

    fn observe(&mut self, target: &Vec3) -> [f64; OBS_DIM] {
        let noisy = self.measure(self.policy_period());
        let x = noisy.to_array();
        let e = noisy.r - target;
        let mut obs = [0.0; OBS_DIM];
        obs[..13].copy_from_slice(&x);
        obs[13..16].copy_from_slice(e.as_slice());
        obs[16..].copy_from_slice(&self.a_prev);
        obs
    }

    /// Applies `a` for one policy period.
    pub fn step(&mut self, a: &[f64; 4]) -> Result<Transition> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = a.map(|x| if x.is_finite() { x } else { 0.0 });
        let dt = self.sim.sim.dt;
        let level = self.cfg.level;
        let mut diverged = false;
        let mut u = [0.0; 4];
        for _ in 0..self.substeps {
            let meas = if level == ControlLevel::Pwm { self.sim.state } else { self.measure(dt) };
            u = self.cascade.apply_action(level, &a, &self.cfg.ranges, &meas, dt);
            let noisy_u = perturb_command(&u, &self.ou);
            self.ou = ou_step(&self.ou, &self.cfg.noise, dt, &mut self.rng);
            if self.sim.step(&noisy_u).diverged {
                diverged = true;
                break;
            }
        }
        self.steps += 1;
        self.time = self.steps as f64 * self.policy_period();

        let target = circle_setpoint(self.time, &self.cfg.task, self.phase);
        let state = self.sim.state;
        let e = state.r - target;
        let cause = self.check_termination(&state, &e, diverged);
        let failed = cause.is_some_and(Termination::is_failure);
        let r = if diverged {
            self.cfg.task.terminal_reward
        } else {
            reward(&e, &state.omega, &a, &self.a_prev, failed, &self.cfg.task)
        };
        self.a_prev = a;
        self.done = cause.is_some();

        let obs = if diverged {
            // The state is unusable; repeat the last frame so shapes stay valid.
            self.history.flatten()
        } else {
            let frame = self.observe(&target);
            self.history.push(frame);
            self.history.flatten()
        };
        let record = StepRecord { t: self.time, state, e, a, u, reward: r, done: self.done };
        Ok(Transition { obs, reward: r, done: self.done, cause, record })
    }

    fn check_termination(&self, s: &DroneState, e: &Vec3, diverged: bool) -> Option<Termination> {
        let task = &self.cfg.task;
        if diverged || !s.is_finite() {
            return Some(Termination::Diverged);
        }
        let (roll, pitch) = s.roll_pitch();
        let max_tilt = task.max_tilt_deg.to_radians();
        let max_rate = task.max_rate_deg.to_radians();
        if e.norm() > task.termination_radius {
            Some(Termination::TrackingError)
        } else if roll.abs() > max_tilt || pitch.abs() > max_tilt {
            Some(Termination::Attitude)
        } else if s.omega.x.abs() > max_rate || s.omega.y.abs() > max_rate {
            Some(Termination::Rates)
        } else if self.steps >= self.max_steps {
            Some(Termination::TimeLimit)
        } else {
            None
        }
    }
}

/// Writes an episode log: one row per policy step.
pub fn write_episode_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut out = String::from(
        "t,r_x,r_y,r_z,v_x,v_y,v_z,q_w,q_x,q_y,q_z,omega_x,omega_y,omega_z,e_x,e_y,e_z,a_1,a_2,a_3,a_4,u_1,u_2,u_3,u_4,reward,done\n",
    );
    for rec in records {
        let mut fields: Vec<String> = vec![format!("{}", rec.t)];
        fields.extend(rec.state.to_array().iter().map(|x| x.to_string()));
        fields.extend(rec.e.iter().map(|x| x.to_string()));
        fields.extend(rec.a.iter().map(|x| x.to_string()));
        fields.extend(rec.u.iter().map(|x| x.to_string()));
        fields.push(rec.reward.to_string());
        fields.push((rec.done as u8).to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    crate::experiment::io::write_atomic(path, out.as_bytes())
}
