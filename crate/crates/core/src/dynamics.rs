//! Quadrotor rigid-body and actuator physics.
//!
//! The model is the classic "X" quadrotor: four rotors at distance `L` from the
//! center of mass on the diagonals, each producing a vertical force proportional
//! to the square of its normalized speed and a yaw moment linear in that force.
//! Rotor speeds follow a first-order lag toward the square root of the commanded
//! thrust, and commands reach the motors through a fixed-length FIFO that models
//! the lumped system latency.
//!
//! Rotor numbering and signs follow the torque map
//!
//! ```text
//! eta_x = L/sqrt(2) * (-F1 - F2 + F3 + F4)
//! eta_y = L/sqrt(2) * (-F1 + F2 + F3 - F4)
//! eta_z = -M1 + M2 - M3 + M4
//! ```
//!
//! so rotor 1 sits at (+x, -y), rotor 2 at (-x, -y), rotor 3 at (-x, +y) and
//! rotor 4 at (+x, +y).

use std::collections::VecDeque;

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Quat = Quaternion<f64>;

/// Four per-rotor quantities (commands, speeds, forces, moments).
pub type Rotors = [f64; 4];

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Full simulation state: 13-dim rigid-body state plus rotor speeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DroneState {
    /// Position in the world frame, m.
    pub r: Vec3,
    /// Linear velocity in the world frame, m/s.
    pub v: Vec3,
    /// Attitude, body to world. Kept unit-norm.
    pub q: Quat,
    /// Body-frame angular rate, rad/s.
    pub omega: Vec3,
    /// Normalized rotor speeds in [0, 1].
    pub nu: Rotors,
}

impl DroneState {
    /// Drone at rest at `r`, level, rotors stopped.
    pub fn at_rest(r: Vec3) -> Self {
        Self {
            r,
            v: Vec3::zeros(),
            q: Quat::identity(),
            omega: Vec3::zeros(),
            nu: [0.0; 4],
        }
    }

    /// Same as [`DroneState::at_rest`] but with rotors spinning at `nu`.
    pub fn with_rotors(mut self, nu: Rotors) -> Self {
        self.nu = nu;
        self
    }

    /// `[r, v, q_wxyz, omega]`, the observable 13-dim state.
    pub fn to_array(&self) -> [f64; 13] {
        [
            self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z, self.q.w, self.q.i,
            self.q.j, self.q.k, self.omega.x, self.omega.y, self.omega.z,
        ]
    }

    /// Inverse of [`DroneState::to_array`]; rotor speeds are supplied separately.
    pub fn from_array(x: &[f64; 13], nu: Rotors) -> Self {
        Self {
            r: Vec3::new(x[0], x[1], x[2]),
            v: Vec3::new(x[3], x[4], x[5]),
            q: Quat::new(x[6], x[7], x[8], x[9]),
            omega: Vec3::new(x[10], x[11], x[12]),
            nu,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite()) && self.nu.iter().all(|x| x.is_finite())
    }

    /// Roll and pitch angles (ZYX Euler convention), rad.
    pub fn roll_pitch(&self) -> (f64, f64) {
        let (roll, pitch, _) = euler_angles(&self.q);
        (roll, pitch)
    }
}

/// Physical constants of the airframe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneParams {
    /// kg
    pub mass: f64,
    /// m/s^2
    pub gravity: f64,
    /// Diagonal of the inertia matrix (Ixx, Iyy, Izz), kg m^2.
    pub inertia: [f64; 3],
    /// Arm length, m.
    pub arm_length: f64,
    /// Torque-to-force ratio, m.
    pub k_m1: f64,
    /// Torque offset, N m.
    pub k_m2: f64,
}

impl Default for DroneParams {
    /// Crazyflie 2.1 constants.
    fn default() -> Self {
        Self {
            mass: 0.028,
            gravity: 9.81,
            inertia: [1.33e-5, 1.33e-5, 2.64e-5],
            arm_length: 0.0396,
            k_m1: 5.96e-3,
            k_m2: 1.56e-5,
        }
    }
}

impl DroneParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("inertia.xx", self.inertia[0]),
            ("inertia.yy", self.inertia[1]),
            ("inertia.zz", self.inertia[2]),
            ("arm_length", self.arm_length),
            ("k_m1", self.k_m1),
            ("k_m2", self.k_m2),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }

    /// Weight m*g, N.
    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn inertia_vec(&self) -> Vec3 {
        Vec3::from(self.inertia)
    }
}

/// Rigid-body integration scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Velocity updated first, then attitude from the new rate. Position uses the
    /// exact constant-acceleration update over the step.
    #[default]
    SemiImplicitEuler,
    /// Classic fourth-order Runge-Kutta with rotor forces held over the step.
    Rk4,
}

/// The parameters tuned by simulation optimization plus the physics step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Thrust-to-weight ratio.
    pub k_f: f64,
    /// Motor time constant, s.
    pub t_m: f64,
    /// Command latency, s.
    pub latency: f64,
    /// Physics step, s.
    pub dt: f64,
    #[serde(default)]
    pub integrator: Integrator,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            k_f: 1.722,
            t_m: 0.104,
            latency: 0.018,
            dt: 1.0 / 200.0,
            integrator: Integrator::SemiImplicitEuler,
        }
    }
}

impl SimParams {
    pub fn new(k_f: f64, t_m: f64, latency: f64) -> Self {
        Self { k_f, t_m, latency, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_f > 0.0) {
            return Err(Error::InvalidParameter(format!("k_f must be positive, got {}", self.k_f)));
        }
        if !(self.t_m > 0.0) {
            return Err(Error::InvalidParameter(format!("t_m must be positive, got {}", self.t_m)));
        }
        if !(self.latency >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "latency must be non-negative, got {}",
                self.latency
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.dt >= self.t_m {
            log::warn!("physics step {} s is not below the motor time constant {} s", self.dt, self.t_m);
        }
        Ok(())
    }

    /// Latency expressed in whole physics steps (nearest integer).
    pub fn latency_steps(&self) -> usize {
        (self.latency / self.dt).round() as usize
    }

    /// Normalized command that holds the vehicle in hover: `1 / k_f`.
    pub fn hover_command(&self) -> f64 {
        1.0 / self.k_f
    }
}

/// FIFO delaying motor commands by a whole number of physics steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyQueue {
    buffer: VecDeque<Rotors>,
    depth: usize,
}

impl LatencyQueue {
    /// Queue of `depth` steps, pre-filled with `fill`.
    pub fn new(depth: usize, fill: Rotors) -> Self {
        Self { buffer: std::iter::repeat(fill).take(depth).collect(), depth }
    }

    pub fn for_params(sim: &SimParams, fill: Rotors) -> Self {
        Self::new(sim.latency_steps(), fill)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Enqueue `u` and return the command issued `depth` steps ago.
    pub fn push_pop(&mut self, u: Rotors) -> Rotors {
        if self.depth == 0 {
            return u;
        }
        self.buffer.push_back(u);
        self.buffer.pop_front().expect("queue holds depth entries")
    }

    /// Overwrite every slot with `fill`.
    pub fn refill(&mut self, fill: Rotors) {
        for slot in self.buffer.iter_mut() {
            *slot = fill;
        }
    }
}

/// Maps a raw policy action in R^4 to normalized thrust commands in [0,1]^4.
pub fn action_to_thrust(a: &[f64; 4]) -> Rotors {
    a.map(|ai| 0.5 * (ai.clamp(-1.0, 1.0) + 1.0))
}

/// Per-rotor vertical force `F_i = (m g / 4) k_F nu_i^2`.
pub fn rotor_forces(nu: &Rotors, params: &DroneParams, k_f: f64) -> Rotors {
    let scale = 0.25 * params.weight() * k_f;
    nu.map(|n| scale * n * n)
}

/// Per-rotor yaw moment `M_i = k_M1 F_i + k_M2`.
pub fn rotor_moments(forces: &Rotors, params: &DroneParams) -> Rotors {
    forces.map(|f| params.k_m1 * f + params.k_m2)
}

/// Body-frame torque from rotor forces and moments.
pub fn body_torque(forces: &Rotors, moments: &Rotors, params: &DroneParams) -> Vec3 {
    let [f1, f2, f3, f4] = *forces;
    let [m1, m2, m3, m4] = *moments;
    let arm = params.arm_length * FRAC_1_SQRT_2;
    Vec3::new(arm * (-f1 - f2 + f3 + f4), arm * (-f1 + f2 + f3 - f4), -m1 + m2 - m3 + m4)
}

/// Rotates a body-frame vector into the world frame.
pub fn rotate(q: &Quat, v: &Vec3) -> Vec3 {
    let qv = Vec3::new(q.i, q.j, q.k);
    let t = 2.0 * qv.cross(v);
    v + q.w * t + qv.cross(&t)
}

/// World-frame linear acceleration of the center of mass.
pub fn linear_accel(q: &Quat, total_thrust: f64, params: &DroneParams) -> Vec3 {
    // R * (0, 0, F) is F times the third column of R.
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let body_z = Vec3::new(2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y));
    body_z * (total_thrust / params.mass) - Vec3::new(0.0, 0.0, params.gravity)
}

/// Euler's rotation equations for a diagonal inertia.
pub fn angular_accel(omega: &Vec3, eta: &Vec3, params: &DroneParams) -> Vec3 {
    let inertia = params.inertia_vec();
    let gyro = omega.cross(&inertia.component_mul(omega));
    (eta - gyro).component_div(&inertia)
}

/// Exact discretization of `T_m dnu/dt = -nu + sqrt(u)` over one step of `dt`.
pub fn motor_step(nu: &Rotors, u: &Rotors, t_m: f64, dt: f64) -> Rotors {
    let decay = (-dt / t_m).exp();
    let mut out = [0.0; 4];
    for i in 0..4 {
        let target = u[i].clamp(0.0, 1.0).sqrt();
        out[i] = (target + (nu[i] - target) * decay).clamp(0.0, 1.0);
    }
    out
}

/// Time derivative of a quaternion under body rate `omega`: `0.5 q (x) (0, omega)`.
pub fn quat_derivative(q: &Quat, omega: &Vec3) -> Quat {
    let w = Quat::new(0.0, omega.x, omega.y, omega.z);
    (q * w) * 0.5
}

/// ZYX Euler angles (roll, pitch, yaw) of a body-to-world quaternion.
pub fn euler_angles(q: &Quat) -> (f64, f64, f64) {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
    let pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0).asin();
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    (roll, pitch, yaw)
}

/// Quaternion from ZYX Euler angles.
pub fn quat_from_euler(roll: f64, pitch: f64, yaw: f64) -> Quat {
    let (sr, cr) = (0.5 * roll).sin_cos();
    let (sp, cp) = (0.5 * pitch).sin_cos();
    let (sy, cy) = (0.5 * yaw).sin_cos();
    Quat::new(
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    )
}

/// Unit quaternion for the rotation vector `phi` (axis times angle).
pub fn quat_exp(phi: &Vec3) -> Quat {
    let angle = phi.norm();
    if angle < 1e-12 {
        return Quat::new(1.0, 0.5 * phi.x, 0.5 * phi.y, 0.5 * phi.z).normalize();
    }
    let (s, c) = (0.5 * angle).sin_cos();
    let axis = phi / angle;
    Quat::new(c, s * axis.x, s * axis.y, s * axis.z)
}

/// Rotation vector of a unit quaternion, taking the short way round.
pub fn quat_log(q: &Quat) -> Vec3 {
    let q = if q.w < 0.0 { -q } else { *q };
    let v = Vec3::new(q.i, q.j, q.k);
    let s = v.norm();
    if s < 1e-12 {
        return 2.0 * v;
    }
    let angle = 2.0 * s.atan2(q.w);
    v * (angle / s)
}

/// Result of one physics step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub state: DroneState,
    /// Command that reached the motors this step (after the latency queue).
    pub motor_input: Rotors,
    /// Set when any state component became non-finite.
    pub diverged: bool,
}

/// Advances the simulation by one physics step of `sim.dt`.
pub fn step(
    state: &DroneState,
    u_cmd: &Rotors,
    params: &DroneParams,
    sim: &SimParams,
    queue: &mut LatencyQueue,
) -> Step {
    let u_cmd = u_cmd.map(|u| if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) });
    let motor_input = queue.push_pop(u_cmd);
    let nu = motor_step(&state.nu, &motor_input, sim.t_m, sim.dt);
    let forces = rotor_forces(&nu, params, sim.k_f);
    let moments = rotor_moments(&forces, params);
    let eta = body_torque(&forces, &moments, params);
    let thrust: f64 = forces.iter().sum();

    let mut next = match sim.integrator {
        Integrator::SemiImplicitEuler => semi_implicit(state, thrust, &eta, params, sim.dt),
        Integrator::Rk4 => rk4(state, thrust, &eta, params, sim.dt),
    };
    next.nu = nu;
    let diverged = !next.is_finite();
    Step { state: next, motor_input, diverged }
}

fn semi_implicit(s: &DroneState, thrust: f64, eta: &Vec3, params: &DroneParams, dt: f64) -> DroneState {
    let acc = linear_accel(&s.q, thrust, params);
    let v = s.v + acc * dt;
    let r = s.r + s.v * dt + acc * (0.5 * dt * dt);
    let omega = s.omega + angular_accel(&s.omega, eta, params) * dt;
    let q = (s.q + quat_derivative(&s.q, &omega) * dt).normalize();
    DroneState { r, v, q, omega, nu: s.nu }
}

#[derive(Clone, Copy)]
struct Deriv {
    dr: Vec3,
    dv: Vec3,
    dq: Quat,
    domega: Vec3,
}

fn rk4(s: &DroneState, thrust: f64, eta: &Vec3, params: &DroneParams, dt: f64) -> DroneState {
    let f = |x: &DroneState| Deriv {
        dr: x.v,
        dv: linear_accel(&x.q, thrust, params),
        dq: quat_derivative(&x.q, &x.omega),
        domega: angular_accel(&x.omega, eta, params),
    };
    let offset = |d: &Deriv, h: f64| DroneState {
        r: s.r + d.dr * h,
        v: s.v + d.dv * h,
        q: s.q + d.dq * h,
        omega: s.omega + d.domega * h,
        nu: s.nu,
    };
    let k1 = f(s);
    let k2 = f(&offset(&k1, 0.5 * dt));
    let k3 = f(&offset(&k2, 0.5 * dt));
    let k4 = f(&offset(&k3, dt));
    let w = dt / 6.0;
    DroneState {
        r: s.r + (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr) * w,
        v: s.v + (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv) * w,
        q: (s.q + (k1.dq + k2.dq * 2.0 + k3.dq * 2.0 + k4.dq) * w).normalize(),
        omega: s.omega + (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega) * w,
        nu: s.nu,
    }
}

/// A simulator instance: parameters, latency queue and current state.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub params: DroneParams,
    pub sim: SimParams,
    pub state: DroneState,
    queue: LatencyQueue,
}

impl Simulator {
    /// New simulator whose latency queue is pre-filled with `fill`.
    pub fn new(params: DroneParams, sim: SimParams, state: DroneState, fill: Rotors) -> Self {
        let queue = LatencyQueue::for_params(&sim, fill);
        Self { params, sim, state, queue }
    }

    /// Simulator hovering at `r`: rotors at hover speed, queue holding the hover command.
    pub fn hovering(params: DroneParams, sim: SimParams, r: Vec3) -> Self {
        let hover = sim.hover_command();
        let state = DroneState::at_rest(r).with_rotors([hover.sqrt(); 4]);
        Self::new(params, sim, state, [hover; 4])
    }

    pub fn queue(&self) -> &LatencyQueue {
        &self.queue
    }

    pub fn queue_mut(&mut self) -> &mut LatencyQueue {
        &mut self.queue
    }

    /// One physics step; the state is updated in place.
    pub fn step(&mut self, u_cmd: &Rotors) -> Step {
        let out = step(&self.state, u_cmd, &self.params, &self.sim, &mut self.queue);
        self.state = out.state;
        out
    }
}
