//! Control structures between a policy (or setpoint) and the motors.
//!
//! * [`ControlLevel::Pwm`]: the action is the per-motor thrust command.
//! * [`ControlLevel::AttitudeRate`]: the action is collective thrust plus desired
//!   body rates; a rate PID and the mixer produce motor commands.
//! * [`ControlLevel::Attitude`]: the action is collective thrust plus desired
//!   attitude; an attitude PID feeds the rate PID.
//!
//! The cascaded position controller on top of the attitude loop is used only
//! to fly the data-collection trajectories.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    action_to_thrust, quat_from_euler, quat_log, DroneParams, DroneState, Quat, Rotors, Vec3,
};

/// Per-axis PID gains and limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: [f64; 3],
    pub ki: [f64; 3],
    pub kd: [f64; 3],
    /// Clamp on the accumulated integral, per axis.
    pub i_limit: [f64; 3],
    /// Clamp on the controller output, per axis.
    pub out_limit: [f64; 3],
}

impl PidGains {
    pub fn p(kp: f64) -> Self {
        Self {
            kp: [kp; 3],
            ki: [0.0; 3],
            kd: [0.0; 3],
            i_limit: [0.0; 3],
            out_limit: [f64::INFINITY; 3],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PidState {
    pub integral: Vec3,
    pub prev_error: Vec3,
    /// False until the first call, so the first derivative term is zero.
    pub primed: bool,
}

/// One PID update with a finite-difference derivative of the error.
pub fn pid_step(err: &Vec3, st: &PidState, g: &PidGains, dt: f64) -> (Vec3, PidState) {
    let rate = if st.primed { (err - st.prev_error) / dt } else { Vec3::zeros() };
    pid_step_with_rate(err, &rate, st, g, dt)
}

/// One PID update where the error derivative is supplied by the caller.
pub fn pid_step_with_rate(
    err: &Vec3,
    err_rate: &Vec3,
    st: &PidState,
    g: &PidGains,
    dt: f64,
) -> (Vec3, PidState) {
    let mut out = Vec3::zeros();
    let mut integral = Vec3::zeros();
    for i in 0..3 {
        integral[i] = (st.integral[i] + err[i] * dt).clamp(-g.i_limit[i], g.i_limit[i]);
        let raw = g.kp[i] * err[i] + g.ki[i] * integral[i] + g.kd[i] * err_rate[i];
        out[i] = raw.clamp(-g.out_limit[i], g.out_limit[i]);
    }
    (out, PidState { integral, prev_error: *err, primed: true })
}

/// Which structure maps policy outputs to motor commands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlLevel {
    Pwm,
    #[serde(rename = "rate", alias = "attitude_rate")]
    AttitudeRate,
    Attitude,
}

impl ControlLevel {
    pub const ALL: [ControlLevel; 3] = [ControlLevel::Pwm, ControlLevel::AttitudeRate, ControlLevel::Attitude];

    /// Policy rate, Hz.
    pub fn rate_hz(self) -> f64 {
        match self {
            ControlLevel::Pwm => 100.0,
            ControlLevel::AttitudeRate => 50.0,
            ControlLevel::Attitude => 25.0,
        }
    }

    /// Policy period, s.
    pub fn period(self) -> f64 {
        1.0 / self.rate_hz()
    }

    /// Physics sub-steps per policy step for a physics step of `dt`.
    pub fn substeps(self, dt: f64) -> usize {
        ((self.period() / dt).round() as usize).max(1)
    }

    pub fn name(self) -> &'static str {
        match self {
            ControlLevel::Pwm => "pwm",
            ControlLevel::AttitudeRate => "rate",
            ControlLevel::Attitude => "attitude",
        }
    }
}

impl std::str::FromStr for ControlLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pwm" => Ok(ControlLevel::Pwm),
            "rate" | "attitude_rate" => Ok(ControlLevel::AttitudeRate),
            "attitude" => Ok(ControlLevel::Attitude),
            other => Err(format!("unknown control level '{other}' (expected pwm, rate or attitude)")),
        }
    }
}

impl std::fmt::Display for ControlLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Scaling from normalized policy actions in [-1,1]^4 to physical setpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRanges {
    /// Body-rate limit, deg/s.
    pub max_rate_deg: f64,
    /// Roll/pitch/yaw setpoint limit, deg.
    pub max_angle_deg: f64,
    /// Upper end of the collective thrust range in units of g.
    pub max_thrust_g: f64,
}

impl Default for ActionRanges {
    fn default() -> Self {
        Self { max_rate_deg: 60.0, max_angle_deg: 10.0, max_thrust_g: 2.0 }
    }
}

impl ActionRanges {
    /// Collective thrust from the first action component; 0 maps to `max/2`.
    pub fn thrust(&self, a0: f64, gravity: f64) -> f64 {
        0.5 * (a0.clamp(-1.0, 1.0) + 1.0) * self.max_thrust_g * gravity
    }

    pub fn rates(&self, a: &[f64; 4]) -> Vec3 {
        let s = self.max_rate_deg.to_radians();
        Vec3::new(a[1].clamp(-1.0, 1.0), a[2].clamp(-1.0, 1.0), a[3].clamp(-1.0, 1.0)) * s
    }

    pub fn attitude(&self, a: &[f64; 4]) -> Quat {
        let s = self.max_angle_deg.to_radians();
        quat_from_euler(a[1].clamp(-1.0, 1.0) * s, a[2].clamp(-1.0, 1.0) * s, a[3].clamp(-1.0, 1.0) * s)
    }
}

/// The controller's belief about the airframe. Usually nominal values, which
/// can differ from the plant when the plant is randomized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlModel {
    pub params: DroneParams,
    pub k_f: f64,
}

impl Default for ControlModel {
    fn default() -> Self {
        Self { params: DroneParams::default(), k_f: crate::dynamics::SimParams::default().k_f }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixerOutput {
    pub u: Rotors,
    /// True when at least one command was clamped.
    pub saturated: bool,
}

/// Distributes mass-normalized collective thrust `c` (m/s^2) and body torque
/// `tau_d` (N m) onto the four motors.
///
/// Inverts the torque map and `F_i = (m g / 4) k_F u_i` (rotor speed at its
/// steady state `sqrt(u)`), then clamps to [0,1].
pub fn mixer(c: f64, tau_d: &Vec3, model: &ControlModel) -> MixerOutput {
    let p = &model.params;
    let total = p.mass * c.max(0.0);
    let roll = tau_d.x * std::f64::consts::SQRT_2 / p.arm_length;
    let pitch = tau_d.y * std::f64::consts::SQRT_2 / p.arm_length;
    let yaw = tau_d.z / p.k_m1;
    let forces = [
        0.25 * (total - roll - pitch - yaw),
        0.25 * (total - roll + pitch + yaw),
        0.25 * (total + roll + pitch - yaw),
        0.25 * (total + roll - pitch + yaw),
    ];
    let per_unit = 0.25 * p.weight() * model.k_f;
    let mut saturated = false;
    let u = forces.map(|f| {
        let u = f / per_unit;
        let clamped = u.clamp(0.0, 1.0);
        saturated |= clamped != u;
        clamped
    });
    MixerOutput { u, saturated }
}

/// Gains for the three nested loops.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    /// Body-rate loop; output is angular acceleration, rad/s^2.
    pub rate: PidGains,
    /// Attitude loop; output is desired body rate, rad/s.
    pub attitude: PidGains,
    /// Position loop; output is desired acceleration, m/s^2.
    pub position: PidGains,
    /// Tilt limit used by the position loop, deg.
    pub max_tilt_deg: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            rate: PidGains {
                kp: [24.0, 24.0, 12.0],
                ki: [5.0, 5.0, 2.5],
                kd: [1.0, 1.0, 0.0],
                i_limit: [1.0, 1.0, 1.0],
                out_limit: [400.0, 400.0, 100.0],
            },
            attitude: PidGains {
                kp: [6.0, 6.0, 3.0],
                ki: [0.0, 0.0, 0.0],
                kd: [0.0, 0.0, 0.0],
                i_limit: [0.0, 0.0, 0.0],
                out_limit: [8.0, 8.0, 4.0],
            },
            position: PidGains {
                kp: [6.0, 6.0, 9.0],
                ki: [1.0, 1.0, 2.0],
                kd: [7.0, 7.0, 8.4],
                i_limit: [0.3, 0.3, 0.5],
                out_limit: [6.0, 6.0, 8.0],
            },
            max_tilt_deg: 25.0,
        }
    }
}

/// Integrator state of the cascade.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CascadeState {
    pub position: PidState,
    pub attitude: PidState,
    pub rate: PidState,
}

/// Position/velocity target for the position loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionTarget {
    pub pos: Vec3,
    pub vel: Vec3,
}

impl PositionTarget {
    pub fn fixed(pos: Vec3) -> Self {
        Self { pos, vel: Vec3::zeros() }
    }
}

/// Stateful cascaded controller.
#[derive(Clone, Debug)]
pub struct Cascade {
    pub gains: ControllerGains,
    pub model: ControlModel,
    pub state: CascadeState,
}

impl Cascade {
    pub fn new(gains: ControllerGains, model: ControlModel) -> Self {
        Self { gains, model, state: CascadeState::default() }
    }

    pub fn reset(&mut self) {
        self.state = CascadeState::default();
    }

    /// Rate loop: `tau_d = I * pid(omega_d - omega)`, then the mixer.
    pub fn attitude_rate(&mut self, c: f64, omega_d: &Vec3, omega_meas: &Vec3, dt: f64) -> MixerOutput {
        let err = omega_d - omega_meas;
        let (alpha, st) = pid_step(&err, &self.state.rate, &self.gains.rate, dt);
        self.state.rate = st;
        let tau = self.model.params.inertia_vec().component_mul(&alpha);
        mixer(c, &tau, &self.model)
    }

    /// Desired body rate emitted by the attitude loop.
    pub fn attitude_outer(&mut self, q_d: &Quat, q_meas: &Quat, dt: f64) -> Vec3 {
        let err = quat_log(&(q_meas.conjugate() * q_d));
        let (omega_d, st) = pid_step(&err, &self.state.attitude, &self.gains.attitude, dt);
        self.state.attitude = st;
        omega_d
    }

    /// Attitude loop followed by the rate loop.
    pub fn attitude(&mut self, c: f64, q_d: &Quat, meas: &DroneState, dt: f64) -> MixerOutput {
        let omega_d = self.attitude_outer(q_d, &meas.q, dt);
        self.attitude_rate(c, &omega_d, &meas.omega, dt)
    }

    /// Collective thrust and attitude setpoint from the position loop.
    pub fn position_outer(&mut self, target: &PositionTarget, meas: &DroneState, dt: f64) -> (f64, Quat) {
        let g = self.model.params.gravity;
        let err = target.pos - meas.r;
        let err_rate = target.vel - meas.v;
        let (acc, st) = pid_step_with_rate(&err, &err_rate, &self.state.position, &self.gains.position, dt);
        self.state.position = st;

        let mut thrust = acc + Vec3::new(0.0, 0.0, g);
        thrust.z = thrust.z.max(0.2 * g);
        let horizontal = (thrust.x * thrust.x + thrust.y * thrust.y).sqrt();
        let max_horizontal = thrust.z * self.gains.max_tilt_deg.to_radians().tan();
        if horizontal > max_horizontal {
            let s = max_horizontal / horizontal;
            thrust.x *= s;
            thrust.y *= s;
        }
        let roll = (-thrust.y).atan2((thrust.x * thrust.x + thrust.z * thrust.z).sqrt());
        let pitch = thrust.x.atan2(thrust.z);
        let q_d = quat_from_euler(roll, pitch, 0.0);
        // Project onto the current body z axis so a tilted airframe does not climb.
        let body_z = crate::dynamics::rotate(&meas.q, &Vec3::z());
        let c = thrust.dot(&body_z).max(0.0);
        (c, q_d)
    }

    /// Full cascade from a position target to motor commands.
    pub fn position(&mut self, target: &PositionTarget, meas: &DroneState, dt: f64) -> MixerOutput {
        let (c, q_d) = self.position_outer(target, meas, dt);
        self.attitude(c, &q_d, meas, dt)
    }

    /// Maps a normalized policy action to motor commands for `level`.
    pub fn apply_action(
        &mut self,
        level: ControlLevel,
        a: &[f64; 4],
        ranges: &ActionRanges,
        meas: &DroneState,
        dt: f64,
    ) -> Rotors {
        match level {
            ControlLevel::Pwm => action_to_thrust(a),
            ControlLevel::AttitudeRate => {
                let c = ranges.thrust(a[0], self.model.params.gravity);
                self.attitude_rate(c, &ranges.rates(a), &meas.omega, dt).u
            }
            ControlLevel::Attitude => {
                let c = ranges.thrust(a[0], self.model.params.gravity);
                self.attitude(c, &ranges.attitude(a), meas, dt).u
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{body_torque, rotor_forces, rotor_moments, Simulator, SimParams};
    use approx::assert_relative_eq;

    fn model() -> ControlModel {
        ControlModel::default()
    }

    #[test]
    fn pid_basics() {
        let g = PidGains {
            kp: [2.0; 3],
            ki: [0.0; 3],
            kd: [0.0; 3],
            i_limit: [1.0; 3],
            out_limit: [100.0; 3],
        };
        let (out, _) = pid_step(&Vec3::zeros(), &PidState::default(), &g, 0.01);
        assert_eq!(out, Vec3::zeros());

        let e = Vec3::new(0.1, -0.2, 0.3);
        let mut st = PidState::default();
        for _ in 0..5 {
            let (out, s) = pid_step(&e, &st, &g, 0.01);
            st = s;
            assert_relative_eq!(out, 2.0 * e);
        }
    }

    #[test]
    fn pid_integral_accumulates_and_clamps() {
        let g = PidGains {
            kp: [0.0; 3],
            ki: [3.0; 3],
            kd: [0.0; 3],
            i_limit: [0.05; 3],
            out_limit: [100.0; 3],
        };
        let e = Vec3::new(1.0, 1.0, 1.0);
        let dt = 0.01;
        let mut st = PidState::default();
        for n in 1..=20 {
            let (out, s) = pid_step(&e, &st, &g, dt);
            st = s;
            let expected = 3.0 * (n as f64 * dt * 1.0).min(0.05);
            assert!((out.x - expected).abs() < 1e-12, "step {n}");
            assert!(st.integral.x <= 0.05);
        }
    }

    #[test]
    fn mixer_hover() {
        let m = model();
        let out = mixer(m.params.gravity, &Vec3::zeros(), &m);
        for u in out.u {
            assert_relative_eq!(u, 1.0 / m.k_f, epsilon = 1e-12);
        }
        assert!(!out.saturated);
    }

    #[test]
    fn mixer_roll_pattern() {
        let m = model();
        let hover = mixer(m.params.gravity, &Vec3::zeros(), &m).u;
        let rolled = mixer(m.params.gravity, &Vec3::new(1e-4, 0.0, 0.0), &m).u;
        let d: Vec<f64> = (0..4).map(|i| rolled[i] - hover[i]).collect();
        assert!(d[0] < 0.0 && d[1] < 0.0 && d[2] > 0.0 && d[3] > 0.0);
        assert_relative_eq!(d[0], d[1], epsilon = 1e-15);
        assert_relative_eq!(d[2], -d[0], epsilon = 1e-15);
    }

    #[test]
    fn mixer_torque_round_trip() {
        let m = model();
        let tau = Vec3::new(2e-4, -1e-4, 3e-6);
        let out = mixer(9.0, &tau, &m);
        assert!(!out.saturated);
        let f = rotor_forces(&out.u.map(f64::sqrt), &m.params, m.k_f);
        let eta = body_torque(&f, &rotor_moments(&f, &m.params), &m.params);
        assert!((eta - tau).abs().max() < 1e-9);
        assert_relative_eq!(f.iter().sum::<f64>(), m.params.mass * 9.0, epsilon = 1e-12);
    }

    #[test]
    fn mixer_saturation_flag() {
        let m = model();
        let out = mixer(30.0, &Vec3::new(5e-3, 0.0, 0.0), &m);
        assert!(out.saturated);
        assert!(out.u.iter().all(|u| (0.0..=1.0).contains(u)));
    }

    #[test]
    fn rate_ctrl_matched_rates_is_hover_mixing() {
        let m = model();
        let mut c = Cascade::new(ControllerGains::default(), m);
        let w = Vec3::new(0.3, -0.1, 0.2);
        let out = c.attitude_rate(9.81, &w, &w, 0.005);
        assert_eq!(out.u, mixer(9.81, &Vec3::zeros(), &m).u);
    }

    #[test]
    fn rate_ctrl_sign() {
        let mut c = Cascade::new(ControllerGains::default(), model());
        let out = c.attitude_rate(9.81, &Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros(), 0.005).u;
        assert!(out[2] > out[0] && out[3] > out[1]);
    }

    #[test]
    fn attitude_ctrl_at_setpoint_is_hover() {
        let m = model();
        let mut c = Cascade::new(ControllerGains::default(), m);
        let meas = DroneState::at_rest(Vec3::zeros());
        let out = c.attitude(9.81, &Quat::identity(), &meas, 0.005);
        for (a, b) in out.u.iter().zip(mixer(9.81, &Vec3::zeros(), &m).u) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn attitude_cascade_reproduces_rate_command() {
        let m = model();
        let gains = ControllerGains::default();
        let mut cascade = Cascade::new(gains, m);
        let mut rate_only = Cascade::new(gains, m);
        let meas = DroneState { q: quat_from_euler(0.05, -0.02, 0.0), omega: Vec3::new(0.2, 0.1, 0.0), ..DroneState::at_rest(Vec3::zeros()) };
        let q_d = quat_from_euler(0.1, 0.0, 0.0);
        let omega_d = Cascade::new(gains, m).attitude_outer(&q_d, &meas.q, 0.005);
        let a = cascade.attitude(9.81, &q_d, &meas, 0.005);
        let b = rate_only.attitude_rate(9.81, &omega_d, &meas.omega, 0.005);
        assert_eq!(a, b);
    }

    #[test]
    fn position_ctrl_at_setpoint_is_hover() {
        let m = model();
        let mut c = Cascade::new(ControllerGains::default(), m);
        let meas = DroneState::at_rest(Vec3::new(0.0, 0.0, 1.0));
        let out = c.position(&PositionTarget::fixed(meas.r), &meas, 0.005);
        for (a, b) in out.u.iter().zip(mixer(9.81, &Vec3::zeros(), &m).u) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn position_offset_tilts_toward_setpoint() {
        let mut c = Cascade::new(ControllerGains::default(), model());
        let meas = DroneState::at_rest(Vec3::new(0.0, 0.0, 1.0));
        let (_, q_d) = c.position_outer(&PositionTarget::fixed(Vec3::new(0.5, 0.3, 1.0)), &meas, 0.005);
        let z = crate::dynamics::rotate(&q_d, &Vec3::z());
        assert!(z.x > 0.0 && z.y > 0.0);
    }

    #[test]
    fn level_rates_and_substeps() {
        assert_eq!(ControlLevel::Pwm.substeps(0.005), 2);
        assert_eq!(ControlLevel::AttitudeRate.substeps(0.005), 4);
        assert_eq!(ControlLevel::Attitude.substeps(0.005), 8);
        for level in ControlLevel::ALL {
            assert_eq!(200 % level.rate_hz() as usize, 0);
            assert_eq!(level.name().parse::<ControlLevel>().unwrap(), level);
        }
    }

    fn rate_step_rise_time(gains: ControllerGains) -> Option<f64> {
        let sim = SimParams::default();
        let mut s = Simulator::hovering(Default::default(), sim, Vec3::new(0.0, 0.0, 1.0));
        let mut c = Cascade::new(gains, model());
        let target = Vec3::new(1.0, 0.0, 0.0);
        for k in 1..=200 {
            let u = c.attitude_rate(9.81, &target, &s.state.omega, sim.dt).u;
            s.step(&u);
            if (s.state.omega.x - 1.0).abs() < 0.1 {
                return Some(k as f64 * sim.dt);
            }
        }
        None
    }

    #[test]
    fn rate_step_fixture() {
        let t = rate_step_rise_time(ControllerGains::default()).expect("never reached target");
        assert!(t < 0.3, "rise time {t}");
    }

    #[test]
    fn roll_setpoint_fixture() {
        let sim = SimParams::default();
        let mut s = Simulator::hovering(Default::default(), sim, Vec3::new(0.0, 0.0, 1.0));
        let mut c = Cascade::new(ControllerGains::default(), model());
        let target = 10f64.to_radians();
        let q_d = quat_from_euler(target, 0.0, 0.0);
        let mut within_since = None;
        for k in 1..=400 {
            let u = c.attitude(9.81, &q_d, &s.state, sim.dt).u;
            s.step(&u);
            let (roll, _) = s.state.roll_pitch();
            let ok = (roll - target).abs() < 1f64.to_radians();
            match (ok, within_since) {
                (true, None) => within_since = Some(k),
                (false, Some(_)) => within_since = None,
                _ => {}
            }
        }
        let k = within_since.expect("roll did not settle");
        assert!((k as f64) * sim.dt < 1.0, "settled at {}", k as f64 * sim.dt);
    }
}
