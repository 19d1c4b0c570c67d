//! Sensor and actuator noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{quat_exp, DroneState, Rotors, Vec3};
use crate::error::{Error, Result};

/// Noise magnitudes. Defaults are stand-ins, not fitted to hardware.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub sigma_pos: f64,
    pub sigma_vel: f64,
    pub sigma_att: f64,
    pub uniform_pos: f64,
    pub uniform_vel: f64,
    pub uniform_att: f64,
    pub gyro_sigma: f64,
    /// Bias random-walk intensity, rad/s per sqrt(s).
    pub gyro_bias_sigma: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_pos: 2e-3,
            sigma_vel: 5e-3,
            sigma_att: 1e-3,
            uniform_pos: 2e-3,
            uniform_vel: 5e-3,
            uniform_att: 1e-3,
            gyro_sigma: 5e-3,
            gyro_bias_sigma: 5e-4,
            ou_theta: 15.0,
            ou_sigma: 0.05,
        }
    }
}

impl NoiseConfig {
    /// All magnitudes zero.
    pub fn none() -> Self {
        Self {
            sigma_pos: 0.0,
            sigma_vel: 0.0,
            sigma_att: 0.0,
            uniform_pos: 0.0,
            uniform_vel: 0.0,
            uniform_att: 0.0,
            gyro_sigma: 0.0,
            gyro_bias_sigma: 0.0,
            ou_theta: 0.0,
            ou_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_pos,
            self.sigma_vel,
            self.sigma_att,
            self.uniform_pos,
            self.uniform_vel,
            self.uniform_att,
            self.gyro_sigma,
            self.gyro_bias_sigma,
            self.ou_theta,
            self.ou_sigma,
        ];
        if all.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidParameter("noise magnitudes must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Slowly drifting gyroscope bias.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GyroBiasState {
    pub bias: Vec3,
}

/// Actuator perturbation following a discretized Ornstein-Uhlenbeck process.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OuState {
    pub x: Rotors,
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    (2.0 * rng.gen::<f64>() - 1.0) * half_width
}

fn mixed<R: Rng + ?Sized>(rng: &mut R, sigma: f64, half_width: f64) -> Vec3 {
    let mut out = Vec3::zeros();
    for i in 0..3 {
        let g = sigma * gauss(rng);
        out[i] = g + uniform(rng, half_width);
    }
    out
}

/// Corrupts the true state into what the estimator would report.
///
/// Returns the noisy state (rotor speeds are copied through unchanged) and the
/// advanced gyro bias. The random draws per call are fixed in number and order
/// so streams stay aligned regardless of the configured magnitudes.
pub fn corrupt_state<R: Rng + ?Sized>(
    state: &DroneState,
    cfg: &NoiseConfig,
    gyro: &GyroBiasState,
    dt: f64,
    rng: &mut R,
) -> (DroneState, GyroBiasState) {
    let mut out = *state;
    out.r += mixed(rng, cfg.sigma_pos, cfg.uniform_pos);
    out.v += mixed(rng, cfg.sigma_vel, cfg.uniform_vel);
    let tilt = mixed(rng, cfg.sigma_att, cfg.uniform_att);
    if tilt != Vec3::zeros() {
        out.q = (state.q * quat_exp(&tilt)).normalize();
    }
    let mut white = Vec3::zeros();
    for i in 0..3 {
        white[i] = cfg.gyro_sigma * gauss(rng);
    }
    out.omega += white + gyro.bias;

    let mut walk = Vec3::zeros();
    for i in 0..3 {
        walk[i] = cfg.gyro_bias_sigma * dt.sqrt() * gauss(rng);
    }
    (out, GyroBiasState { bias: gyro.bias + walk })
}

/// One Euler-Maruyama step of `dx = -theta x dt + sigma dW`.
pub fn ou_step<R: Rng + ?Sized>(s: &OuState, cfg: &NoiseConfig, dt: f64, rng: &mut R) -> OuState {
    let scale = cfg.ou_sigma * dt.sqrt();
    let mut x = s.x;
    for xi in x.iter_mut() {
        let w = gauss(rng);
        *xi += -cfg.ou_theta * *xi * dt + scale * w;
    }
    OuState { x }
}

/// Adds the actuator perturbation to a command and re-clamps to [0,1].
pub fn perturb_command(u: &Rotors, ou: &OuState) -> Rotors {
    let mut out = *u;
    for (ui, xi) in out.iter_mut().zip(ou.x) {
        *ui = (*ui + xi).clamp(0.0, 1.0);
    }
    out
}
