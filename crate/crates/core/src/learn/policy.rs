//! Gaussian actor and value critic.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::learn::nn::{Activation, Mlp};

pub const ACTOR_HIDDEN: [usize; 2] = [50, 50];
pub const CRITIC_HIDDEN: [usize; 2] = [64, 64];
pub const ACTION_DIM: usize = 4;

/// Per-dimension input standardization from running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Standardized inputs are clipped to this magnitude.
pub const OBS_CLIP: f64 = 10.0;

impl ObsNorm {
    /// Identity transform until the first update.
    pub fn new(dim: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; dim], var: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((x, m), v)| ((x - m) / (v.sqrt() + 1e-8)).clamp(-OBS_CLIP, OBS_CLIP))
            .collect()
    }

    /// Merges the statistics of `rows` (row-major, `dim` columns) into the running ones.
    pub fn update(&mut self, rows: &[f64]) {
        let d = self.dim();
        let n = (rows.len() / d) as f64;
        if n == 0.0 {
            return;
        }
        for k in 0..d {
            let col = rows.iter().skip(k).step_by(d);
            let m = col.clone().sum::<f64>() / n;
            let v = col.map(|x| (x - m).powi(2)).sum::<f64>() / n;
            if self.count == 0.0 {
                self.mean[k] = m;
                self.var[k] = v;
                continue;
            }
            let total = self.count + n;
            let delta = m - self.mean[k];
            self.mean[k] += delta * n / total;
            self.var[k] = (self.var[k] * self.count + v * n + delta * delta * self.count * n / total) / total;
        }
        self.count += n;
    }
}

/// Actor: ReLU hidden layers and a tanh output giving the mean action in `[-1, 1]^4`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub net: Mlp,
    pub norm: ObsNorm,
}

/// Critic: tanh hidden layers and a linear scalar output.
///
/// The network fits `V / scale`; a scale near the magnitude of typical
/// returns keeps its targets of order one.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet {
    pub net: Mlp,
    pub norm: ObsNorm,
    pub scale: f64,
}

/// One action draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicySample {
    /// Clamped to the action box; this is what the environment receives.
    pub action: [f64; ACTION_DIM],
    /// The unclamped Gaussian draw the log-probability refers to.
    pub raw: [f64; ACTION_DIM],
    pub logprob: f64,
    pub mean: [f64; ACTION_DIM],
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, rng: &mut R) -> Self {
        let sizes = [obs_dim, ACTOR_HIDDEN[0], ACTOR_HIDDEN[1], ACTION_DIM];
        Self { net: Mlp::kaiming(&sizes, Activation::Relu, Activation::Tanh, rng), norm: ObsNorm::new(obs_dim) }
    }

    pub fn from_net(net: Mlp) -> Self {
        let norm = ObsNorm::new(net.input_dim());
        Self { net, norm }
    }

    /// Network input for a raw observation.
    pub fn input(&self, obs: &[f64]) -> Vec<f64> {
        self.norm.apply(obs)
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn mean(&self, obs: &[f64]) -> [f64; ACTION_DIM] {
        to_action(&self.net.forward(&self.input(obs)))
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], eps: f64, rng: &mut R) -> PolicySample {
        forward_policy(self, obs, eps, rng)
    }
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, rng: &mut R) -> Self {
        let sizes = [obs_dim, CRITIC_HIDDEN[0], CRITIC_HIDDEN[1], 1];
        Self { net: Mlp::kaiming(&sizes, Activation::Tanh, Activation::Identity, rng), norm: ObsNorm::new(obs_dim), scale: 1.0 }
    }

    pub fn input(&self, obs: &[f64]) -> Vec<f64> {
        self.norm.apply(obs)
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.scale * self.net.forward(&self.input(obs))[0]
    }
}

fn to_action(v: &[f64]) -> [f64; ACTION_DIM] {
    let mut a = [0.0; ACTION_DIM];
    a.copy_from_slice(&v[..ACTION_DIM]);
    a
}

/// Log-density of `raw` under `N(mean, eps^2 I)`.
pub fn log_prob(raw: &[f64; ACTION_DIM], mean: &[f64; ACTION_DIM], eps: f64) -> f64 {
    let c = -eps.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    raw.iter().zip(mean).map(|(a, m)| c - (a - m).powi(2) / (2.0 * eps * eps)).sum()
}

/// Samples `a ~ N(pi(obs), eps^2 I)` and clamps it to `[-1, 1]`.
///
/// With `eps == 0` the mean is returned and the log-probability is zero.
pub fn forward_policy<R: Rng + ?Sized>(net: &PolicyNet, obs: &[f64], eps: f64, rng: &mut R) -> PolicySample {
    let mean = net.mean(obs);
    if eps <= 0.0 {
        return PolicySample { action: mean, raw: mean, logprob: 0.0, mean };
    }
    let mut raw = [0.0; ACTION_DIM];
    for (r, m) in raw.iter_mut().zip(&mean) {
        *r = m + eps * rng.sample::<f64, _>(StandardNormal);
    }
    PolicySample { action: raw.map(|a| a.clamp(-1.0, 1.0)), raw, logprob: log_prob(&raw, &mean, eps), mean }
}
