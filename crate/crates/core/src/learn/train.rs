//! The collect / advantage / update training loop.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::ControlLevel;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::experiment::io::write_atomic;
use crate::learn::nn::Adam;
use crate::learn::policy::{CriticNet, PolicyNet};
use crate::learn::ppo::{ppo_update, PpoConfig};
use crate::learn::rollout::{collect_batch, Worker};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub workers: usize,
    /// Transitions per epoch, split evenly across workers.
    pub batch: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub clip: f64,
    pub passes: usize,
    pub minibatch: usize,
    /// Returns are divided by this before the critic fits them.
    pub value_scale: f64,
    /// Factor applied to the actor's initial output-layer weights.
    pub init_output_scale: f64,
    /// Standardize observations with running statistics.
    pub normalize_obs: bool,
    /// Approximate-KL early stop per batch; 0 disables.
    pub target_kl: f64,
    /// Start the PWM actor at the nominal hover command instead of a zero
    /// action; the other levels already hover at zero.
    pub hover_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            workers: 64,
            batch: 64_000,
            epochs: 500,
            gamma: 0.99,
            lambda: 0.95,
            lr_actor: 3e-4,
            lr_critic: 1e-3,
            eps_start: 0.5,
            eps_end: 0.01,
            clip: 0.2,
            passes: 10,
            minibatch: 4000,
            value_scale: 100.0,
            init_output_scale: 0.01,
            normalize_obs: false,
            target_kl: 0.02,
            hover_init: true,
        }
    }
}

impl TrainConfig {
    /// Small run for desk-scale experiments.
    pub fn desk() -> Self {
        Self { workers: 4, batch: 2000, epochs: 100, minibatch: 500, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) || !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad("gamma and lambda must be in (0, 1)");
        }
        if !(self.eps_start > self.eps_end && self.eps_end > 0.0) {
            return bad("need eps_start > eps_end > 0");
        }
        if self.workers == 0 || self.batch < self.workers || self.epochs == 0 || self.passes == 0 || self.minibatch == 0 {
            return bad("workers, epochs, passes and minibatch must be positive and batch >= workers");
        }
        if !(self.clip > 0.0) || !(self.lr_actor > 0.0) || !(self.lr_critic > 0.0) || !(self.value_scale > 0.0) {
            return bad("clip, learning rates and value_scale must be positive");
        }
        Ok(())
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            clip: self.clip,
            passes: self.passes,
            minibatch: self.minibatch,
            lr_actor: self.lr_actor,
            lr_critic: self.lr_critic,
            target_kl: self.target_kl,
        }
    }

    /// Exploration std for `epoch`, linear from `eps_start` at 0 to `eps_end` at the last epoch.
    pub fn epsilon(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.eps_start;
        }
        let f = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.eps_start + f * (self.eps_end - self.eps_start)
    }
}

/// One row of the training curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_return: f64,
    pub mean_ep_len: f64,
    pub clip_frac: f64,
    pub kl: f64,
}

pub fn curve_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_return,mean_ep_len,clip_frac,kl\n");
    for s in curve {
        out.push_str(&format!("{},{},{},{},{}\n", s.epoch, s.mean_return, s.mean_ep_len, s.clip_frac, s.kl));
    }
    out
}

pub fn write_curve(path: &Path, curve: &[EpochStats]) -> Result<()> {
    write_atomic(path, curve_csv(curve).as_bytes())
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub actor: PolicyNet,
    pub critic: CriticNet,
    pub curve: Vec<EpochStats>,
}

/// Trains a policy on `env` with domain randomization as configured there.
///
/// `on_epoch` sees every curve row as it is produced.
pub fn train(env: &EnvConfig, cfg: &TrainConfig, seed: u64, mut on_epoch: impl FnMut(&EpochStats)) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let mut actor = PolicyNet::new(env.obs_dim(), &mut rng);
    actor.net.scale_output_layer(cfg.init_output_scale);
    if cfg.hover_init && env.level == ControlLevel::Pwm {
        let a = (2.0 * env.sim.hover_command() - 1.0).clamp(-0.99, 0.99);
        actor.net.set_output_bias(&[a.atanh(); 4]);
    }
    let mut critic = CriticNet::new(env.obs_dim(), &mut rng).with_scale(cfg.value_scale);
    let mut actor_opt = Adam::new(actor.net.n_params(), cfg.lr_actor);
    let mut critic_opt = Adam::new(critic.net.n_params(), cfg.lr_critic);
    let mut workers: Vec<Worker> = (0..cfg.workers as u64).map(|k| Worker::new(env.clone(), seed, k)).collect();
    let steps = cfg.batch / cfg.workers;
    let ppo = cfg.ppo();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let eps = cfg.epsilon(epoch);
        let (batch, finished) = collect_batch(&mut workers, &actor, &critic, eps, steps, cfg.gamma, cfg.lambda)?;
        let stats = ppo_update(&mut actor, &mut critic, &mut actor_opt, &mut critic_opt, &batch, eps, &ppo, &mut rng)?;
        // After the update, so stored log-probabilities always match the
        // normalization they were sampled under.
        if cfg.normalize_obs {
            actor.norm.update(&batch.obs);
            critic.norm = actor.norm.clone();
        }
        let (mean_return, mean_ep_len) = if finished.is_empty() {
            // Nothing ended this epoch: every episode outlived the segment.
            let running = workers.iter().map(|w| w.current_len() as f64).sum::<f64>() / workers.len() as f64;
            (f64::NAN, running)
        } else {
            let n = finished.len() as f64;
            (finished.iter().map(|f| f.0).sum::<f64>() / n, finished.iter().map(|f| f.1 as f64).sum::<f64>() / n)
        };
        let row = EpochStats { epoch, mean_return, mean_ep_len, clip_frac: stats.clip_frac, kl: stats.approx_kl };
        log::debug!("epoch {epoch}: eps {eps:.3} return {mean_return:.2} len {mean_ep_len:.1}");
        on_epoch(&row);
        curve.push(row);
    }
    Ok(TrainOutput { actor, critic, curve })
}
