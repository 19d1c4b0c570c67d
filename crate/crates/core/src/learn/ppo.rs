//! Clipped-surrogate policy optimization.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::nn::Adam;
use crate::learn::policy::{log_prob, CriticNet, PolicyNet, ACTION_DIM};

/// Transitions gathered for one update, with GAE already applied.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBatch {
    pub obs_dim: usize,
    /// Row-major `len x obs_dim`.
    pub obs: Vec<f64>,
    /// Unclamped actions the log-probabilities refer to.
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub logprobs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn obs_row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip: f64,
    pub passes: usize,
    pub minibatch: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Stop the actor updates of this batch once a minibatch's approximate KL
    /// exceeds 1.5 times this value; 0 disables the check.
    pub target_kl: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self { clip: 0.2, passes: 10, minibatch: 4000, lr_actor: 3e-4, lr_critic: 1e-3, target_kl: 0.0 }
    }
}

/// Averages over every minibatch step of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub clip_frac: f64,
    /// Mean of `logp_old - logp_new`.
    pub approx_kl: f64,
    /// Minibatch steps taken before the KL check stopped actor updates, if it did.
    pub stopped_at: Option<usize>,
}

/// Rescales advantages to zero mean and unit standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// Clipped surrogate loss (negated, to be minimized) over `idx`; gradient
/// accumulated into `grad`. Returns `(loss, clip_frac, approx_kl)`.
pub fn surrogate_loss(
    actor: &PolicyNet,
    batch: &RolloutBatch,
    idx: &[usize],
    advantages: &[f64],
    eps: f64,
    clip: f64,
    grad: &mut [f64],
) -> (f64, f64, f64) {
    let n = idx.len() as f64;
    let mut loss = 0.0;
    let mut clipped = 0usize;
    let mut kl = 0.0;
    for &i in idx {
        let cache = actor.net.forward_cached(&actor.input(batch.obs_row(i)));
        let mut mean = [0.0; ACTION_DIM];
        mean.copy_from_slice(cache.output());
        let raw = &batch.actions[i];
        let logp = log_prob(raw, &mean, eps);
        let ratio = (logp - batch.logprobs[i]).exp();
        let a = advantages[i];
        let unclipped = ratio * a;
        let clipped_ratio = ratio.clamp(1.0 - clip, 1.0 + clip);
        let surr = unclipped.min(clipped_ratio * a);
        loss -= surr / n;
        kl += (batch.logprobs[i] - logp) / n;
        if (ratio - 1.0).abs() > clip {
            clipped += 1;
        }
        // The gradient flows only when the unclipped term is the minimum.
        let active = unclipped <= clipped_ratio * a;
        if active && a != 0.0 {
            let d_ratio = -a / n;
            let mut g_out = [0.0; ACTION_DIM];
            for k in 0..ACTION_DIM {
                g_out[k] = d_ratio * ratio * (raw[k] - mean[k]) / (eps * eps);
            }
            actor.net.backward(&cache, &g_out, grad);
        }
    }
    (loss, clipped as f64 / n, kl)
}

/// Mean squared error of the critic network against `returns / scale` over `idx`.
pub fn critic_loss(critic: &CriticNet, batch: &RolloutBatch, idx: &[usize], returns: &[f64], grad: &mut [f64]) -> f64 {
    let n = idx.len() as f64;
    let mut loss = 0.0;
    for &i in idx {
        let cache = critic.net.forward_cached(&critic.input(batch.obs_row(i)));
        let err = cache.output()[0] - returns[i] / critic.scale;
        loss += err * err / n;
        critic.net.backward(&cache, &[2.0 * err / n], grad);
    }
    loss
}

/// Runs `passes` shuffled minibatch epochs over `batch`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    actor: &mut PolicyNet,
    critic: &mut CriticNet,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    batch: &RolloutBatch,
    eps: f64,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    if batch.is_empty() {
        return Ok(PpoStats::default());
    }
    let mut adv = batch.advantages.clone();
    normalize_advantages(&mut adv);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mb = cfg.minibatch.clamp(1, batch.len());
    let mut stats = PpoStats::default();
    let mut steps = 0usize;
    let mut g_actor = vec![0.0; actor.net.n_params()];
    let mut g_critic = vec![0.0; critic.net.n_params()];
    let mut actor_live = true;
    for _ in 0..cfg.passes {
        order.shuffle(rng);
        for idx in order.chunks(mb) {
            g_actor.iter_mut().for_each(|g| *g = 0.0);
            g_critic.iter_mut().for_each(|g| *g = 0.0);
            let (la, cf, kl) = surrogate_loss(actor, batch, idx, &adv, eps, cfg.clip, &mut g_actor);
            let lc = critic_loss(critic, batch, idx, &batch.returns, &mut g_critic);
            if !la.is_finite() || !lc.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "actor loss {la}, critic loss {lc}, step {steps}, eps {eps}"
                )));
            }
            if actor_live && cfg.target_kl > 0.0 && kl > 1.5 * cfg.target_kl {
                actor_live = false;
                stats.stopped_at = Some(steps);
            }
            if actor_live {
                actor_opt.step(actor.net.params_mut(), &g_actor);
            }
            critic_opt.step(critic.net.params_mut(), &g_critic);
            stats.actor_loss += la;
            stats.critic_loss += lc;
            stats.clip_frac += cf;
            stats.approx_kl += kl;
            steps += 1;
        }
    }
    let s = steps as f64;
    Ok(PpoStats {
        actor_loss: stats.actor_loss / s,
        critic_loss: stats.critic_loss / s,
        clip_frac: stats.clip_frac / s,
        approx_kl: stats.approx_kl / s,
        stopped_at: stats.stopped_at,
    })
}
