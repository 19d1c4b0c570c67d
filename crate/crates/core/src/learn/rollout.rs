//! Experience collection and deterministic policy evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, QuadEnv, StepRecord, Termination};
use crate::error::Result;
use crate::learn::gae::gae;
use crate::learn::policy::{forward_policy, CriticNet, PolicyNet, ACTION_DIM};
use crate::learn::ppo::RolloutBatch;
use crate::seed::derive_seed;

/// An environment plus the sampling RNG and the episode in progress.
#[derive(Clone, Debug)]
pub struct Worker {
    env: QuadEnv,
    rng: ChaCha8Rng,
    obs: Vec<f64>,
    ep_return: f64,
    ep_len: usize,
}

/// One worker's contiguous stretch of experience.
#[derive(Clone, Debug, Default)]
pub struct Segment {
    pub obs: Vec<f64>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub logprobs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub bootstrap: f64,
    /// `(return, length)` of episodes that ended inside the segment.
    pub finished: Vec<(f64, usize)>,
}

impl Worker {
    pub fn new(cfg: EnvConfig, seed: u64, index: u64) -> Self {
        let mut env = QuadEnv::new(cfg, derive_seed(seed, 2 * index));
        let obs = env.reset();
        Self { env, rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * index + 1)), obs, ep_return: 0.0, ep_len: 0 }
    }

    /// Steps the environment `steps` times with exploration noise `eps`.
    ///
    /// Episodes that hit the step budget are cut with `gamma * V(next)` folded
    /// into the last reward, so the done flag never discards future value.
    pub fn collect(&mut self, actor: &PolicyNet, critic: &CriticNet, eps: f64, steps: usize, gamma: f64) -> Result<Segment> {
        let mut seg = Segment::default();
        for _ in 0..steps {
            let s = forward_policy(actor, &self.obs, eps, &mut self.rng);
            let value = critic.value(&self.obs);
            let tr = self.env.step(&s.action)?;
            let mut r = tr.reward;
            if tr.cause == Some(Termination::TimeLimit) {
                r += gamma * critic.value(&tr.obs);
            }
            seg.obs.extend_from_slice(&self.obs);
            seg.actions.push(s.raw);
            seg.logprobs.push(s.logprob);
            seg.rewards.push(r);
            seg.values.push(value);
            seg.dones.push(tr.done);
            self.ep_return += tr.reward;
            self.ep_len += 1;
            if tr.done {
                seg.finished.push((self.ep_return, self.ep_len));
                self.ep_return = 0.0;
                self.ep_len = 0;
                self.obs = self.env.reset();
            } else {
                self.obs = tr.obs;
            }
        }
        seg.bootstrap = critic.value(&self.obs);
        Ok(seg)
    }

    pub fn current_len(&self) -> usize {
        self.ep_len
    }
}

/// Collects from every worker in parallel and assembles a batch in worker
/// order, with advantages computed per segment.
#[allow(clippy::too_many_arguments)]
pub fn collect_batch(
    workers: &mut [Worker],
    actor: &PolicyNet,
    critic: &CriticNet,
    eps: f64,
    steps_per_worker: usize,
    gamma: f64,
    lambda: f64,
) -> Result<(RolloutBatch, Vec<(f64, usize)>)> {
    let segments: Vec<Result<Segment>> =
        workers.par_iter_mut().map(|w| w.collect(actor, critic, eps, steps_per_worker, gamma)).collect();
    let mut batch = RolloutBatch { obs_dim: actor.obs_dim(), ..RolloutBatch::default() };
    let mut finished = Vec::new();
    for seg in segments {
        let seg = seg?;
        let (adv, ret) = gae(&seg.rewards, &seg.values, &seg.dones, gamma, lambda, seg.bootstrap);
        batch.obs.extend(seg.obs);
        batch.actions.extend(seg.actions);
        batch.logprobs.extend(seg.logprobs);
        batch.rewards.extend(seg.rewards);
        batch.values.extend(seg.values);
        batch.dones.extend(seg.dones);
        batch.advantages.extend(adv);
        batch.returns.extend(ret);
        finished.extend(seg.finished);
    }
    Ok((batch, finished))
}

/// Result of one deterministic episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub steps: usize,
    /// Seconds flown: policy steps times the policy period.
    pub flight_time: f64,
    pub cause: Termination,
    pub total_reward: f64,
}

/// Flies the mean action of `actor` for at most `max_steps` policy steps.
pub fn run_episode(
    actor: &PolicyNet,
    cfg: &EnvConfig,
    seed: u64,
    max_steps: usize,
    mut log: Option<&mut Vec<StepRecord>>,
) -> Result<EpisodeOutcome> {
    let mut env = QuadEnv::new(cfg.clone(), seed);
    env.set_max_steps(max_steps);
    let mut obs = env.reset();
    let mut total = 0.0;
    loop {
        let tr = env.step(&actor.mean(&obs))?;
        total += tr.reward;
        if let Some(l) = log.as_deref_mut() {
            l.push(tr.record.clone());
        }
        if let Some(cause) = tr.cause {
            return Ok(EpisodeOutcome {
                steps: env.steps(),
                flight_time: env.steps() as f64 * env.policy_period(),
                cause,
                total_reward: total,
            });
        }
        obs = tr.obs;
    }
}
