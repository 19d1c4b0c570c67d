//! Independent oracles shared by the property and acceptance tests.
#![allow(dead_code)]

use quadsim::learn::Mlp;
use rand::Rng;

/// GAE from its definition: the lambda-weighted average of n-step advantage
/// estimates, truncated where the episode or the segment ends.
pub fn gae_brute(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64, bootstrap: f64) -> Vec<f64> {
    let t_len = rewards.len();
    (0..t_len)
        .map(|t| {
            let end = (t..t_len).find(|&k| dones[k]).map(|k| k + 1).unwrap_or(t_len);
            let horizon = end - t;
            let n_step = |n: usize| {
                let mut g = 0.0;
                for k in 0..n {
                    g += gamma.powi(k as i32) * rewards[t + k];
                }
                // The window ends either at a terminal step or at the segment end.
                let next = match (t + n == end, dones[end - 1]) {
                    (false, _) => values[t + n],
                    (true, true) => 0.0,
                    (true, false) => bootstrap,
                };
                g + gamma.powi(n as i32) * next - values[t]
            };
            let mut a = 0.0;
            for n in 1..horizon {
                a += (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(n);
            }
            a + lambda.powi(horizon as i32 - 1) * n_step(horizon)
        })
        .collect()
}

pub struct GradCheck {
    pub checked: usize,
    pub worst_rel: f64,
}

/// Compares `Mlp::backward` against central differences of the scalar
/// `sum_j w_j * out_j` on `coords` random parameters.
///
/// A coordinate whose one-sided differences disagree sits within `h` of a
/// ReLU kink; the input is nudged and the coordinate retried.
pub fn grad_check<R: Rng>(net: &Mlp, coords: usize, h: f64, rng: &mut R) -> GradCheck {
    let n_in = net.input_dim();
    let n_out = net.output_dim();
    let w: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |m: &Mlp, x: &[f64]| m.forward(x).iter().zip(&w).map(|(o, wj)| o * wj).sum::<f64>();
    let mut x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < coords {
        let cache = net.forward_cached(&x);
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&cache, &w, &mut grad);
        let i = rng.gen_range(0..net.n_params());
        let mut probe = net.clone();
        let p0 = probe.params()[i];
        probe.params_mut()[i] = p0 + h;
        let up = loss(&probe, &x);
        probe.params_mut()[i] = p0 - h;
        let down = loss(&probe, &x);
        let mid = loss(net, &x);
        let (fwd, bwd) = ((up - mid) / h, (mid - down) / h);
        if (fwd - bwd).abs() > 1e-3 * (fwd.abs() + bwd.abs()) + 1e-7 {
            for xi in x.iter_mut() {
                *xi += rng.gen_range(-1e-3..1e-3);
            }
            continue;
        }
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-8);
        worst = worst.max(rel);
        checked += 1;
    }
    GradCheck { checked, worst_rel: worst }
}
