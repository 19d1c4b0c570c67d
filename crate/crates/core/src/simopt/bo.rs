//! Sequential Bayesian optimization on a box.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::io::write_atomic;
use crate::simopt::acquisition::{acquisition, AcquisitionKind};
use crate::simopt::gp::{gp_fit, GpHyper};
use crate::simopt::optim::nelder_mead;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoConfig {
    pub n_evals: usize,
    /// Latin-hypercube points evaluated before the first GP fit.
    pub n_init: usize,
    /// Random candidates scored per acquisition maximization.
    pub n_candidates: usize,
    /// Best candidates refined locally.
    pub n_refine: usize,
    /// Random restarts of the hyperparameter fit.
    pub gp_restarts: usize,
    /// Fit the GP to `ln(objective)` instead of the raw values.
    pub log_objective: bool,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self { n_evals: 250, n_init: 20, n_candidates: 2048, n_refine: 8, gp_restarts: 8, log_objective: false }
    }
}

/// One objective evaluation as seen by the optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub diverged: bool,
}

impl Evaluation {
    pub fn ok(value: f64) -> Self {
        Self { value, diverged: false }
    }

    pub fn diverged() -> Self {
        Self { value: f64::NAN, diverged: true }
    }
}

/// One history line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoRecord {
    pub iter: usize,
    pub xi: Vec<f64>,
    pub objective: f64,
    /// `"lhs"` for the initial design, otherwise the acquisition used.
    pub acquisition_kind: String,
    pub incumbent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub history: Vec<BoRecord>,
}

impl BoResult {
    pub fn history_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.history {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_history(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.history_jsonl()?.as_bytes())
    }
}

/// `n` points in `[0,1]^d`, one per stratum along every axis.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, p) in perm.into_iter().enumerate() {
            pts[i][j] = (p as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    pts
}

/// Minimizes `f` over the box `[lower, upper]`.
///
/// Diverged evaluations are recorded at ten times the worst finite value seen
/// so far (1.0 if none has been seen yet).
pub fn bo_minimize<F, R>(mut f: F, lower: &[f64], upper: &[f64], cfg: &BoConfig, rng: &mut R) -> Result<BoResult>
where
    F: FnMut(&[f64]) -> Evaluation,
    R: Rng + ?Sized,
{
    let d = lower.len();
    if d == 0 || upper.len() != d || lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
        return Err(Error::InvalidParameter("bounds need lower < upper in every dimension".into()));
    }
    if cfg.n_init < 2 || cfg.n_evals < cfg.n_init {
        return Err(Error::InvalidParameter(format!(
            "need 2 <= n_init <= n_evals, got n_init {} n_evals {}",
            cfg.n_init, cfg.n_evals
        )));
    }
    let to_box = |u: &[f64]| -> Vec<f64> { (0..d).map(|i| lower[i] + u[i] * (upper[i] - lower[i])).collect() };

    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_evals);
    let mut ys: Vec<f64> = Vec::with_capacity(cfg.n_evals);
    let mut history = Vec::with_capacity(cfg.n_evals);
    let mut worst = f64::NEG_INFINITY;
    let mut incumbent = f64::INFINITY;
    let mut best_x = Vec::new();
    let mut warm: Option<GpHyper> = None;

    let mut record = |u: Vec<f64>, kind: &str, f: &mut F, xs: &mut Vec<Vec<f64>>, ys: &mut Vec<f64>| {
        let x = to_box(&u);
        let e = f(&x);
        let value = if e.diverged || !e.value.is_finite() {
            if worst.is_finite() {
                10.0 * worst
            } else {
                1.0
            }
        } else {
            worst = worst.max(e.value);
            e.value
        };
        if value < incumbent {
            incumbent = value;
            best_x = x.clone();
        }
        history.push(BoRecord { iter: history.len(), xi: x, objective: value, acquisition_kind: kind.into(), incumbent });
        xs.push(u);
        ys.push(value);
    };

    for u in latin_hypercube(cfg.n_init, d, rng) {
        record(u, "lhs", &mut f, &mut xs, &mut ys);
    }

    let unit_lo = vec![0.0; d];
    let unit_hi = vec![1.0; d];
    while xs.len() < cfg.n_evals {
        let targets: Vec<f64> = if cfg.log_objective {
            let floor = ys.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
            let floor = if floor.is_finite() { 1e-3 * floor } else { 1e-12 };
            ys.iter().map(|v| v.max(floor).ln()).collect()
        } else {
            ys.clone()
        };
        let best_t = targets.iter().copied().fold(f64::INFINITY, f64::min);
        let gp = gp_fit(&xs, &targets, cfg.gp_restarts, warm.as_ref(), rng)?;
        warm = Some(gp.hyper().clone());
        let kind = *AcquisitionKind::ALL.choose(rng).expect("non-empty");
        let score = |u: &[f64]| kind.utility(acquisition(&gp, u, kind, best_t));

        let mut cands: Vec<(Vec<f64>, f64)> = (0..cfg.n_candidates)
            .map(|_| {
                let u: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
                let s = score(&u);
                (u, s)
            })
            .collect();
        cands.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut chosen = cands[0].clone();
        for (u, _) in cands.iter().take(cfg.n_refine) {
            let (p, v) = nelder_mead(|p| -score(p), u, 0.05, &unit_lo, &unit_hi, 40 * (d + 1), 1e-10);
            if -v > chosen.1 {
                chosen = (p, -v);
            }
        }
        record(chosen.0, kind.name(), &mut f, &mut xs, &mut ys);
    }

    Ok(BoResult { best_x, best_value: incumbent, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn latin_hypercube_strata() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts = latin_hypercube(20, 3, &mut rng);
        for j in 0..3 {
            let mut bins: Vec<usize> = pts.iter().map(|p| (p[j] * 20.0).floor() as usize).collect();
            bins.sort();
            assert_eq!(bins, (0..20).collect::<Vec<_>>());
        }
    }

    #[test]
    fn history_length_and_incumbent() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let cfg = BoConfig { n_evals: 30, n_init: 10, n_candidates: 256, ..BoConfig::default() };
        let res = bo_minimize(
            |x| Evaluation::ok((x[0] - 0.2).powi(2) + (x[1] + 0.5).powi(2)),
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(res.history.len(), 30);
        for w in res.history.windows(2) {
            assert!(w[1].incumbent <= w[0].incumbent);
        }
        assert_eq!(res.history.last().unwrap().incumbent, res.best_value);
        assert!(res.history[..10].iter().all(|r| r.acquisition_kind == "lhs"));
        let line = res.history_jsonl().unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["iter", "xi", "objective", "acquisition_kind", "incumbent"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn diverged_points_get_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cfg = BoConfig { n_evals: 25, n_init: 20, n_candidates: 128, ..BoConfig::default() };
        let res = bo_minimize(
            |x| if x[0] > 0.8 { Evaluation::diverged() } else { Evaluation::ok(x[0]) },
            &[0.0],
            &[1.0],
            &cfg,
            &mut rng,
        )
        .unwrap();
        let mut worst = f64::NEG_INFINITY;
        for r in &res.history {
            if r.xi[0] > 0.8 {
                assert_eq!(r.objective, if worst.is_finite() { 10.0 * worst } else { 1.0 });
            } else {
                worst = worst.max(r.objective);
            }
        }
        assert!(res.best_x[0] < 0.1);
    }

    #[test]
    fn rejects_bad_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let cfg = BoConfig { n_evals: 5, ..BoConfig::default() };
        assert!(bo_minimize(|_| Evaluation::ok(0.0), &[0.0], &[1.0], &cfg, &mut rng).is_err());
        assert!(bo_minimize(|_| Evaluation::ok(0.0), &[1.0], &[0.0], &BoConfig::default(), &mut rng).is_err());
    }
}
