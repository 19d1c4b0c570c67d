//! Gaussian-process regression with a Matérn-5/2 ARD kernel.
//!
//! Inputs live in the unit cube and outputs are standardized before fitting.
//! Hyperparameters are fitted by maximizing the log marginal likelihood with
//! Nelder-Mead on log-parameters from several random starts.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simopt::optim::nelder_mead;

/// Largest diagonal jitter tried before giving up on a factorization.
pub const MAX_JITTER: f64 = 1e-4;

const LOG_LENGTH: (f64, f64) = (-4.6, 2.3); // ~[0.01, 10]
const LOG_SIGNAL: (f64, f64) = (-3.0, 3.0);
const LOG_NOISE: (f64, f64) = (-18.4, 0.0); // ~[1e-8, 1]

/// Kernel hyperparameters in standardized output units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub signal_var: f64,
    pub length_scales: Vec<f64>,
    pub noise_var: f64,
}

impl GpHyper {
    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_var.ln());
        v.push(self.noise_var.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        Self {
            length_scales: v[..d].iter().map(|x| x.exp()).collect(),
            signal_var: v[d].exp(),
            noise_var: v[d + 1].exp(),
        }
    }

    fn log_bounds(d: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![LOG_LENGTH.0; d];
        let mut hi = vec![LOG_LENGTH.1; d];
        lo.extend([LOG_SIGNAL.0, LOG_NOISE.0]);
        hi.extend([LOG_SIGNAL.1, LOG_NOISE.1]);
        (lo, hi)
    }
}

/// Matérn-5/2 covariance between two points.
pub fn matern52(a: &[f64], b: &[f64], hyper: &GpHyper) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(&hyper.length_scales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    let s5r = (5.0 * r2).sqrt();
    hyper.signal_var * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
}

fn kernel_matrix(x: &[Vec<f64>], hyper: &GpHyper) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = matern52(&x[i], &x[j], hyper);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Factorizes `K + (noise + jitter) I`, growing the jitter from zero up to
/// [`MAX_JITTER`].
fn factorize(k: &DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = 0.0;
    loop {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += noise + jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::KernelNotPositiveDefinite(MAX_JITTER));
        }
    }
}

fn neg_log_likelihood(x: &[Vec<f64>], y: &DVector<f64>, hyper: &GpHyper) -> f64 {
    let k = kernel_matrix(x, hyper);
    let Ok((chol, _)) = factorize(&k, hyper.noise_var) else {
        return f64::INFINITY;
    };
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    0.5 * y.dot(&alpha) + log_det + 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Fitted Gaussian process.
#[derive(Clone, Debug)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    hyper: GpHyper,
    jitter: f64,
    lower: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on `(x, y)`.
    pub fn with_hyper(x: &[Vec<f64>], y: &[f64], hyper: GpHyper) -> Result<Self> {
        let (y_mean, y_scale, ys) = standardize(y);
        let k = kernel_matrix(x, &hyper);
        let (chol, jitter) = factorize(&k, hyper.noise_var)?;
        let alpha = chol.solve(&ys);
        Ok(Self { x: x.to_vec(), y_mean, y_scale, hyper, jitter, lower: chol.unpack(), alpha })
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.hyper.length_scales.len()
    }

    /// Maps an output value into the standardized units the GP was fitted in.
    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    /// Latent mean and standard deviation in standardized units.
    pub fn predict_standardized(&self, x: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| matern52(xi, x, &self.hyper)));
        let mean = ks.dot(&self.alpha);
        let v = self.lower.solve_lower_triangular(&ks).expect("factor has a non-zero diagonal");
        let var = (self.hyper.signal_var - v.norm_squared()).max(0.0);
        (mean, var.sqrt())
    }

    /// Latent mean and standard deviation in the units of the training outputs.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, s) = self.predict_standardized(x);
        (self.y_mean + self.y_scale * m, self.y_scale * s)
    }

    /// Prior standard deviation in output units.
    pub fn prior_std(&self) -> f64 {
        self.y_scale * self.hyper.signal_var.sqrt()
    }
}

fn standardize(y: &[f64]) -> (f64, f64, DVector<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    (mean, scale, DVector::from_iterator(y.len(), y.iter().map(|v| (v - mean) / scale)))
}

/// Fits hyperparameters by maximum marginal likelihood and conditions on the data.
///
/// `restarts` random log-space starts are refined with Nelder-Mead; `warm`,
/// when given, replaces the first random start.
pub fn gp_fit<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    y: &[f64],
    restarts: usize,
    warm: Option<&GpHyper>,
    rng: &mut R,
) -> Result<GpModel> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::InvalidParameter(format!("gp_fit needs >= 2 matching points, got {} x and {} y", x.len(), y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("gp_fit outputs must be finite".into()));
    }
    let d = x[0].len();
    let (_, _, ys) = standardize(y);
    let (lo, hi) = GpHyper::log_bounds(d);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in 0..restarts.max(1) {
        let start: Vec<f64> = match (r, warm) {
            (0, Some(h)) if h.length_scales.len() == d => h.to_log(),
            _ => lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..*b)).collect(),
        };
        let nll = |p: &[f64]| neg_log_likelihood(x, &ys, &GpHyper::from_log(p));
        let (p, v) = nelder_mead(nll, &start, 0.1, &lo, &hi, 150 * (d + 2), 1e-8);
        if best.as_ref().map_or(true, |(_, b)| v < *b) {
            best = Some((p, v));
        }
    }
    let (p, v) = best.expect("at least one restart");
    if !v.is_finite() {
        return Err(Error::KernelNotPositiveDefinite(MAX_JITTER));
    }
    GpModel::with_hyper(x, y, GpHyper::from_log(&p))
}
