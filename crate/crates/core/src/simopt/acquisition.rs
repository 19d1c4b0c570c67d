//! Acquisition functions for minimization.
//!
//! All values are computed in the GP's standardized output units, so the
//! exploration offset does not depend on the scale of the objective.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::simopt::gp::GpModel;

/// LCB exploration weight.
pub const KAPPA: f64 = 2.0;
/// Improvement offset for EI and PI.
pub const XI_ACQ: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    Lcb,
    Ei,
    Pi,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 3] = [AcquisitionKind::Lcb, AcquisitionKind::Ei, AcquisitionKind::Pi];

    pub fn name(self) -> &'static str {
        match self {
            AcquisitionKind::Lcb => "lcb",
            AcquisitionKind::Ei => "ei",
            AcquisitionKind::Pi => "pi",
        }
    }

    /// Turns an acquisition value into a score where larger is better.
    pub fn utility(self, value: f64) -> f64 {
        match self {
            AcquisitionKind::Lcb => -value,
            AcquisitionKind::Ei | AcquisitionKind::Pi => value,
        }
    }
}

/// Acquisition from a standardized posterior `(mu, sigma)` and incumbent `best`.
pub fn acquisition_from_posterior(mu: f64, sigma: f64, kind: AcquisitionKind, best: f64) -> f64 {
    let improvement = best - mu - XI_ACQ;
    match kind {
        AcquisitionKind::Lcb => mu - KAPPA * sigma,
        AcquisitionKind::Ei if sigma <= 0.0 => improvement.max(0.0),
        AcquisitionKind::Pi if sigma <= 0.0 => {
            if improvement > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        AcquisitionKind::Ei => {
            let z = improvement / sigma;
            let n = std_normal();
            (improvement * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
        }
        AcquisitionKind::Pi => std_normal().cdf(improvement / sigma),
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Acquisition value at `x`; `best_y` is the incumbent in output units.
///
/// LCB is minimized, EI and PI are maximized; see [`AcquisitionKind::utility`].
pub fn acquisition(gp: &GpModel, x: &[f64], kind: AcquisitionKind, best_y: f64) -> f64 {
    let (mu, sigma) = gp.predict_standardized(x);
    acquisition_from_posterior(mu, sigma, kind, gp.standardize(best_y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simopt::gp::{GpHyper, GpModel};
    use proptest::prelude::*;

    #[test]
    fn degenerate_posterior() {
        assert_eq!(acquisition_from_posterior(0.3, 0.0, AcquisitionKind::Ei, 0.3), 0.0);
        assert_eq!(acquisition_from_posterior(0.3, 0.0, AcquisitionKind::Pi, 0.3), 0.0);
        assert_eq!(acquisition_from_posterior(0.3, 0.0, AcquisitionKind::Pi, 1.0), 1.0);
        assert_eq!(acquisition_from_posterior(0.3, 0.0, AcquisitionKind::Lcb, 1.0), 0.3);
    }

    #[test]
    fn at_training_point() {
        let x = vec![vec![0.1], vec![0.5], vec![0.9]];
        let y = [2.0, 1.0, 3.0];
        let hyper = GpHyper { signal_var: 1.0, length_scales: vec![0.3], noise_var: 1e-12 };
        let gp = GpModel::with_hyper(&x, &y, hyper).unwrap();
        let ei = acquisition(&gp, &[0.5], AcquisitionKind::Ei, 1.0);
        assert!(ei.abs() < 1e-6, "{ei}");
        let lcb = acquisition(&gp, &[0.5], AcquisitionKind::Lcb, 1.0);
        assert!((lcb - gp.standardize(1.0)).abs() < 1e-4);
    }

    #[test]
    fn ei_monotone_in_sigma_grid() {
        for mu in [-2.0, -0.5, 0.0, 0.4, 3.0] {
            let mut prev = 0.0;
            for k in 1..=200 {
                let ei = acquisition_from_posterior(mu, k as f64 * 0.02, AcquisitionKind::Ei, 0.0);
                assert!(ei >= prev, "mu {mu} sigma {}", k as f64 * 0.02);
                prev = ei;
            }
        }
    }

    proptest! {
        #[test]
        fn ei_non_negative(mu in -10.0..10.0f64, sigma in 0.0..5.0f64, best in -10.0..10.0f64) {
            prop_assert!(acquisition_from_posterior(mu, sigma, AcquisitionKind::Ei, best) >= 0.0);
        }

        #[test]
        fn pi_is_probability(mu in -10.0..10.0f64, sigma in 0.0..5.0f64, best in -10.0..10.0f64) {
            let p = acquisition_from_posterior(mu, sigma, AcquisitionKind::Pi, best);
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
