//! Generalized advantage estimation.

/// Advantages and returns for one contiguous segment.
///
/// `dones[t]` cuts both the bootstrap and the recursion after step `t`;
/// `bootstrap` is the value of the state following the last step.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64, bootstrap: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "gae inputs must have equal length");
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_recursion() {
        let (a, r) = gae(&[1.0, 1.0], &[0.0, 0.0], &[false, false], 0.99, 0.95, 0.0);
        assert!((a[1] - 1.0).abs() < 1e-15);
        assert!((a[0] - 1.9405).abs() < 1e-12);
        assert_eq!(a, r);
    }

    #[test]
    fn lambda_zero_is_td() {
        let rw = [0.5, -1.0, 2.0];
        let v = [0.1, 0.2, 0.3];
        let (a, _) = gae(&rw, &v, &[false; 3], 0.9, 0.0, 0.7);
        assert!((a[0] - (0.5 + 0.9 * 0.2 - 0.1)).abs() < 1e-15);
        assert!((a[2] - (2.0 + 0.9 * 0.7 - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn done_cuts_recursion() {
        let (a, _) = gae(&[1.0, 5.0, 7.0], &[0.3, 1.0, 2.0], &[true, false, false], 0.99, 0.95, 3.0);
        assert_eq!(a[0], 1.0 - 0.3);
    }
}
