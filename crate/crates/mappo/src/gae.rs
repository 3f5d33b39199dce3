//! Generalized advantage estimation.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("length mismatch: {rewards} rewards, {values} values, {dones} done flags")]
pub struct GaeLengthError {
    pub rewards: usize,
    pub values: usize,
    pub dones: usize,
}

/// Advantages and returns for one trajectory.
///
/// `dones[t]` marks that step `t` ended the episode, so neither the next
/// value nor later advantages leak across it. `bootstrap` is the value of
/// the state after the last step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), GaeLengthError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(GaeLengthError {
            rewards: n,
            values: values.len(),
            dones: dones.len(),
        });
    }
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
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_terminal_step() {
        let (a, r) = compute_gae(&[1.5], &[0.4], &[true], 9.0, 0.99, 0.95).unwrap();
        assert_eq!(a, vec![1.5 - 0.4]);
        assert_eq!(r, vec![1.5]);
    }

    #[test]
    fn monte_carlo_limit() {
        let rewards = [1.0, -2.0, 0.5, 3.0];
        let (a, _) = compute_gae(&rewards, &[0.0; 4], &[false; 4], 0.0, 0.9, 1.0).unwrap();
        for t in 0..4 {
            let expected: f64 = (t..4).map(|k| 0.9f64.powi((k - t) as i32) * rewards[k]).sum();
            assert!((a[t] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(compute_gae(&[1.0, 2.0], &[0.0], &[false, false], 0.0, 0.9, 0.9).is_err());
    }
}
