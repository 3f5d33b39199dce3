//! Recursive GAE against the double-sum definition and a closed form.

use proptest::prelude::*;
use tending_mappo::compute_gae;

/// `A_t = sum_k (g l)^(k-t) * prod_{j<k} (1 - done_j) * delta_k`, evaluated
/// term by term.
fn brute_force(r: &[f64], v: &[f64], d: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let value_after = |k: usize| if k + 1 < n { v[k + 1] } else { bootstrap };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for k in t..n {
                let alive: f64 = (t..k).map(|j| if d[j] { 0.0 } else { 1.0 }).product();
                if alive == 0.0 {
                    break;
                }
                let live_k = if d[k] { 0.0 } else { 1.0 };
                let delta = r[k] + gamma * value_after(k) * live_k - v[k];
                total += (gamma * lambda).powi((k - t) as i32) * delta;
            }
            total
        })
        .collect()
}

fn trajectory() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>, f64, f64, f64)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(prop::bool::weighted(0.1), n),
            -5.0f64..5.0,
            0.0f64..=1.0,
            0.0f64..=1.0,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn recursion_matches_double_sum((r, v, d, b, gamma, lambda) in trajectory()) {
        let (adv, ret) = compute_gae(&r, &v, &d, b, gamma, lambda).unwrap();
        let oracle = brute_force(&r, &v, &d, b, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((adv[t] - oracle[t]).abs() <= 1e-10, "t={t}: {} vs {}", adv[t], oracle[t]);
            prop_assert!((ret[t] - adv[t] - v[t]).abs() <= 1e-12);
        }
    }
}

#[test]
fn constant_stream_matches_geometric_series() {
    let (r, v, gamma, lambda) = (0.7, 2.5, 0.99, 0.95);
    let n = 200;
    let (adv, _) = compute_gae(&vec![r; n], &vec![v; n], &vec![false; n], v, gamma, lambda).unwrap();
    let delta = r + gamma * v - v;
    let gl: f64 = gamma * lambda;
    for (t, a) in adv.iter().enumerate() {
        let closed = delta * (1.0 - gl.powi((n - t) as i32)) / (1.0 - gl);
        assert!((a - closed).abs() <= 1e-8, "t={t}: {a} vs {closed}");
    }
}

#[test]
fn done_blocks_bootstrap() {
    let (adv, _) = compute_gae(&[1.0, 1.0], &[0.5, 0.5], &[true, false], 100.0, 0.9, 0.9).unwrap();
    assert!((adv[0] - 0.5).abs() < 1e-12);
    assert!((adv[1] - (1.0 + 90.0 - 0.5)).abs() < 1e-12);
}
