//! Layer outputs against independent straight-line implementations.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tending_nn::{Graph, Gru, Linear, MultiHeadAttention, ParamStore, Tensor};

fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn encode_matches_naive_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let enc = Linear::new(&mut store, "enc", 25, 64, true, 1.0, &mut rng);
    store.set_value(enc.bias.unwrap(), random(&mut rng, 1, 64)).unwrap();
    let o = random(&mut rng, 7, 25);
    let mut g = Graph::new();
    let x = g.input(o.clone());
    let e = enc.forward(&mut g, &store, x).unwrap();
    let mut expected = naive_matmul(&o, store.value(enc.weight));
    for r in 0..7 {
        for c in 0..64 {
            expected.set(r, c, expected.get(r, c) + store.value(enc.bias.unwrap()).get(0, c));
        }
    }
    assert!(g.value(e).max_abs_diff(&expected) < 1e-12);
}

#[test]
fn qkv_identity_and_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "att", 4, 3, 4, &mut rng);
    let e_val = random(&mut rng, 3, 4);
    let mut g = Graph::new();
    let e = g.input(e_val.clone());
    let (q, k, v) = mha.qkv(&mut g, &store, e).unwrap();
    for (node, w) in [(q, mha.w_q), (k, mha.w_k), (v, mha.w_v)] {
        assert!(g.value(node).max_abs_diff(&naive_matmul(&e_val, store.value(w))) < 1e-12);
    }
    for w in [mha.w_q, mha.w_k, mha.w_v] {
        store.set_value(w, Tensor::identity(4)).unwrap();
    }
    let mut g = Graph::new();
    let e = g.input(e_val.clone());
    let (q, k, v) = mha.qkv(&mut g, &store, e).unwrap();
    for node in [q, k, v] {
        assert_eq!(g.value(node), &e_val);
    }
    let z = g.input(Tensor::zeros(3, 4));
    let (q, k, v) = mha.qkv(&mut g, &store, z).unwrap();
    for node in [q, k, v] {
        assert!(g.value(node).data().iter().all(|&x| x == 0.0));
    }
}

/// Straight-line GRU step for a single row.
fn gru_oracle(x: &[f64], h: &[f64], w_ih: &Tensor, w_hh: &Tensor, b_ih: &[f64], b_hh: &[f64]) -> Vec<f64> {
    let hd = h.len();
    let dot_col = |v: &[f64], w: &Tensor, col: usize| v.iter().enumerate().map(|(i, a)| a * w.get(i, col)).sum::<f64>();
    let mut out = vec![0.0; hd];
    for j in 0..hd {
        let r = sigmoid(dot_col(x, w_ih, j) + b_ih[j] + dot_col(h, w_hh, j) + b_hh[j]);
        let z = sigmoid(dot_col(x, w_ih, hd + j) + b_ih[hd + j] + dot_col(h, w_hh, hd + j) + b_hh[hd + j]);
        let n = (dot_col(x, w_ih, 2 * hd + j) + b_ih[2 * hd + j] + r * (dot_col(h, w_hh, 2 * hd + j) + b_hh[2 * hd + j])).tanh();
        out[j] = (1.0 - z) * n + z * h[j];
    }
    out
}

#[test]
fn gru_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let gru = Gru::new(&mut store, "gru", 5, 6, &mut rng);
    store.set_value(gru.b_ih, random(&mut rng, 1, 18)).unwrap();
    store.set_value(gru.b_hh, random(&mut rng, 1, 18)).unwrap();
    let x = random(&mut rng, 4, 5);
    let h = random(&mut rng, 4, 6);
    let mut g = Graph::new();
    let (xn, hn) = (g.input(x.clone()), g.input(h.clone()));
    let h1 = gru.step(&mut g, &store, xn, hn).unwrap();
    for r in 0..4 {
        let expected = gru_oracle(
            x.row(r),
            h.row(r),
            store.value(gru.w_ih),
            store.value(gru.w_hh),
            store.value(gru.b_ih).data(),
            store.value(gru.b_hh).data(),
        );
        for (a, b) in g.value(h1).row(r).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn identity_attention(dim: usize) -> (ParamStore, MultiHeadAttention) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "att", dim, 1, dim, &mut rng);
    for id in mha.params() {
        store.set_value(id, Tensor::identity(dim)).unwrap();
    }
    (store, mha)
}

#[test]
fn two_agent_hand_case() {
    let (store, mha) = identity_attention(2);
    let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.5, 2.0]]).unwrap();
    let mut g = Graph::new();
    let en = g.input(e);
    let out = mha.forward(&mut g, &store, en, 2).unwrap();
    // Scores q_i . k_j / sqrt(2): row 0 -> [1, 0.5]/sqrt2, row 1 -> [0.5, 4.25]/sqrt2.
    let s = 2f64.sqrt();
    let softmax2 = |a: f64, b: f64| {
        let (ea, eb) = (a.exp(), b.exp());
        [ea / (ea + eb), eb / (ea + eb)]
    };
    let w0 = softmax2(1.0 / s, 0.5 / s);
    let w1 = softmax2(0.5 / s, 4.25 / s);
    let weights = g.value(out.weights[0]);
    assert!((weights.get(0, 0) - w0[0]).abs() < 1e-10);
    assert!((weights.get(1, 1) - w1[1]).abs() < 1e-10);
    let expected = [
        w0[0] * 1.0 + w0[1] * 0.5,
        w0[1] * 2.0,
        w1[0] * 1.0 + w1[1] * 0.5,
        w1[1] * 2.0,
    ];
    for (a, b) in g.value(out.output).data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn identical_keys_give_uniform_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "att", 4, 3, 4, &mut rng);
    let mut g = Graph::new();
    let q = g.input(random(&mut rng, 3, 4));
    let row = random(&mut rng, 1, 4);
    let k = g.input(Tensor::from_rows(&vec![row.data().to_vec(); 3]).unwrap());
    let v = g.input(random(&mut rng, 3, 4));
    let out = mha.attend(&mut g, &store, q, k, v, 3).unwrap();
    for w in out.weights {
        for &x in g.value(w).data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}

#[test]
fn row_count_mismatch_is_shape_error() {
    let (store, mha) = identity_attention(2);
    let mut g = Graph::new();
    let q = g.input(Tensor::zeros(2, 2));
    let k = g.input(Tensor::zeros(3, 2));
    assert!(mha.attend(&mut g, &store, q, k, k, 2).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..8, scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, rows, cols).map(|v| v * scale);
        let mut g = Graph::new();
        let xn = g.input(x);
        let y = g.softmax_rows(xn);
        let shifted = g.add_scalar(xn, rng.random_range(-100.0..100.0));
        let ys = g.softmax_rows(shifted);
        for r in 0..rows {
            let row = g.value(y).row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
        prop_assert!(g.value(y).max_abs_diff(g.value(ys)) <= 1e-12);
    }

    #[test]
    fn attention_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "att", 6, 3, 4, &mut rng);
        let e = random(&mut rng, n, 6);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = Tensor::from_rows(&perm.iter().map(|&p| e.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
        let mut g = Graph::new();
        let a = g.input(e);
        let b = g.input(permuted);
        let out_a = mha.forward(&mut g, &store, a, n).unwrap();
        let out_b = mha.forward(&mut g, &store, b, n).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for (x, y) in g.value(out_b.output).row(i).iter().zip(g.value(out_a.output).row(p)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
        for w in &out_a.weights {
            for r in 0..n {
                prop_assert!((g.value(*w).row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn forward_backward_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "gru", 3, 5, &mut rng);
        let x = random(&mut rng, 8, 3);
        let run = || {
            let mut g = Graph::new();
            let xn = g.input(x.clone());
            let h0 = g.input(Tensor::zeros(2, 5));
            let (out, _) = gru.sequence(&mut g, &store, xn, h0, 4).unwrap();
            let sq = g.square(out);
            let loss = g.sum_all(sq);
            g.backward(loss).unwrap();
            let mut s = store.clone();
            g.accumulate_param_grads(&mut s);
            (g.value(loss).item(), s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert_eq!(sa, sb);
    }
}
