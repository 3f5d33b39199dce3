//! Parameter initializers.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// A `rows x cols` matrix with orthonormal rows or columns (whichever is
/// fewer), scaled by `gain`.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Tensor {
    let (long, short) = (rows.max(cols), rows.min(cols));
    // `short` vectors of length `long`, orthonormalized in turn.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut out = Tensor::zeros(rows, cols);
    for (s, b) in basis.iter().enumerate() {
        for (l, &x) in b.iter().enumerate() {
            let (r, c) = if rows >= cols { (l, s) } else { (s, l) };
            out.set(r, c, gain * x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matmul;
    use rand::SeedableRng;

    #[test]
    fn columns_are_orthonormal() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        for (r, c) in [(8, 3), (3, 8), (5, 5)] {
            let w = orthogonal(r, c, 1.0, &mut rng);
            let gram = if r >= c {
                matmul(&w.transpose(), &w).unwrap()
            } else {
                matmul(&w, &w.transpose()).unwrap()
            };
            assert!(gram.max_abs_diff(&Tensor::identity(r.min(c))) < 1e-12);
        }
    }

    #[test]
    fn gain_scales() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        let w = orthogonal(4, 4, 0.01, &mut rng);
        let gram = matmul(&w.transpose(), &w).unwrap();
        assert!((gram.get(0, 0) - 1e-4).abs() < 1e-15);
    }
}
