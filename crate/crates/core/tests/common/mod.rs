#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rkmpc::qp::BoxQp;

/// Random well-conditioned SPD box QP of dimension `n`.
pub fn random_box_qp(n: usize, seed: u64) -> BoxQp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
    let f = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let lower = DVector::from_fn(n, |_, _| rng.random_range(-1.5..0.0));
    let upper = DVector::from_fn(n, |i, _| lower[i] + rng.random_range(0.2..2.0));
    BoxQp::new(h, f, lower, upper)
}

/// Exhaustive active-set oracle: tries all `3^n` lower/upper/free patterns,
/// solves the free block from stationarity and keeps the best feasible point.
pub fn active_set_oracle(qp: &BoxQp) -> (DVector<f64>, f64) {
    let n = qp.dim();
    let objective = |z: &DVector<f64>| 0.5 * z.dot(&(&qp.h * z)) + qp.f.dot(z) + qp.constant;
    let mut best: Option<(DVector<f64>, f64)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut pattern = vec![0u8; n];
        let mut c = code;
        for p in pattern.iter_mut() {
            *p = (c % 3) as u8;
            c /= 3;
        }
        let mut z = DVector::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 2).collect();
        for i in 0..n {
            match pattern[i] {
                0 => z[i] = qp.lower[i],
                1 => z[i] = qp.upper[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| qp.h[(free[a], free[b])]);
            let rhs = DVector::from_fn(k, |a, _| {
                let i = free[a];
                -(qp.f[i]
                    + (0..n)
                        .filter(|j| pattern[*j] != 2)
                        .map(|j| qp.h[(i, j)] * z[j])
                        .sum::<f64>())
            });
            let Some(sol) = hff.lu().solve(&rhs) else { continue };
            for (a, &i) in free.iter().enumerate() {
                z[i] = sol[a];
            }
        }
        if (0..n).any(|i| z[i] < qp.lower[i] - 1e-12 || z[i] > qp.upper[i] + 1e-12) {
            continue;
        }
        let v = objective(&z);
        if best.as_ref().is_none_or(|(_, b)| v < *b) {
            best = Some((z, v));
        }
    }
    best.expect("the all-bounds pattern is always feasible")
}
