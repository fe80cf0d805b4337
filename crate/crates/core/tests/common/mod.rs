//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rapid_poisson::expansions::hk_derivatives;
use rapid_poisson::markov_env::CtmcModel;

pub fn two_state(a: f64, b: f64, f1: f64, f2: f64) -> CtmcModel {
    CtmcModel::from_rows(&[vec![-a, a], vec![b, -b]], vec![f1, f2], 0).unwrap()
}

/// The running example: symmetric switching at rate 1 between rates 0 and 2.
pub fn example_model() -> CtmcModel {
    two_state(1.0, 1.0, 0.0, 2.0)
}

/// 2ab(f₁ − f₂)²/(a + b)³.
pub fn two_state_sigma2(a: f64, b: f64, f1: f64, f2: f64) -> f64 {
    2.0 * a * b * (f1 - f2).powi(2) / (a + b).powi(3)
}

/// Random irreducible model with `n` states: a directed ring guarantees strong
/// connectivity and further edges are added at random. Rates lie in [0, 10]
/// with at least one positive.
pub fn random_model(n: usize, seed: u64) -> CtmcModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = vec![vec![0.0; n]; n];
    if n > 1 {
        for i in 0..n {
            rows[i][(i + 1) % n] = rng.random_range(0.1..5.0);
            for j in 0..n {
                if j != i && j != (i + 1) % n && rng.random_bool(0.3) {
                    rows[i][j] = rng.random_range(0.1..5.0);
                }
            }
        }
        for (i, row) in rows.iter_mut().enumerate() {
            let total: f64 = row.iter().sum();
            row[i] = -total;
        }
    }
    let mut rates: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    if n > 1 && rng.random_bool(0.2) {
        rates[0] = 0.0;
    }
    if rates.iter().all(|&r| r == 0.0) {
        rates[n - 1] = 1.0;
    }
    let x0 = rng.random_range(0..n);
    CtmcModel::from_rows(&rows, rates, x0).unwrap()
}

/// Largest residual of an n×n generator applied from the left and right.
pub fn left_residual(model: &CtmcModel, pi: &[f64]) -> f64 {
    let q = model.generator();
    (0..q.n())
        .map(|j| (0..q.n()).map(|i| pi[i] * q.rate(i, j)).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

pub fn right_residual(model: &CtmcModel, g: &[f64], rhs: &[f64]) -> f64 {
    let q = model.generator();
    (0..q.n())
        .map(|i| ((0..q.n()).map(|j| q.rate(i, j) * g[j]).sum::<f64>() - rhs[i]).abs())
        .fold(0.0, f64::max)
}

/// Worst error of the analytic h_k derivatives against Richardson-extrapolated
/// central differences of the next-lower analytic derivative.
///
/// Each derivative is a polynomial in k/y times h, and crosses zero; the error
/// is measured relative to h times the sum of the absolute polynomial terms,
/// the natural magnitude of the quantity being computed.
pub fn hk_fd_error(k: u32, y: f64) -> f64 {
    let d = hk_derivatives(k, y);
    let kf = k as f64;
    let (a, b, c) = (
        kf / y,
        kf * (kf - 1.0) / (y * y),
        kf * (kf - 1.0) * (kf - 2.0) / (y * y * y),
    );
    let scales = [
        d.h * (a + 1.0),
        d.h * (1.0 + 2.0 * a + b),
        d.h * (c.abs() + 3.0 * b + 3.0 * a + 1.0),
    ];
    let analytic = [d.h1, d.h2, d.h3];
    let lower = |order: usize, x: f64| {
        let e = hk_derivatives(k, x);
        [e.h, e.h1, e.h2][order]
    };
    // h varies on the scale 1 / |d ln h / dy| = 1 / |k/y − 1|, or √k/y near the mode
    let step = 1e-3 / ((a - 1.0).abs() + (kf.sqrt() + 1.0) / y);
    let central = |order: usize, s: f64| (lower(order, y + s) - lower(order, y - s)) / (2.0 * s);
    (0..3)
        .map(|order| {
            let fd = (4.0 * central(order, step / 2.0) - central(order, step)) / 3.0;
            (fd - analytic[order]).abs() / scales[order]
        })
        .fold(0.0, f64::max)
}

/// 100 log-spaced points in [0.1, 100].
pub fn hk_grid() -> Vec<f64> {
    (0..100)
        .map(|i| 0.1 * 1000f64.powf(i as f64 / 99.0))
        .collect()
}
