#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twintune::synthetic::AffineOracle;
use twintune::tuner::TunerHyperparams;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(lo..hi))
}

/// `B B^T + eps I` with `B` uniform in [-1, 1].
pub fn random_spd(r: &mut ChaCha8Rng, n: usize, eps: f64) -> DMatrix<f64> {
    let b = uniform_matrix(r, n, n, -1.0, 1.0);
    &b * b.transpose() + DMatrix::identity(n, n) * eps
}

/// Wide box so `c_k` stays at `c0`.
pub fn wide_hp(n: usize) -> TunerHyperparams {
    TunerHyperparams {
        theta_min: vec![1e-6; n],
        theta_max: vec![1e6; n],
        lambda_ut: 3.0 - n as f64,
        boundary_margin: 0.0,
        ..TunerHyperparams::default()
    }
}

/// Square, well-conditioned affine problem around `theta_star`.
pub fn affine_problem(seed: u64, n: usize, noise: f64) -> AffineOracle {
    let mut r = rng(seed);
    let m = DMatrix::identity(n, n) + uniform_matrix(&mut r, n, n, -0.3, 0.3);
    let theta_star = DVector::from_fn(n, |_, _| r.random_range(2.0..4.0));
    let mut o = AffineOracle::new(m, theta_star);
    o.twin_noise_std = noise;
    o.target_noise_std = noise;
    o
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
