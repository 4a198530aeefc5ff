#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sopabn_core::linear::{LinearFamily, LinearModel, LinearModelParams, LinearPolicyReward};
use sopabn_core::{Dims, ResidualLaw};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = uniform_matrix(rng, n, n, 1.0);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

pub fn random_diagonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.2..2.0)))
}

pub fn random_instance_with(
    rng: &mut ChaCha8Rng,
    dims: Dims,
    cov: DMatrix<f64>,
) -> (LinearModelParams, LinearPolicyReward) {
    let (ds, da, h) = (dims.state, dims.action, dims.horizon);
    let params = LinearModelParams {
        dims,
        mu_s: (0..h).map(|_| uniform_vector(rng, ds, 2.0)).collect(),
        mu_a: (0..h - 1).map(|_| uniform_vector(rng, da, 2.0)).collect(),
        beta_s: (0..h - 1).map(|_| uniform_matrix(rng, ds, ds, 0.8)).collect(),
        beta_a: (0..h - 1).map(|_| uniform_matrix(rng, da, ds, 0.8)).collect(),
        law: ResidualLaw::new(cov).unwrap(),
    };
    let policy = LinearPolicyReward {
        theta: (0..h - 1).map(|_| uniform_matrix(rng, ds, da, 0.8)).collect(),
        m: (0..h).map(|_| rng.random_range(-1.0..1.0)).collect(),
        b: (0..h).map(|_| uniform_vector(rng, da, 1.0)).collect(),
        c: (0..h).map(|_| uniform_vector(rng, ds, 1.0)).collect(),
    };
    (params, policy)
}

pub fn random_instance(rng: &mut ChaCha8Rng, dims: Dims) -> (LinearModelParams, LinearPolicyReward) {
    let n = dims.n_inputs();
    let cov = random_spd(rng, n);
    random_instance_with(rng, dims, cov)
}

pub fn random_model(seed: u64, dims: Dims) -> LinearModel {
    let (p, q) = random_instance(&mut rng(seed), dims);
    LinearModel::new(p, q).unwrap()
}

pub fn random_family(seed: u64, dims: Dims) -> LinearFamily {
    let (p, q) = random_instance(&mut rng(seed), dims);
    LinearFamily::new(p, q).unwrap()
}

pub fn dims(state: usize, action: usize, horizon: usize) -> Dims {
    Dims { state, action, horizon }
}

/// Dims whose input count is `n`, using one state component per period when possible.
pub fn dims_for_inputs(n: usize) -> Dims {
    match n {
        2 => dims(1, 1, 2),
        3 => dims(1, 1, 3),
        4 => dims(2, 1, 2),
        5 => dims(1, 1, 5),
        6 => dims(3, 1, 2),
        _ => dims(1, 1, n),
    }
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
