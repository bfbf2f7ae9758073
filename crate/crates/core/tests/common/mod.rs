#![allow(dead_code)]

use popmaml::nn::{self, Example, MlpParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random network with weights of unit scale, so curvature terms are
/// exercised instead of the near-linear regime around zero.
pub fn random_net(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize, out_dim: usize) -> MlpParams {
    let mut p = MlpParams::zeros(in_dim, hidden, out_dim).unwrap();
    for v in p.as_mut_slice() {
        *v = rng.gen_range(-1.0..1.0);
    }
    p
}

pub fn random_direction(rng: &mut ChaCha8Rng, like: &MlpParams) -> MlpParams {
    let mut v = like.zeros_like();
    for x in v.as_mut_slice() {
        *x = rng.gen_range(-1.0..1.0);
    }
    v
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, in_dim: usize, out_dim: usize) -> Vec<Example> {
    (0..n)
        .map(|_| {
            Example::new(
                (0..in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
        })
        .collect()
}

pub fn perturbed(p: &MlpParams, i: usize, delta: f64) -> MlpParams {
    let mut q = p.clone();
    q.as_mut_slice()[i] += delta;
    q
}

/// Central-difference gradient of `f` at `p`.
pub fn fd_gradient(p: &MlpParams, h: f64, f: impl Fn(&MlpParams) -> f64) -> Vec<f64> {
    (0..p.len())
        .map(|i| (f(&perturbed(p, i, h)) - f(&perturbed(p, i, -h))) / (2.0 * h))
        .collect()
}

/// `‖a - b‖₂ / max(‖b‖₂, floor)`.
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(floor)
}

pub fn hvp_by_differences(p: &MlpParams, batch: &[Example], v: &MlpParams, eps: f64) -> Vec<f64> {
    let mut plus = p.clone();
    plus.add_scaled(v, eps);
    let mut minus = p.clone();
    minus.add_scaled(v, -eps);
    let gp = nn::grad(&plus, batch).unwrap();
    let gm = nn::grad(&minus, batch).unwrap();
    gp.as_slice()
        .iter()
        .zip(gm.as_slice())
        .map(|(a, b)| (a - b) / (2.0 * eps))
        .collect()
}
