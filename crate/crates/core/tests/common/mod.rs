#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rnntrack::sparse::{AtomInfo, Dictionary};

pub fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
    let (a, b) = (x[0], x[1]);
    let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
    let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
    (f, g)
}

/// Random orthonormal basis by Gram–Schmidt.
pub fn orthonormal(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(p, q)| p * q).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    basis
}

pub fn dictionary(atoms: &[Vec<f64>]) -> Dictionary {
    let mut dict = Dictionary::new(atoms[0].len()).unwrap();
    for (j, a) in atoms.iter().enumerate() {
        dict.push(a, AtomInfo { frame: j, position: 0, seed: false }).unwrap();
    }
    dict
}

/// Random uniform atoms, target and sparsity weight.
pub fn random_instance(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> (Dictionary, Vec<f64>, f64) {
    let atoms: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    (dictionary(&atoms), y, rng.random_range(0.001..0.2))
}

/// Largest KKT violation of `beta` for the non-negative lasso: active atoms
/// must have residual correlation exactly `λ`, inactive ones at most `λ`.
pub fn kkt_violation(dict: &Dictionary, y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let mut r = y.to_vec();
    for (j, &c) in beta.iter().enumerate() {
        for (ri, a) in r.iter_mut().zip(dict.atom(j)) {
            *ri -= c * a;
        }
    }
    beta.iter()
        .enumerate()
        .map(|(j, &c)| {
            let corr: f64 = dict.atom(j).iter().zip(&r).map(|(a, q)| a * q).sum();
            if c < 0.0 {
                f64::INFINITY
            } else if c > 0.0 {
                (corr - lambda).abs()
            } else {
                (corr - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Largest deviation from `max(0, aᵀy − λ)` on an orthonormal dictionary.
pub fn soft_threshold_gap(atoms: &[Vec<f64>], y: &[f64], lambda: f64, beta: &[f64]) -> f64 {
    atoms
        .iter()
        .zip(beta)
        .map(|(a, c)| {
            let corr: f64 = a.iter().zip(y).map(|(p, q)| p * q).sum();
            (c - (corr - lambda).max(0.0)).abs()
        })
        .fold(0.0, f64::max)
}
