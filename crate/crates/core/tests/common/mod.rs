#![allow(dead_code)]

use crossfusion::data::{FeatureBag, ScaleFeatures};
use crossfusion::tensor::{Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Projects `y` onto fixed random weights so every output element matters.
pub fn weighted_sum(g: &mut Graph<'_>, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let n = shape.iter().product();
    let w = g.input(Tensor::new(shape, rand_vec(&mut rng, n)).unwrap());
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

pub fn random_bag(d_in: usize, counts: [usize; 3], seed: u64) -> FeatureBag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales = counts.map(|n| {
        let side = (1..).find(|s| s * s >= n).unwrap() as i32;
        ScaleFeatures {
            features: (0..n * d_in).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            coords: (0..n as i32).map(|i| [i % side, i / side]).collect(),
        }
    });
    FeatureBag { d_in, scales }
}

/// Overwrites every parameter whose name starts with one of `prefixes`.
pub fn fill_params(store: &mut ParamStore, prefixes: &[&str], value: f64) {
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, name, _)| prefixes.iter().any(|p| name.starts_with(p)))
        .map(|(id, _, t)| (id, t.numel()))
        .collect();
    assert!(!ids.is_empty(), "no parameter matches {prefixes:?}");
    for (id, n) in ids {
        store.set_data(id, &vec![value; n]).unwrap();
    }
}

/// Replaces every parameter with small random values, biases and norms included.
pub fn randomize_params(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.iter().map(|(id, _, t)| (id, t.numel())).collect();
    for (id, n) in ids {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        store.set_data(id, &v).unwrap();
    }
}
