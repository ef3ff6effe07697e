use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{ParamId, ParamStore, Tensor};

/// Seeded parameter initializer that registers tensors under a name prefix.
pub struct Init<'s> {
    store: &'s mut ParamStore,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl<'s> Init<'s> {
    pub fn new(store: &'s mut ParamStore, seed: u64) -> Self {
        Self { store, rng: ChaCha8Rng::seed_from_u64(seed), prefix: Vec::new() }
    }

    /// Runs `f` with `name` pushed onto the parameter-name prefix.
    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    pub fn add(&mut self, name: &str, t: Tensor) -> ParamId {
        let n = self.full_name(name);
        self.store.add(n, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape.to_vec(), value))
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }
}
