/// Counter-based uniform generator: the n-th draw depends only on
/// `(seed, n)`, so dropout masks are reproducible regardless of how many
/// other draws happened elsewhere.
#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Derives a seed from several stream coordinates (run seed, fold, epoch, ...).
    pub fn derive(parts: &[u64]) -> u64 {
        parts.iter().fold(0x9e37_79b9_7f4a_7c15, |acc, &p| splitmix64(acc ^ splitmix64(p)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter += 1;
        splitmix64(self.seed ^ splitmix64(c.wrapping_add(0x632b_e59b_d9b4_e019)))
    }

    /// Uniform on [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
