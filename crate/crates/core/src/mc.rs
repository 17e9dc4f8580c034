//! Seeded, batch-parallel Monte Carlo plumbing.
//!
//! Samples are split into fixed-size batches. Batch `j` of stream `s` draws
//! from its own ChaCha8 generator seeded by hashing `(seed, s, j)`, so the
//! numbers drawn never depend on the thread count; per-batch accumulators are
//! merged in batch order, which makes results bit-identical across runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Samples per batch.
pub const BATCH_SIZE: usize = 4096;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from a master seed and two indices.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}

/// Running mean and variance (Welford) with exact pairwise merging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Welford {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Runs `f(rng, count)` over the batch plan for `samples` draws and returns the
/// per-batch outputs in batch order.
pub fn batches<T, F>(samples: usize, seed: u64, stream: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let n_batches = samples.div_ceil(BATCH_SIZE);
    (0..n_batches)
        .into_par_iter()
        .map(|j| {
            let count = BATCH_SIZE.min(samples - j * BATCH_SIZE);
            let mut rng = rng_for(seed, stream, j as u64);
            f(&mut rng, count)
        })
        .collect()
}

/// Mean and standard error of `f` over `samples` seeded draws.
pub fn mean_of<F>(samples: usize, seed: u64, stream: u64, f: F) -> Welford
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let parts = batches(samples, seed, stream, |rng, count| {
        let mut w = Welford::default();
        for _ in 0..count {
            w.push(f(rng));
        }
        w
    });
    let mut total = Welford::default();
    for p in &parts {
        total.merge(p);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut all = Welford::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = Welford::default();
        let mut b = Welford::default();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert_eq!(a.count, all.count);
        assert!((a.mean - all.mean).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-9);
    }

    #[test]
    fn deterministic_and_stream_separated() {
        let f = |rng: &mut ChaCha8Rng| rng.random::<f64>();
        let a = mean_of(10_000, 3, 0, f);
        let b = mean_of(10_000, 3, 0, f);
        let c = mean_of(10_000, 3, 1, f);
        assert_eq!(a, b);
        assert_ne!(a.mean, c.mean);
        assert!((a.mean - 0.5).abs() < 4.0 * a.std_error());
    }

    #[test]
    fn thread_count_does_not_matter() {
        let f = |rng: &mut ChaCha8Rng| rng.random::<f64>().ln();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| mean_of(20_000, 9, 2, f));
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| mean_of(20_000, 9, 2, f));
        assert_eq!(one, four);
    }
}
