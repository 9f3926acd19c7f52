//! Counter-based Gaussian deviates.
//!
//! Every draw is a pure function of `(base_seed, stream, counter)`: the ChaCha8
//! keystream is seeded from `base_seed`, the stream id selects an independent
//! keystream, and the counter addresses a fixed 4-word slot inside it. Reading
//! a stream sequentially therefore reproduces random access exactly, which is
//! what lets per-sample Brownian paths be replayed in any order or thread.

use crate::spectral::Point;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// 32-bit words of keystream consumed per Gaussian pair.
const WORDS_PER_DRAW: u128 = 4;

/// Stream ids at or above this offset are reserved for initial-condition
/// generation so they never collide with per-sample Brownian streams.
pub(crate) const INITIAL_CONDITION_STREAM: u64 = 1 << 63;

/// Sequential reader over one keystream.
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(base_seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Positions the reader at `counter`, so the next call to
    /// [`NoiseStream::next_pair`] returns draw number `counter`.
    pub fn seek(&mut self, counter: u64) {
        self.rng.set_word_pos(counter as u128 * WORDS_PER_DRAW);
    }

    /// Two independent standard normal deviates (Box-Muller).
    pub fn next_pair(&mut self) -> Point {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        box_muller(a, b)
    }
}

fn box_muller(a: u64, b: u64) -> Point {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    // u1 in (0, 1] keeps the logarithm finite.
    let u1 = ((a >> 11) as f64 + 1.0) * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    Point::new(r * c, r * s)
}

/// Standard 2D normal deviate for step `step_index` of sample `sample_index`.
pub fn brownian_increment(base_seed: u64, sample_index: u64, step_index: u64) -> Point {
    let mut stream = NoiseStream::new(base_seed, sample_index);
    stream.seek(step_index);
    stream.next_pair()
}

/// The first `n_steps` standard normal pairs of one sample's Brownian path.
pub fn brownian_path(base_seed: u64, sample_index: u64, n_steps: usize) -> Vec<Point> {
    let mut stream = NoiseStream::new(base_seed, sample_index);
    (0..n_steps).map(|_| stream.next_pair()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_triple_is_reproducible() {
        let a = brownian_increment(7, 3, 11);
        let b = brownian_increment(7, 3, 11);
        assert_eq!(a, b);
        assert_ne!(a, brownian_increment(7, 3, 12));
        assert_ne!(a, brownian_increment(7, 4, 11));
        assert_ne!(a, brownian_increment(8, 3, 11));
    }

    #[test]
    fn sequential_path_matches_random_access() {
        let path = brownian_path(42, 9, 50);
        for (k, xi) in path.iter().enumerate() {
            assert_eq!(*xi, brownian_increment(42, 9, k as u64));
        }
    }

    #[test]
    fn moments_of_a_million_draws() {
        let n = 1_000_000usize;
        // half the draws come from each of two streams
        let mut stream = NoiseStream::new(2024, 0);
        let (mut s1, mut s2) = ([0.0f64; 2], [0.0f64; 2]);
        for _ in 0..n / 2 {
            let xi = stream.next_pair();
            for c in 0..2 {
                s1[c] += xi[c];
                s2[c] += xi[c] * xi[c];
            }
        }
        let mut other = NoiseStream::new(2024, 1);
        for _ in 0..n / 2 {
            let xi = other.next_pair();
            for c in 0..2 {
                s1[c] += xi[c];
                s2[c] += xi[c] * xi[c];
            }
        }
        for c in 0..2 {
            let mean = s1[c] / n as f64;
            let var = s2[c] / n as f64 - mean * mean;
            assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
            assert!((var - 1.0).abs() <= 0.01, "variance {var}");
        }
    }

    #[test]
    fn coordinates_and_streams_are_uncorrelated() {
        let n = 100_000usize;
        let mut a = NoiseStream::new(5, 10);
        let mut b = NoiseStream::new(5, 11);
        let (mut sab, mut sxy) = (0.0, 0.0);
        for _ in 0..n {
            let xa = a.next_pair();
            let xb = b.next_pair();
            sab += xa[0] * xb[0];
            sxy += xa[0] * xa[1];
        }
        assert!((sab / n as f64).abs() <= 0.02);
        assert!((sxy / n as f64).abs() <= 0.02);
    }
}
