//! Random number sources.
//!
//! Model initialisation and shuffling use ChaCha8 from `rand_chacha`. The
//! synthetic data generator uses [`SplitMix64`] with Box-Muller normals: the
//! stream is a few lines of integer arithmetic, so the generated datasets can
//! be reproduced bit-for-bit outside Rust.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::numcore::Tensor;

pub fn chacha(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Tensor with i.i.d. `N(0, std²)` entries.
pub fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = if std == 0.0 {
        vec![0.0; n]
    } else {
        let dist = Normal::new(0.0, std).expect("finite std");
        (0..n).map(|_| dist.sample(rng)).collect()
    };
    Tensor::new(shape, data).expect("shape matches data")
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Generator keyed by a sequence of words; each word is absorbed by
    /// xoring it into the state and drawing once.
    pub fn keyed(words: &[u64]) -> Self {
        let mut g = Self::new(0);
        for &w in words {
            g.state ^= w;
            g.next_u64();
        }
        g
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `0..n` by 128-bit multiply-shift.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal by Box-Muller, one draw per two words.
    pub fn normal(&mut self) -> f64 {
        let scale = 1.0 / (1u64 << 53) as f64;
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * scale;
        let u2 = (self.next_u64() >> 11) as f64 * scale;
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
