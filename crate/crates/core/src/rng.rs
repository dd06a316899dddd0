//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, key...)`, so results do not
//! depend on evaluation order or thread count. The mixer is SplitMix64's
//! finalizer applied to a running fold of the key words.

use core::f64::consts::TAU;

#[allow(unused_imports)]
use num_traits::Float;

/// Stream tags keep draws for different purposes disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ForwardNoise = 1,
    ChainInit = 2,
    ChainJitter = 3,
    Scene = 4,
    Texture = 5,
    Test = 99,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keyed generator; cheap to copy and derive children from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        Self {
            state: mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
        }
        .with(stream as u64)
    }

    /// Derive a child keyed by one more logical index.
    #[inline]
    pub fn with(self, key: u64) -> Self {
        Self {
            state: mix(self.state ^ mix(key.wrapping_add(0x6a09_e667_f3bc_c909))),
        }
    }

    #[inline]
    pub fn bits(self, counter: u64) -> u64 {
        mix(self.state.wrapping_add(counter.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn uniform(self, counter: u64) -> f64 {
        ((self.bits(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller on counters `2c` and `2c + 1`.
    #[inline]
    pub fn normal(self, counter: u64) -> f64 {
        let u1 = self.uniform(counter.wrapping_mul(2));
        let u2 = self.uniform(counter.wrapping_mul(2).wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_pure_functions_of_keys() {
        let a = CounterRng::new(7, Stream::Test).with(3).with(11);
        let b = CounterRng::new(7, Stream::Test).with(3).with(11);
        assert_eq!(a.normal(5).to_bits(), b.normal(5).to_bits());
        assert_ne!(a.bits(5), CounterRng::new(7, Stream::Test).with(11).with(3).bits(5));
        assert_ne!(a.bits(5), CounterRng::new(8, Stream::Test).with(3).with(11).bits(5));
    }

    #[test]
    fn normal_moments() {
        let rng = CounterRng::new(1, Stream::Test);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let x = rng.normal(i);
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn uniform_in_open_interval() {
        let rng = CounterRng::new(0, Stream::Test);
        for i in 0..10_000 {
            let u = rng.uniform(i);
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
