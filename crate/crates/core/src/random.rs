//! Seedable random sub-streams.
//!
//! Every consumer (student noise, teacher noise, sampler, initializer)
//! derives its own stream from the run seed, a consumer name and an index
//! (usually the training step). Toggling one consumer therefore never
//! shifts the draws seen by any other.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Gaussian { sigma: f64 },
    Bernoulli { p: f64 },
    UniformInt { low: i64, high: i64 },
}

#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    key: u64,
    rng: ChaCha8Rng,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self::with_key(seed, 0)
    }

    fn with_key(seed: u64, key: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(key);
        RandomSource { seed, key, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent sub-stream keyed by `name` and `index`. The result depends
    /// only on this source's identity, never on how much it has been drawn.
    pub fn fork(&self, name: &str, index: u64) -> RandomSource {
        let key = splitmix(splitmix(self.key ^ fnv1a(name)) ^ index);
        Self::with_key(self.seed, key)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in the closed range `[low, high]`.
    pub fn uniform_int(&mut self, low: i64, high: i64) -> i64 {
        self.rng.random_range(low..=high)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        items.shuffle(&mut self.rng);
    }

    pub fn draw_noise<T: Scalar>(&mut self, kind: NoiseKind, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match kind {
            NoiseKind::Gaussian { sigma } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "gaussian sigma must be finite and >= 0, got {sigma}"
                    )));
                }
                (0..n)
                    .map(|_| T::from_f64_lossy(sigma * self.standard_normal()))
                    .collect()
            }
            NoiseKind::Bernoulli { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidParameter(format!(
                        "bernoulli p must lie in [0, 1], got {p}"
                    )));
                }
                (0..n)
                    .map(|_| if self.bernoulli(p) { T::one() } else { T::zero() })
                    .collect()
            }
            NoiseKind::UniformInt { low, high } => {
                if low > high {
                    return Err(Error::InvalidParameter(format!(
                        "uniform-int range is empty: [{low}, {high}]"
                    )));
                }
                (0..n)
                    .map(|_| T::from_f64_lossy(self.uniform_int(low, high) as f64))
                    .collect()
            }
        };
        Tensor::new(shape.to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_draws() {
        let mut src = RandomSource::new(1);
        let z: Tensor<f64> = src
            .draw_noise(NoiseKind::Gaussian { sigma: 0.0 }, &[3, 4])
            .unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
        let ones: Tensor<f64> = src.draw_noise(NoiseKind::Bernoulli { p: 1.0 }, &[5]).unwrap();
        assert!(ones.data().iter().all(|&x| x == 1.0));
        let zeros: Tensor<f64> = src.draw_noise(NoiseKind::Bernoulli { p: 0.0 }, &[5]).unwrap();
        assert!(zeros.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut src = RandomSource::new(1);
        assert!(src
            .draw_noise::<f64>(NoiseKind::Gaussian { sigma: -1.0 }, &[1])
            .is_err());
        assert!(src
            .draw_noise::<f64>(NoiseKind::Bernoulli { p: 1.5 }, &[1])
            .is_err());
        assert!(src
            .draw_noise::<f64>(NoiseKind::UniformInt { low: 3, high: 2 }, &[1])
            .is_err());
    }

    #[test]
    fn gaussian_sample_stdev() {
        let mut src = RandomSource::new(7).fork("noise", 0);
        let t: Tensor<f64> = src
            .draw_noise(NoiseKind::Gaussian { sigma: 0.15 }, &[1_000_000])
            .unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // standard error of the stdev is sigma / sqrt(2n) ~ 1.1e-4
        assert!((var.sqrt() - 0.15).abs() <= 0.001, "stdev {}", var.sqrt());
    }

    #[test]
    fn forks_are_reproducible_and_independent_of_draw_history() {
        let root = RandomSource::new(42);
        let mut drained = root.clone();
        for _ in 0..100 {
            drained.uniform();
        }
        let mut a = root.fork("student", 3);
        let mut b = drained.fork("student", 3);
        let mut c = root.fork("student", 4);
        let (xa, xb, xc) = (a.uniform(), b.uniform(), c.uniform());
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_ne!(root.fork("teacher", 3).uniform(), xa);
    }

    #[test]
    fn uniform_int_is_inclusive() {
        let mut src = RandomSource::new(3);
        let mut seen = [false; 5];
        for _ in 0..1000 {
            let v = src.uniform_int(-2, 2);
            seen[(v + 2) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
