use std::f64::consts::PI;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::random::RandomSource;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Two interleaved half circles, `n / 2` points each, with gaussian jitter
/// of stdev `noise_sigma` on both coordinates.
///
/// Class 0 lies on the upper unit half circle around the origin; class 1 on
/// the lower unit half circle around `(1, -0.5)`.
pub fn make_two_moons<T: Scalar>(n: usize, noise_sigma: f64, seed: u64) -> Result<Dataset<T>> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "two moons needs an even count >= 2, got {n}"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let half = n / 2;
    let mut rng = RandomSource::new(seed).fork("two-moons", 0);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for class in 0..2 {
        for i in 0..half {
            let t = if half == 1 {
                0.0
            } else {
                PI * i as f64 / (half - 1) as f64
            };
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let jx = noise_sigma * rng.standard_normal();
            let jy = noise_sigma * rng.standard_normal();
            data.push(T::from_f64_lossy(x + jx));
            data.push(T::from_f64_lossy(y + jy));
            labels.push(class);
        }
    }
    Dataset::new(Tensor::new(vec![n, 2], data)?, Some(labels), 2)
}
