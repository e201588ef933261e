//! Input normalization fitted on training statistics and reapplied to
//! held-out data. All arithmetic is done in `f64`.

use nalgebra::{DMatrix, SymmetricEigen};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_ZCA_EPSILON: f64 = 1e-5;

/// Per-channel affine map `(x - mean) / std` over the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<T: Scalar>(examples: &Tensor<T>) -> Result<Self> {
        let c = examples.last_dim();
        let rows = examples.len() / c;
        let mut mean = vec![0.0; c];
        for (i, &v) in examples.data().iter().enumerate() {
            mean[i % c] += v.as_f64();
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for (i, &v) in examples.data().iter().enumerate() {
            let d = v.as_f64() - mean[i % c];
            var[i % c] += d * d;
        }
        let mut std = Vec::with_capacity(c);
        for (ch, v) in var.iter().enumerate() {
            let s = (v / rows as f64).sqrt();
            if !(s > 0.0) {
                return Err(Error::Data(format!("channel {ch} has zero variance")));
            }
            std.push(s);
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply<T: Scalar>(&self, examples: &Tensor<T>) -> Result<Tensor<T>> {
        let c = examples.last_dim();
        if c != self.mean.len() {
            return Err(Error::shape(
                "standardize",
                format!("fitted on {} channels, got {c}", self.mean.len()),
            ));
        }
        let data = examples
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| T::from_f64_lossy((v.as_f64() - self.mean[i % c]) / self.std[i % c]))
            .collect();
        Tensor::new(examples.shape().to_vec(), data)
    }
}

/// Fits a [`Standardizer`] on `ds` and returns the transformed dataset.
pub fn standardize<T: Scalar>(ds: &Dataset<T>) -> Result<(Dataset<T>, Standardizer)> {
    let record = Standardizer::fit(&ds.examples)?;
    let out = Dataset {
        examples: record.apply(&ds.examples)?,
        ..ds.clone()
    };
    Ok((out, record))
}

/// ZCA whitening `(x - mean) W` with `W = U (L + eps)^(-1/2) U^T`, applied to
/// flattened examples.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcaWhitener {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`, symmetric.
    pub matrix: Vec<f64>,
    pub epsilon: f64,
}

fn flat_rows<T: Scalar>(examples: &Tensor<T>) -> (usize, usize) {
    let n = examples.shape()[0];
    (n, examples.len() / n)
}

impl ZcaWhitener {
    pub fn fit<T: Scalar>(examples: &Tensor<T>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ZCA epsilon must be positive, got {epsilon}"
            )));
        }
        let (n, dim) = flat_rows(examples);
        let x = examples.data();
        let mut mean = vec![0.0; dim];
        for r in 0..n {
            for j in 0..dim {
                mean[j] += x[r * dim + j].as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = DMatrix::from_fn(n, dim, |r, j| x[r * dim + j].as_f64() - mean[j]);
        let cov = (centered.transpose() * &centered) / n as f64;
        let eig = SymmetricEigen::new(cov);
        let scale = eig.eigenvalues.map(|l| 1.0 / (l.max(0.0) + epsilon).sqrt());
        let u = &eig.eigenvectors;
        let w = u * DMatrix::from_diagonal(&scale) * u.transpose();
        // Symmetrize away rounding so the record is exactly symmetric.
        let w = (&w + w.transpose()) * 0.5;
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                matrix[i * dim + j] = w[(i, j)];
            }
        }
        Ok(ZcaWhitener {
            mean,
            matrix,
            epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<T: Scalar>(&self, examples: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, dim) = flat_rows(examples);
        if dim != self.dim() {
            return Err(Error::shape(
                "zca",
                format!("fitted on dimension {}, got {dim}", self.dim()),
            ));
        }
        let x = examples.data();
        let mut out = Vec::with_capacity(n * dim);
        let mut row = vec![0.0; dim];
        for r in 0..n {
            for j in 0..dim {
                row[j] = x[r * dim + j].as_f64() - self.mean[j];
            }
            for j in 0..dim {
                let mut acc = 0.0;
                for (k, &v) in row.iter().enumerate() {
                    acc += v * self.matrix[k * dim + j];
                }
                out.push(T::from_f64_lossy(acc));
            }
        }
        Tensor::new(examples.shape().to_vec(), out)
    }
}

/// Fits a [`ZcaWhitener`] on `ds` and returns the whitened dataset.
pub fn zca_whiten<T: Scalar>(ds: &Dataset<T>, epsilon: f64) -> Result<(Dataset<T>, ZcaWhitener)> {
    let record = ZcaWhitener::fit(&ds.examples, epsilon)?;
    let out = Dataset {
        examples: record.apply(&ds.examples)?,
        ..ds.clone()
    };
    Ok((out, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::RandomSource;

    fn gaussian(n: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut src = RandomSource::new(seed);
        Tensor::from_fn(&[n, d], |_| src.standard_normal())
    }

    fn covariance(x: &Tensor<f64>) -> DMatrix<f64> {
        let (n, d) = flat_rows(x);
        let m = DMatrix::from_row_slice(n, d, x.data());
        let mean = m.row_mean();
        let c = DMatrix::from_fn(n, d, |r, j| m[(r, j)] - mean[j]);
        (c.transpose() * &c) / n as f64
    }

    fn ds(x: Tensor<f64>) -> Dataset<f64> {
        Dataset::new(x, None, 0).unwrap()
    }

    #[test]
    fn standardize_moments_and_idempotence() {
        let mut src = RandomSource::new(4);
        let x = Tensor::from_fn(&[200, 3], |i| 5.0 + (1 + i % 3) as f64 * src.standard_normal());
        let (out, rec) = standardize(&ds(x)).unwrap_or_else(|e| panic!("{e}"));
        let again = Standardizer::fit(&out.examples).unwrap();
        for c in 0..3 {
            assert!(again.mean[c].abs() < 1e-6);
            assert!((again.std[c] - 1.0).abs() < 1e-6);
        }
        let twice = again.apply(&out.examples).unwrap();
        assert!(twice.max_abs_diff(&out.examples) < 1e-6);
        assert_eq!(rec.mean.len(), 3);
    }

    #[test]
    fn constant_channel_rejected() {
        let x = Tensor::from_fn(&[10, 2], |i| if i % 2 == 0 { 1.0 } else { i as f64 });
        assert!(standardize(&ds(x)).is_err());
    }

    #[test]
    fn heldout_mean_is_shifted_and_scaled() {
        let train = gaussian(300, 2, 1).map(|v| 2.0 * v + 1.0);
        let test = gaussian(100, 2, 2).map(|v| 3.0 * v - 4.0);
        let rec = Standardizer::fit(&train).unwrap();
        let out = rec.apply(&test).unwrap();
        let raw_mean = Standardizer::fit(&test).unwrap().mean;
        let out_mean = Standardizer::fit(&out).unwrap().mean;
        for c in 0..2 {
            let expected = (raw_mean[c] - rec.mean[c]) / rec.std[c];
            assert!((out_mean[c] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn zca_whitens_and_is_symmetric() {
        let mut src = RandomSource::new(7);
        let mix = Tensor::from_fn(&[16, 16], |_| src.standard_normal());
        let z = gaussian(500, 16, 8);
        let mut x = Tensor::<f64>::zeros(&[500, 16]);
        for r in 0..500 {
            for j in 0..16 {
                let mut acc = 0.0;
                for k in 0..16 {
                    acc += z.data()[r * 16 + k] * mix.data()[k * 16 + j];
                }
                x.data_mut()[r * 16 + j] = acc;
            }
        }
        let (out, rec) = zca_whiten(&ds(x.clone()), 1e-8).unwrap();
        let cov = covariance(&out.examples);
        for i in 0..16 {
            for j in 0..16 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - target).abs() < 1e-3, "{i},{j}: {}", cov[(i, j)]);
                assert!((rec.matrix[i * 16 + j] - rec.matrix[j * 16 + i]).abs() <= 1e-10);
            }
        }
        // Reapplying the record to the training data reproduces the output.
        assert_eq!(rec.apply(&x).unwrap(), out.examples);
    }

    #[test]
    fn white_input_gives_near_identity() {
        // Exactly white data: rows of +-sqrt(d) e_j in both signs.
        let d = 4;
        let mut rows = Vec::new();
        for j in 0..d {
            for s in [1.0, -1.0] {
                let mut r = vec![0.0; d];
                r[j] = s * (d as f64).sqrt();
                rows.extend(r);
            }
        }
        let x = Tensor::new(vec![2 * d, d], rows).unwrap();
        let cov = covariance(&x);
        assert!((cov[(0, 0)] - 1.0).abs() < 1e-12);
        let rec = ZcaWhitener::fit(&x, 1e-12).unwrap();
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((rec.matrix[i * d + j] - target).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn epsilon_must_be_positive() {
        assert!(ZcaWhitener::fit(&gaussian(10, 2, 1), 0.0).is_err());
        assert!(ZcaWhitener::fit(&gaussian(10, 2, 1), -1.0).is_err());
    }
}
