//! Random integer translation and horizontal flip of `h x w x c` images.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::Augmentation;
use crate::random::RandomSource;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fill rule for pixels vacated by a translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Border {
    #[default]
    Zero,
    /// Mirror about the edge pixel without repeating it.
    Reflect,
}

impl fmt::Display for Border {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Border::Zero => "zero",
            Border::Reflect => "reflect",
        })
    }
}

impl FromStr for Border {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Border::Zero),
            "reflect" => Ok(Border::Reflect),
            _ => Err(Error::Config(format!("unknown border mode `{s}` (zero|reflect)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentConfig {
    pub translate_max: usize,
    pub flip: bool,
    pub border: Border,
}

impl AugmentConfig {
    pub fn from_model(aug: Augmentation, border: Border) -> Self {
        AugmentConfig {
            translate_max: aug.translate_max,
            flip: aug.flip,
            border,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.translate_max == 0 && !self.flip
    }
}

/// One draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transform {
    pub dx: i64,
    pub dy: i64,
    pub flip: bool,
}

pub fn draw_transform(cfg: &AugmentConfig, src: &mut RandomSource) -> Transform {
    let t = cfg.translate_max as i64;
    let (dx, dy) = if t > 0 {
        (src.uniform_int(-t, t), src.uniform_int(-t, t))
    } else {
        (0, 0)
    };
    Transform {
        dx,
        dy,
        flip: cfg.flip && src.bernoulli(0.5),
    }
}

fn image_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [h, w, c] => Ok((*h, *w, *c)),
        _ => Err(Error::shape(
            "augment",
            format!("expected an h x w x c image, got {shape:?}"),
        )),
    }
}

fn check_extent(cfg: &AugmentConfig, h: usize, w: usize) -> Result<()> {
    if cfg.translate_max > 0 && cfg.translate_max >= h.min(w) {
        return Err(Error::InvalidParameter(format!(
            "translate_max {} must be smaller than the image side {}",
            cfg.translate_max,
            h.min(w)
        )));
    }
    Ok(())
}

fn source_index(i: i64, n: usize, border: Border) -> Option<usize> {
    let n = n as i64;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match border {
        Border::Zero => None,
        Border::Reflect => {
            let r = if i < 0 { -i } else { 2 * (n - 1) - i };
            (0..n).contains(&r).then_some(r as usize)
        }
    }
}

/// Writes the transformed image into `out`; `t.flip` is applied after the
/// shift. Content moves by `(+dx, +dy)`.
fn transform_into<T: Scalar>(
    img: &[T],
    (h, w, c): (usize, usize, usize),
    t: Transform,
    border: Border,
    out: &mut [T],
) {
    for y in 0..h {
        let sy = source_index(y as i64 - t.dy, h, border);
        for x in 0..w {
            let xo = if t.flip { w - 1 - x } else { x };
            let sx = source_index(xo as i64 - t.dx, w, border);
            let dst = &mut out[(y * w + x) * c..(y * w + x + 1) * c];
            match (sy, sx) {
                (Some(sy), Some(sx)) => {
                    dst.copy_from_slice(&img[(sy * w + sx) * c..(sy * w + sx + 1) * c])
                }
                _ => dst.fill(T::zero()),
            }
        }
    }
}

/// Applies a fixed transform to a single image.
pub fn apply_transform<T: Scalar>(
    image: &Tensor<T>,
    t: Transform,
    border: Border,
) -> Result<Tensor<T>> {
    let dims = image_dims(image.shape())?;
    let mut out = vec![T::zero(); image.len()];
    transform_into(image.data(), dims, t, border, &mut out);
    Tensor::new(image.shape().to_vec(), out)
}

pub fn augment<T: Scalar>(
    image: &Tensor<T>,
    cfg: &AugmentConfig,
    src: &mut RandomSource,
) -> Result<Tensor<T>> {
    let (h, w, _) = image_dims(image.shape())?;
    check_extent(cfg, h, w)?;
    let t = draw_transform(cfg, src);
    apply_transform(image, t, cfg.border)
}

/// Augments every row of an `n x h x w x c` batch independently, drawing
/// row `i` from `src.fork("augment", i)`.
pub fn augment_batch<T: Scalar>(
    batch: &Tensor<T>,
    cfg: &AugmentConfig,
    src: &RandomSource,
) -> Result<Tensor<T>> {
    if cfg.is_identity() {
        return Ok(batch.clone());
    }
    let dims = image_dims(&batch.shape()[1..])?;
    check_extent(cfg, dims.0, dims.1)?;
    let per = dims.0 * dims.1 * dims.2;
    let mut out = vec![T::zero(); batch.len()];
    for (i, (img, dst)) in batch
        .data()
        .chunks(per)
        .zip(out.chunks_mut(per))
        .enumerate()
    {
        let t = draw_transform(cfg, &mut src.fork("augment", i as u64));
        transform_into(img, dims, t, cfg.border, dst);
    }
    Tensor::new(batch.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> Tensor<f64> {
        Tensor::from_fn(&[5, 6, 2], |i| i as f64 + 1.0)
    }

    #[test]
    fn identity_config() {
        let cfg = AugmentConfig::default();
        let img = image();
        let out = augment(&img, &cfg, &mut RandomSource::new(1)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn double_flip_is_identity() {
        let img = image();
        let t = Transform { dx: 0, dy: 0, flip: true };
        let once = apply_transform(&img, t, Border::Zero).unwrap();
        assert_ne!(once, img);
        assert_eq!(apply_transform(&once, t, Border::Zero).unwrap(), img);
    }

    #[test]
    fn shift_fills_border() {
        let img = Tensor::from_fn(&[3, 3, 1], |i| i as f64 + 1.0);
        let t = Transform { dx: 1, dy: 0, flip: false };
        let zero = apply_transform(&img, t, Border::Zero).unwrap();
        assert_eq!(zero.data(), &[0., 1., 2., 0., 4., 5., 0., 7., 8.]);
        let refl = apply_transform(&img, t, Border::Reflect).unwrap();
        assert_eq!(refl.data(), &[2., 1., 2., 5., 4., 5., 8., 7., 8.]);
        let t = Transform { dx: 0, dy: -1, flip: false };
        let up = apply_transform(&img, t, Border::Reflect).unwrap();
        assert_eq!(up.data(), &[4., 5., 6., 7., 8., 9., 4., 5., 6.]);
    }

    #[test]
    fn translate_bound_checked() {
        let cfg = AugmentConfig { translate_max: 5, ..Default::default() };
        assert!(augment(&image(), &cfg, &mut RandomSource::new(1)).is_err());
    }

    #[test]
    fn offsets_are_uniform() {
        let cfg = AugmentConfig { translate_max: 2, ..Default::default() };
        let mut src = RandomSource::new(11);
        let mut counts = [0usize; 5];
        let draws = 100_000;
        for _ in 0..draws {
            counts[(draw_transform(&cfg, &mut src).dx + 2) as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.2).abs() <= 0.01, "{f}");
        }
    }

    #[test]
    fn batch_rows_keep_shape() {
        let cfg = AugmentConfig { translate_max: 1, flip: true, border: Border::Zero };
        let batch = Tensor::from_fn(&[4, 5, 6, 2], |i| i as f64);
        let out = augment_batch(&batch, &cfg, &RandomSource::new(2)).unwrap();
        assert_eq!(out.shape(), batch.shape());
    }
}
