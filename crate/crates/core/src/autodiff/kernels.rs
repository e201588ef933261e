//! Convolution, pooling and matrix kernels used by the primitives.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    pub fn parse(s: &str) -> Option<Padding> {
        match s {
            "same" => Some(Padding::Same),
            "valid" => Some(Padding::Valid),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        }
    }
}

/// Geometry of one 2-D convolution; padding follows the usual
/// "same" convention with any odd pixel of padding placed after the input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub o: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

/// Output spatial extent for one axis.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    match padding {
        Padding::Valid => (input >= kernel).then(|| (input - kernel) / stride + 1),
        Padding::Same => Some(input.div_ceil(stride)),
    }
}

impl ConvGeometry {
    pub fn new(x: &[usize], k: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        let op = "conv2d";
        if x.len() != 4 || k.len() != 4 {
            return Err(Error::shape(
                op,
                format!("expected input NxHxWxC and kernel KHxKWxCxO, got {x:?} and {k:?}"),
            ));
        }
        let (n, h, w, c) = (x[0], x[1], x[2], x[3]);
        let (kh, kw, kc, o) = (k[0], k[1], k[2], k[3]);
        if kc != c {
            return Err(Error::shape(
                op,
                format!("input has {c} channels but kernel expects {kc}"),
            ));
        }
        let (oh, ow) = match (
            conv_output_extent(h, kh, stride, padding),
            conv_output_extent(w, kw, stride, padding),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::shape(
                    op,
                    format!("kernel {kh}x{kw} (stride {stride}) does not fit input {h}x{w}"),
                ))
            }
        };
        let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
        let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
        Ok(ConvGeometry {
            n,
            h,
            w,
            c,
            kh,
            kw,
            o,
            stride,
            oh,
            ow,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        })
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Visits (patch row, patch column offset, input offset) for every
    /// in-bounds kernel tap; out-of-bounds taps are zero padding.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let patch = self.patch();
        for b in 0..self.n {
            for y in 0..self.oh {
                for x in 0..self.ow {
                    let row = (b * self.oh + y) * self.ow + x;
                    for ky in 0..self.kh {
                        let iy = (y * self.stride + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..self.kw {
                            let ix = (x * self.stride + kx) as isize - self.pad_left as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let col = (ky * self.kw + kx) * self.c;
                            let src = ((b * self.h + iy as usize) * self.w + ix as usize) * self.c;
                            f(row * patch + col, src, self.c);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.rows() * self.patch()];
        self.for_each_tap(|dst, src, len| {
            cols[dst..dst + len].copy_from_slice(&x[src..src + len]);
        });
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.n * self.h * self.w * self.c];
        self.for_each_tap(|dst, src, len| {
            for (xi, &ci) in x[src..src + len].iter_mut().zip(&cols[dst..dst + len]) {
                *xi += ci;
            }
        });
        x
    }
}

pub(crate) fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), k.shape(), stride, padding)?;
    let mut out = vec![T::zero(); g.rows() * g.o];
    let patch = g.patch();
    let owned;
    let cols: &[T] = if g.is_pointwise() {
        x.data()
    } else {
        owned = g.im2col(x.data());
        &owned
    };
    T::gemm(
        g.rows(),
        patch,
        g.o,
        T::one(),
        cols,
        (patch as isize, 1),
        k.data(),
        (g.o as isize, 1),
        T::zero(),
        &mut out,
        (g.o as isize, 1),
    );
    Tensor::new(vec![g.n, g.oh, g.ow, g.o], out)
}

/// Returns (d input, d kernel), each only when requested.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    padding: Padding,
    dy: &Tensor<T>,
    need_x: bool,
    need_k: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let g = ConvGeometry::new(x.shape(), k.shape(), stride, padding)?;
    let patch = g.patch();
    let rows = g.rows();
    let dk = if need_k {
        let owned;
        let cols: &[T] = if g.is_pointwise() {
            x.data()
        } else {
            owned = g.im2col(x.data());
            &owned
        };
        let mut dk = vec![T::zero(); patch * g.o];
        T::gemm(
            patch,
            rows,
            g.o,
            T::one(),
            cols,
            (1, patch as isize),
            dy.data(),
            (g.o as isize, 1),
            T::zero(),
            &mut dk,
            (g.o as isize, 1),
        );
        Some(Tensor::new(k.shape().to_vec(), dk)?)
    } else {
        None
    };
    let dx = if need_x {
        let mut dcols = vec![T::zero(); rows * patch];
        T::gemm(
            rows,
            g.o,
            patch,
            T::one(),
            dy.data(),
            (g.o as isize, 1),
            k.data(),
            (1, g.o as isize),
            T::zero(),
            &mut dcols,
            (patch as isize, 1),
        );
        let dx = if g.is_pointwise() {
            dcols
        } else {
            g.col2im(&dcols)
        };
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok((dx, dk))
}

/// `[b, i] x [i, o]`.
pub(crate) fn matmul<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(Error::shape(
            "matmul",
            format!("cannot multiply {xs:?} by {ws:?}"),
        ));
    }
    let (b, i, o) = (xs[0], xs[1], ws[1]);
    let mut out = vec![T::zero(); b * o];
    T::gemm(
        b,
        i,
        o,
        T::one(),
        x.data(),
        (i as isize, 1),
        w.data(),
        (o as isize, 1),
        T::zero(),
        &mut out,
        (o as isize, 1),
    );
    Tensor::new(vec![b, o], out)
}

pub(crate) fn matmul_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    need_x: bool,
    need_w: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let (b, i, o) = (x.shape()[0], x.shape()[1], w.shape()[1]);
    let dx = if need_x {
        let mut dx = vec![T::zero(); b * i];
        T::gemm(
            b,
            o,
            i,
            T::one(),
            dy.data(),
            (o as isize, 1),
            w.data(),
            (1, o as isize),
            T::zero(),
            &mut dx,
            (i as isize, 1),
        );
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    let dw = if need_w {
        let mut dw = vec![T::zero(); i * o];
        T::gemm(
            i,
            b,
            o,
            T::one(),
            x.data(),
            (1, i as isize),
            dy.data(),
            (o as isize, 1),
            T::zero(),
            &mut dw,
            (o as isize, 1),
        );
        Some(Tensor::new(w.shape().to_vec(), dw)?)
    } else {
        None
    };
    Ok((dx, dw))
}

/// Non-overlapping `size x size` max pooling; trailing rows/columns that do
/// not fill a window are dropped. Returns the output and, per output element,
/// the flat input index of the winning tap (first maximum on ties).
pub(crate) fn max_pool<T: Scalar>(x: &Tensor<T>, size: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    if s.len() != 4 || size == 0 || s[1] < size || s[2] < size {
        return Err(Error::shape(
            "maxpool",
            format!("cannot pool {s:?} with window {size}"),
        ));
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / size, w / size);
    let data = x.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for y in 0..oh {
            for xx in 0..ow {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    let mut best_v = T::neg_infinity();
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = ((b * h + y * size + dy) * w + xx * size + dx) * c + ch;
                            if best == usize::MAX || data[idx] > best_v {
                                best = idx;
                                best_v = data[idx];
                            }
                        }
                    }
                    out.push(best_v);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, oh, ow, c], out)?, arg))
}

pub(crate) fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape(
            "avgpool",
            format!("expected NxHxWxC input, got {s:?}"),
        ));
    }
    let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
    let inv = T::one() / T::from_f64_lossy(hw as f64);
    let mut out = vec![T::zero(); n * c];
    for b in 0..n {
        for p in 0..hw {
            let src = &x.data()[(b * hw + p) * c..(b * hw + p + 1) * c];
            for (o, &v) in out[b * c..(b + 1) * c].iter_mut().zip(src) {
                *o += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    Tensor::new(vec![n, c], out)
}
