//! Layer primitives with hand-written backward passes.

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Square same-padded convolution with stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

/// Unfolds `x` into a `(c_in k k) x (h w)` matrix.
fn im2col<T: Scalar>(x: &Tensor<T>, k: usize, cols: &mut Vec<T>) {
    let (h, w, hw) = (x.h, x.w, x.plane());
    let pad = (k / 2) as isize;
    cols.clear();
    cols.resize(x.c * k * k * hw, T::zero());
    for ci in 0..x.c {
        let src = &x.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                    let dst = &mut cols[row + y * w + x0..row + y * w + x1];
                    let s0 = (sy as usize * w) as isize + x0 as isize + dx;
                    dst.copy_from_slice(&src[s0 as usize..s0 as usize + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`], accumulating into `dx`.
fn col2im<T: Scalar>(cols: &[T], k: usize, dx: &mut Tensor<T>) {
    let (h, w, hw) = (dx.h, dx.w, dx.plane());
    let pad = (k / 2) as isize;
    for ci in 0..dx.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dy = ky as isize - pad;
                let ddx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let (x0, x1) = ((-ddx).max(0) as usize, (w as isize - ddx).min(w as isize) as usize);
                    let s0 = ((sy as usize * w) as isize + x0 as isize + ddx) as usize;
                    let dst = &mut dx.data[ci * hw + s0..ci * hw + s0 + (x1 - x0)];
                    for (d, &c) in dst.iter_mut().zip(&cols[row + y * w + x0..row + y * w + x1]) {
                        *d += c;
                    }
                }
            }
        }
    }
}

/// Returns the output and the unfolded input needed by the backward pass.
pub fn conv_forward<T: Scalar>(x: &Tensor<T>, shape: ConvShape, weight: &[T], bias: &[T]) -> (Tensor<T>, Vec<T>) {
    debug_assert_eq!(x.c, shape.c_in);
    let hw = x.plane();
    let mut cols = Vec::new();
    im2col(x, shape.k, &mut cols);
    let mut out = Tensor::zeros(shape.c_out, x.h, x.w);
    for (co, b) in bias.iter().enumerate() {
        out.data[co * hw..(co + 1) * hw].fill(*b);
    }
    let p = shape.patch();
    T::gemm(shape.c_out, p, hw, T::one(), weight, p as isize, 1, &cols, hw as isize, 1, T::one(), &mut out.data, hw as isize, 1);
    (out, cols)
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
pub fn conv_backward<T: Scalar>(
    dout: &Tensor<T>,
    cols: &[T],
    shape: ConvShape,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    need_dx: bool,
) -> Option<Tensor<T>> {
    let hw = dout.plane();
    let p = shape.patch();
    for (co, db) in dbias.iter_mut().enumerate() {
        *db += dout.data[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
    }
    T::gemm(shape.c_out, hw, p, T::one(), &dout.data, hw as isize, 1, cols, 1, hw as isize, T::one(), dweight, p as isize, 1);
    if !need_dx {
        return None;
    }
    let mut dcols = vec![T::zero(); p * hw];
    T::gemm(p, shape.c_out, hw, T::one(), weight, 1, p as isize, &dout.data, hw as isize, 1, T::zero(), &mut dcols, hw as isize, 1);
    let mut dx = Tensor::zeros(shape.c_in, dout.h, dout.w);
    col2im(&dcols, shape.k, &mut dx);
    Some(dx)
}

pub fn relu<T: Scalar>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the rectifier output was not positive.
pub fn relu_backward<T: Scalar>(out: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, &o) in grad.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 average pooling; `h` and `w` must be even.
pub fn avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let q = T::of(0.25);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..];
        for y in 0..h2 {
            for xx in 0..w2 {
                let i = 2 * y * x.w + 2 * xx;
                out.data[(c * h2 + y) * w2 + xx] = q * (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool_backward<T: Scalar>(dout: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dout.h * 2, dout.w * 2);
    let q = T::of(0.25);
    let mut dx = Tensor::zeros(dout.c, h, w);
    for c in 0..dout.c {
        for y in 0..h {
            for x in 0..w {
                dx.data[(c * h + y) * w + x] = q * dout.data[(c * dout.h + y / 2) * dout.w + x / 2];
            }
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.data[(c * h + y) * w + xx] = x.data[(c * x.h + y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample_backward<T: Scalar>(dout: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (dout.h / 2, dout.w / 2);
    let mut dx = Tensor::zeros(dout.c, h2, w2);
    for c in 0..dout.c {
        for y in 0..dout.h {
            for x in 0..dout.w {
                dx.data[(c * h2 + y / 2) * w2 + x / 2] += dout.data[(c * dout.h + y) * dout.w + x];
            }
        }
    }
    dx
}
