//! Primitive layers with hand-written backward passes.
//!
//! Convolution weights are `(out, in, k)`; transposed convolution weights are
//! `(in, out, k)`. Both are lowered to GEMM through an im2col buffer.

use super::real::gemm;
use super::{Param, Real, Tensor};
use crate::{Error, Result};

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Shape(what()))
    }
}

/// Geometry of a stride-`stride` transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpGeometry {
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl UpGeometry {
    pub fn output_len(&self, len: usize, kernel: usize) -> usize {
        (len - 1) * self.stride + kernel + self.output_padding - 2 * self.padding
    }
}

/// `(nb, c, len)` to channel-major `(c, nb * len)`.
fn to_channel_major<T: Real>(x: &[T], nb: usize, c: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for n in 0..nb {
        for i in 0..c {
            out[i * nb * len + n * len..i * nb * len + (n + 1) * len]
                .copy_from_slice(&x[(n * c + i) * len..(n * c + i + 1) * len]);
        }
    }
    out
}

fn from_channel_major<T: Real>(x: &[T], nb: usize, c: usize, len: usize, out: &mut [T]) {
    for n in 0..nb {
        for i in 0..c {
            out[(n * c + i) * len..(n * c + i + 1) * len]
                .copy_from_slice(&x[i * nb * len + n * len..i * nb * len + (n + 1) * len]);
        }
    }
}

/// `cols[(i*k + j), n*len + t] = x[n, i, t + j - pad]`, zero outside.
fn im2col<T: Real>(x: &[T], nb: usize, cin: usize, len: usize, k: usize, pad: usize) -> Vec<T> {
    let width = nb * len;
    let mut cols = vec![T::zero(); cin * k * width];
    for i in 0..cin {
        for j in 0..k {
            let shift = j as isize - pad as isize;
            let lo = (-shift).max(0) as usize;
            let hi = (len as isize - shift).min(len as isize).max(0) as usize;
            for n in 0..nb {
                let row = &x[(n * cin + i) * len..(n * cin + i + 1) * len];
                let base = (i * k + j) * width + n * len;
                for t in lo..hi.max(lo) {
                    cols[base + t] = row[(t as isize + shift) as usize];
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], nb: usize, cin: usize, len: usize, k: usize, pad: usize, x: &mut [T]) {
    let width = nb * len;
    for i in 0..cin {
        for j in 0..k {
            let shift = j as isize - pad as isize;
            let lo = (-shift).max(0) as usize;
            let hi = (len as isize - shift).min(len as isize).max(0) as usize;
            for n in 0..nb {
                let base = (i * k + j) * width + n * len;
                let row = &mut x[(n * cin + i) * len..(n * cin + i + 1) * len];
                for t in lo..hi.max(lo) {
                    row[(t as isize + shift) as usize] += cols[base + t];
                }
            }
        }
    }
}

/// Stride-1 convolution with symmetric zero padding; output length equals
/// input length when `pad = (k - 1) / 2`.
pub fn conv1d<T: Real>(x: &Tensor<T>, w: &Param<T>, b: &Param<T>, pad: usize) -> Result<Tensor<T>> {
    let [nb, cin, len] = x.shape();
    check(w.dims.len() == 3 && w.dims[1] == cin && b.data.len() == w.dims[0], || {
        format!("conv1d: input {:?} with weight {:?} and bias {:?}", x.shape(), w.dims, b.dims)
    })?;
    let (cout, k) = (w.dims[0], w.dims[2]);
    let width = nb * len;
    let cols = im2col(x.data(), nb, cin, len, k, pad);
    let mut ycm = vec![T::zero(); cout * width];
    for o in 0..cout {
        ycm[o * width..(o + 1) * width].fill(b.data[o]);
    }
    gemm(cout, cin * k, width, &w.data, false, &cols, false, T::one(), &mut ycm);
    let mut y = Tensor::zeros([nb, cout, len]);
    from_channel_major(&ycm, nb, cout, len, y.data_mut());
    Ok(y)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn conv1d_backward<T: Real>(
    gy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Param<T>,
    pad: usize,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let [nb, cin, len] = x.shape();
    check(w.dims.len() == 3 && w.dims[1] == cin && gy.shape() == [nb, w.dims[0], len], || {
        format!("conv1d_backward: grad {:?}, input {:?}, weight {:?}", gy.shape(), x.shape(), w.dims)
    })?;
    let (cout, k) = (w.dims[0], w.dims[2]);
    let width = nb * len;
    let gycm = to_channel_major(gy.data(), nb, cout, len);
    let gb = (0..cout).map(|o| gycm[o * width..(o + 1) * width].iter().copied().sum()).collect();
    let cols = im2col(x.data(), nb, cin, len, k, pad);
    let mut gw = vec![T::zero(); w.data.len()];
    gemm(cout, width, cin * k, &gycm, false, &cols, true, T::zero(), &mut gw);
    let mut gcols = cols;
    gemm(cin * k, cout, width, &w.data, true, &gycm, false, T::zero(), &mut gcols);
    let mut gx = Tensor::zeros([nb, cin, len]);
    col2im(&gcols, nb, cin, len, k, pad, gx.data_mut());
    Ok((gx, gw, gb))
}

/// Transposed convolution, `y[o, s*i + j - p] += x[c, i] * w[c, o, j]`.
pub fn conv_transpose1d<T: Real>(
    x: &Tensor<T>,
    w: &Param<T>,
    b: &Param<T>,
    geo: UpGeometry,
) -> Result<Tensor<T>> {
    let [nb, cin, len] = x.shape();
    check(w.dims.len() == 3 && w.dims[0] == cin && b.data.len() == w.dims[1] && len > 0, || {
        format!("conv_transpose1d: input {:?} with weight {:?} and bias {:?}", x.shape(), w.dims, b.dims)
    })?;
    let (cout, k) = (w.dims[1], w.dims[2]);
    let lout = geo.output_len(len, k);
    let width = nb * len;
    let xcm = to_channel_major(x.data(), nb, cin, len);
    let mut cols = vec![T::zero(); cout * k * width];
    gemm(cout * k, cin, width, &w.data, true, &xcm, false, T::zero(), &mut cols);
    let mut y = Tensor::zeros([nb, cout, lout]);
    let yd = y.data_mut();
    for n in 0..nb {
        for o in 0..cout {
            let out = &mut yd[(n * cout + o) * lout..(n * cout + o + 1) * lout];
            out.fill(b.data[o]);
            for j in 0..k {
                let src = &cols[(o * k + j) * width + n * len..(o * k + j) * width + (n + 1) * len];
                for (i, &v) in src.iter().enumerate() {
                    let t = (geo.stride * i + j) as isize - geo.padding as isize;
                    if t >= 0 && (t as usize) < lout {
                        out[t as usize] += v;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn conv_transpose1d_backward<T: Real>(
    gy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Param<T>,
    geo: UpGeometry,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let [nb, cin, len] = x.shape();
    check(
        w.dims.len() == 3 && w.dims[0] == cin && gy.shape() == [nb, w.dims[1], geo.output_len(len, w.dims[2])],
        || format!("conv_transpose1d_backward: grad {:?}, input {:?}, weight {:?}", gy.shape(), x.shape(), w.dims),
    )?;
    let (cout, k) = (w.dims[1], w.dims[2]);
    let lout = gy.length();
    let width = nb * len;
    let gyd = gy.data();
    let mut gb = vec![T::zero(); cout];
    let mut gcols = vec![T::zero(); cout * k * width];
    for n in 0..nb {
        for o in 0..cout {
            let g = &gyd[(n * cout + o) * lout..(n * cout + o + 1) * lout];
            gb[o] += g.iter().copied().sum();
            for j in 0..k {
                let dst = &mut gcols[(o * k + j) * width + n * len..(o * k + j) * width + (n + 1) * len];
                for (i, d) in dst.iter_mut().enumerate() {
                    let t = (geo.stride * i + j) as isize - geo.padding as isize;
                    if t >= 0 && (t as usize) < lout {
                        *d = g[t as usize];
                    }
                }
            }
        }
    }
    let xcm = to_channel_major(x.data(), nb, cin, len);
    let mut gxcm = vec![T::zero(); cin * width];
    gemm(cin, cout * k, width, &w.data, false, &gcols, false, T::zero(), &mut gxcm);
    let mut gx = Tensor::zeros([nb, cin, len]);
    from_channel_major(&gxcm, nb, cin, len, gx.data_mut());
    let mut gw = vec![T::zero(); w.data.len()];
    gemm(cin, width, cout * k, &xcm, false, &gcols, true, T::zero(), &mut gw);
    Ok((gx, gw, gb))
}

/// Max-pool, window 2 stride 2. Ties go to the first element. Returns the
/// pooled tensor and the flat source index of each output.
pub fn maxpool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [nb, c, len] = x.shape();
    check(len % 2 == 0, || format!("maxpool needs an even length, got {len}"))?;
    let lout = len / 2;
    let mut y = Tensor::zeros([nb, c, lout]);
    let mut idx = Vec::with_capacity(nb * c * lout);
    let (xd, yd) = (x.data(), y.data_mut());
    for row in 0..nb * c {
        for t in 0..lout {
            let a = row * len + 2 * t;
            let pick = if xd[a + 1] > xd[a] { a + 1 } else { a };
            yd[row * lout + t] = xd[pick];
            idx.push(pick);
        }
    }
    Ok((y, idx))
}

pub fn maxpool2_backward<T: Real>(gy: &Tensor<T>, idx: &[usize], in_shape: [usize; 3]) -> Tensor<T> {
    let mut gx = Tensor::zeros(in_shape);
    let gxd = gx.data_mut();
    for (&i, &g) in idx.iter().zip(gy.data()) {
        gxd[i] += g;
    }
    gx
}

pub fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Masks `gy` in place using the activation output.
pub fn relu_backward_inplace<T: Real>(gy: &mut Tensor<T>, y: &Tensor<T>) {
    gy.data_mut().iter_mut().zip(y.data()).for_each(|(g, &v)| {
        if v <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Mean squared error over all elements; returns the loss and `dL/dpred`.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check(pred.shape() == target.shape(), || format!("mse_loss: {:?} vs {:?}", pred.shape(), target.shape()))?;
    let n = pred.data().len();
    let scale = T::from_f64_lossy(2.0 / n as f64);
    let mut grad = Tensor::zeros(pred.shape());
    let mut acc = 0.0f64;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        acc += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    Ok((acc / n as f64, grad))
}
