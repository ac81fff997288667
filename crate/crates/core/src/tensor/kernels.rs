//! Forward and backward kernels on raw row-major buffers.
//!
//! Every kernel accumulates in a fixed order, so results are bit-identical
//! between runs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += aᵀ · b` where `a` is stored as `[k×m]`.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a · bᵀ` where `b` is stored as `[n×k]`.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    let bt = transpose(n, k, b);
    gemm_nn(m, k, n, a, &bt, c);
}

/// Transposes a `[rows×cols]` matrix.
pub fn transpose<T: Scalar>(rows: usize, cols: usize, src: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Geometry of a 2-D cross-correlation over one `[C, H, W]` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl ConvGeom {
    pub fn out_size(&self) -> Option<(usize, usize)> {
        let span = |len: usize, k: usize, s: usize, p: usize| {
            let padded = len + 2 * p;
            if padded < k || s == 0 {
                None
            } else {
                Some((padded - k) / s + 1)
            }
        };
        Some((
            span(self.height, self.kernel[0], self.stride[0], self.padding[0])?,
            span(self.width, self.kernel[1], self.stride[1], self.padding[1])?,
        ))
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel[0] * self.kernel[1]
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Unfolds one image into columns `[C·kh·kw, OH·OW]`.
pub fn im2col<T: Scalar>(g: &ConvGeom, img: &[T], col: &mut [T]) {
    let (oh, ow) = g.out_size().expect("validated geometry");
    let [kh, kw] = g.kernel;
    let [sh, sw] = g.stride;
    let [ph, pw] = g.padding;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..kh {
            for kj in 0..kw {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let iy = (y * sh + ki) as isize - ph as isize;
                    let line = &mut dst[y * ow..(y + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (x, out) in line.iter_mut().enumerate() {
                        let ix = (x * sw + kj) as isize - pw as isize;
                        *out = if ix < 0 || ix >= g.width as isize { T::zero() } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Folds columns back into an image, summing overlapping contributions.
pub fn col2im<T: Scalar>(g: &ConvGeom, col: &[T], img: &mut [T]) {
    let (oh, ow) = g.out_size().expect("validated geometry");
    let [kh, kw] = g.kernel;
    let [sh, sw] = g.stride;
    let [ph, pw] = g.padding;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..kh {
            for kj in 0..kw {
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let iy = (y * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for x in 0..ow {
                        let ix = (x * sw + kj) as isize - pw as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] += src[y * ow + x];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Cross-correlation of `x[N,C,H,W]` with `w[OC,C,kh,kw]`. Returns `[N,OC,OH,OW]` data.
pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, batch: usize, out_ch: usize, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (oh, ow) = g.out_size().expect("validated geometry");
    let plen = g.patch_len();
    let osz = oh * ow;
    let mut out = vec![T::zero(); batch * out_ch * osz];
    let mut col = vec![T::zero(); plen * osz];
    for n in 0..batch {
        im2col(g, &x[n * g.image_len()..(n + 1) * g.image_len()], &mut col);
        let dst = &mut out[n * out_ch * osz..(n + 1) * out_ch * osz];
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_mut(osz).enumerate() {
                chunk.fill(b[o]);
            }
        }
        gemm_nn(out_ch, plen, osz, w, &col, dst);
    }
    out
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    out_ch: usize,
    x: &[T],
    w: &[T],
    dout: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let (oh, ow) = g.out_size().expect("validated geometry");
    let plen = g.patch_len();
    let osz = oh * ow;
    let mut dx = need[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = need[1].then(|| vec![T::zero(); w.len()]);
    let mut db = need[2].then(|| vec![T::zero(); out_ch]);
    let mut col = vec![T::zero(); plen * osz];
    for n in 0..batch {
        let dy = &dout[n * out_ch * osz..(n + 1) * out_ch * osz];
        if let Some(dw) = dw.as_mut() {
            im2col(g, &x[n * g.image_len()..(n + 1) * g.image_len()], &mut col);
            gemm_nt(out_ch, osz, plen, dy, &col, dw);
        }
        if let Some(dx) = dx.as_mut() {
            col.fill(T::zero());
            gemm_tn(plen, out_ch, osz, w, dy, &mut col);
            col2im(g, &col, &mut dx[n * g.image_len()..(n + 1) * g.image_len()]);
        }
        if let Some(db) = db.as_mut() {
            for (o, chunk) in dy.chunks(osz).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
    }
    ConvGrads { input: dx, weight: dw, bias: db }
}

/// Geometry of the convolution whose adjoint is the transposed convolution
/// mapping `[IC,H,W]` to `[OC,OH,OW]`.
pub fn conv_transpose_geom(out_ch: usize, in_h: usize, in_w: usize, kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2]) -> Option<ConvGeom> {
    let size = |len: usize, k: usize, s: usize, p: usize| ((len - 1) * s + k).checked_sub(2 * p).filter(|&v| v >= 1);
    Some(ConvGeom {
        channels: out_ch,
        height: size(in_h, kernel[0], stride[0], padding[0])?,
        width: size(in_w, kernel[1], stride[1], padding[1])?,
        kernel,
        stride,
        padding,
    })
}

/// Transposed convolution of `x[N,IC,H,W]` with `w[IC,OC,kh,kw]`; `g` comes from
/// [`conv_transpose_geom`].
pub fn conv_transpose2d_forward<T: Scalar>(g: &ConvGeom, batch: usize, in_ch: usize, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (h, wd) = g.out_size().expect("validated geometry");
    let isz = h * wd;
    let plen = g.patch_len();
    let mut out = vec![T::zero(); batch * g.image_len()];
    let mut col = vec![T::zero(); plen * isz];
    let osz = g.height * g.width;
    for n in 0..batch {
        col.fill(T::zero());
        gemm_tn(plen, in_ch, isz, w, &x[n * in_ch * isz..(n + 1) * in_ch * isz], &mut col);
        let dst = &mut out[n * g.image_len()..(n + 1) * g.image_len()];
        col2im(g, &col, dst);
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_mut(osz).enumerate() {
                for v in chunk {
                    *v += b[o];
                }
            }
        }
    }
    out
}

pub fn conv_transpose2d_backward<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    in_ch: usize,
    x: &[T],
    w: &[T],
    dout: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let (h, wd) = g.out_size().expect("validated geometry");
    let isz = h * wd;
    let plen = g.patch_len();
    let osz = g.height * g.width;
    let mut dx = need[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = need[1].then(|| vec![T::zero(); w.len()]);
    let mut db = need[2].then(|| vec![T::zero(); g.channels]);
    let mut col = vec![T::zero(); plen * isz];
    for n in 0..batch {
        let dy = &dout[n * g.image_len()..(n + 1) * g.image_len()];
        if dx.is_some() || dw.is_some() {
            im2col(g, dy, &mut col);
        }
        if let Some(dx) = dx.as_mut() {
            gemm_nn(in_ch, plen, isz, w, &col, &mut dx[n * in_ch * isz..(n + 1) * in_ch * isz]);
        }
        if let Some(dw) = dw.as_mut() {
            gemm_nt(in_ch, isz, plen, &x[n * in_ch * isz..(n + 1) * in_ch * isz], &col, dw);
        }
        if let Some(db) = db.as_mut() {
            for (o, chunk) in dy.chunks(osz).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
    }
    ConvGrads { input: dx, weight: dw, bias: db }
}

/// Max pooling without padding. Returns pooled values and the flat input
/// index of each window's maximum (first index wins ties).
pub fn maxpool2d_forward<T: Scalar>(shape: &[usize], kernel: usize, stride: usize, x: &[T]) -> Result<(Vec<usize>, Vec<T>, Vec<usize>)> {
    let [n, c, h, w] = four(shape)?;
    if kernel == 0 || stride == 0 || h < kernel || w < kernel {
        return Err(Error::OutputTooSmall { op: "maxpool2d", input: shape.to_vec() });
    }
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + y * stride * w + xo * stride;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = base + (y * stride + ky) * w + xo * stride + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((vec![n, c, oh, ow], out, arg))
}

pub(crate) fn four(shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::ShapeMismatch { expected: vec![0, 0, 0, 0], got: shape.to_vec() }),
    }
}

/// Per-channel statistics of `x[N,C,H,W]`: (mean, biased variance).
pub fn channel_stats<T: Scalar>(shape: [usize; 4], x: &[T]) -> (Vec<T>, Vec<T>) {
    let [n, c, h, w] = shape;
    let hw = h * w;
    let count = T::lit((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s += x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut q = T::zero();
        for b in 0..n {
            for &v in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                q += (v - m) * (v - m);
            }
        }
        mean[ch] = m;
        var[ch] = q / count;
    }
    (mean, var)
}

/// `y = γ·(x−μ)·inv_std + β` per channel; returns `(y, x̂)`.
pub fn batchnorm_apply<T: Scalar>(shape: [usize; 4], x: &[T], mean: &[T], inv_std: &[T], gamma: &[T], beta: &[T]) -> (Vec<T>, Vec<T>) {
    let [n, c, h, w] = shape;
    let hw = h * w;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                let z = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = z;
                y[i] = gamma[ch] * z + beta[ch];
            }
        }
    }
    (y, xhat)
}

/// Gradients of batch norm. With `batch_stats` the mean and variance are
/// functions of `x`; otherwise they are constants (eval mode).
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward<T: Scalar>(
    shape: [usize; 4],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    dy: &[T],
    batch_stats: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = shape;
    let hw = h * w;
    let m = T::lit((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dgamma[ch] += dy[i] * xhat[i];
                dbeta[ch] += dy[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let k = gamma[ch] * inv_std[ch];
            for i in off..off + hw {
                dx[i] = if batch_stats {
                    k * (dy[i] - dbeta[ch] / m - xhat[i] * dgamma[ch] / m)
                } else {
                    k * dy[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Row-wise log-softmax of a `[rows×cols]` matrix, max-shifted.
pub fn log_softmax_rows<T: Scalar>(rows: usize, cols: usize, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    out
}

/// Row-wise softmax of a `[rows×cols]` matrix, max-shifted.
pub fn softmax_rows<T: Scalar>(rows: usize, cols: usize, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let dst = &mut out[r * cols..(r + 1) * cols];
        for (o, &v) in dst.iter_mut().zip(row) {
            *o = (v - max).exp();
        }
        let total = dst.iter().copied().sum::<T>();
        for o in dst.iter_mut() {
            *o /= total;
        }
    }
    out
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Maps each element of `out_shape` to its source index in `b_shape` under
/// trailing-axis broadcasting.
pub fn broadcast_index(out_shape: &[usize], b_shape: &[usize]) -> Result<Vec<usize>> {
    let incompatible = || Error::IncompatibleShapes { lhs: out_shape.to_vec(), rhs: b_shape.to_vec() };
    if b_shape.len() > out_shape.len() {
        return Err(incompatible());
    }
    let offset = out_shape.len() - b_shape.len();
    let mut strides = vec![0usize; out_shape.len()];
    let mut acc = 1;
    for i in (0..b_shape.len()).rev() {
        let (bd, od) = (b_shape[i], out_shape[i + offset]);
        if bd == od {
            strides[i + offset] = acc;
        } else if bd != 1 {
            return Err(incompatible());
        }
        acc *= bd;
    }
    Ok(strided_index(out_shape, &strides))
}

/// Maps each element of `shape` to its index after reducing `axes` away.
pub fn reduce_index(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if !axes.contains(&i) {
            strides[i] = acc;
            acc *= shape[i];
        }
    }
    strided_index(shape, &strides)
}

fn strided_index(shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let total: usize = shape.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    let mut pos = 0usize;
    for _ in 0..total {
        out.push(pos);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            pos += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            pos -= strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64).sin()).collect();
        let mut naive = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    naive[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c);
        assert_eq!(c, naive);
        let mut c = vec![0.0; m * n];
        gemm_tn(m, k, n, &transpose(m, k, &a), &b, &mut c);
        assert!(c.iter().zip(&naive).all(|(x, y)| (x - y).abs() < 1e-12));
        let mut c = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &transpose(k, n, &b), &mut c);
        assert!(c.iter().zip(&naive).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn broadcast_bias_over_channels() {
        let idx = broadcast_index(&[2, 3, 2], &[3, 1]).unwrap();
        assert_eq!(idx, vec![0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 2, 2]);
        assert!(broadcast_index(&[2, 3], &[2]).is_err());
        assert!(broadcast_index(&[3], &[1, 3]).is_err());
    }

    #[test]
    fn reduce_index_drops_axes() {
        assert_eq!(reduce_index(&[2, 3], &[0]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(reduce_index(&[2, 3], &[1]), vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn maxpool_ties_pick_first() {
        let x = [1.0f32; 16];
        let (shape, out, arg) = maxpool2d_forward(&[1, 1, 4, 4], 2, 2, &x).unwrap();
        assert_eq!(shape, vec![1, 1, 2, 2]);
        assert_eq!(out, vec![1.0; 4]);
        assert_eq!(arg, vec![0, 2, 8, 10]);
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax_rows(1, 2, &[1000.0f32, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-6 && p[1].abs() < 1e-6);
        let p = softmax_rows(1, 3, &[0.0f64; 3]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }
}
