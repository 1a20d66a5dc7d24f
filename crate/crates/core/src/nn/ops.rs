//! Forward and backward kernels for the layers used by the U-net.
//!
//! Every op is a pair of free functions. Forward passes return whatever the
//! backward pass needs; backward passes take the upstream gradient and return
//! gradients for inputs and parameters.

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// Gradients of a convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..((ci * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..((ci * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_shapes<T: Scalar>(
    x: &Tensor<T>,
    w: &[T],
    b: &[T],
    cout: usize,
    taps: usize,
) -> Result<()> {
    let cin = x.channels();
    if w.len() != cout * cin * taps {
        return Err(Error::dim(format!(
            "kernel has {} weights, expected {cout}x{cin}x{taps} for {cin} input channels",
            w.len()
        )));
    }
    if b.len() != cout {
        return Err(Error::dim(format!(
            "bias has {} entries for {cout} output channels",
            b.len()
        )));
    }
    Ok(())
}

/// Stride-1 3×3 cross-correlation with one pixel of zero padding.
/// `w` is `(cout, cin, 3, 3)` row-major, `b` has `cout` entries.
pub fn conv3x3<T: Scalar>(x: &Tensor<T>, w: &[T], b: &[T], cout: usize) -> Result<Tensor<T>> {
    check_conv_shapes(x, w, b, cout, 9)?;
    let [n, cin, h, wd] = x.shape();
    let hw = h * wd;
    let mut y = Tensor::zeros([n, cout, h, wd]);
    let mut cols = vec![T::zero(); cin * 9 * hw];
    for s in 0..n {
        im2col(x.sample(s), cin, h, wd, &mut cols);
        let out = y.sample_mut(s);
        for (co, plane) in out.chunks_exact_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = b[co]);
        }
        T::gemm(cout, cin * 9, hw, w, false, &cols, false, T::one(), out);
    }
    Ok(y)
}

pub fn conv3x3_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &[T],
    cout: usize,
    dy: &Tensor<T>,
) -> ConvGrads<T> {
    let [n, cin, h, wd] = x.shape();
    let hw = h * wd;
    let k = cin * 9;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![T::zero(); cout * k];
    let mut db = vec![T::zero(); cout];
    let mut cols = vec![T::zero(); k * hw];
    let mut dcols = vec![T::zero(); k * hw];
    for s in 0..n {
        let g = dy.sample(s);
        for (co, plane) in g.chunks_exact(hw).enumerate() {
            db[co] += plane.iter().copied().sum();
        }
        im2col(x.sample(s), cin, h, wd, &mut cols);
        // dW += dY · colsᵀ
        T::gemm(cout, hw, k, g, false, &cols, true, T::one(), &mut dw);
        // dcols = Wᵀ · dY
        T::gemm(k, cout, hw, w, true, g, false, T::zero(), &mut dcols);
        col2im(&dcols, cin, h, wd, dx.sample_mut(s));
    }
    ConvGrads { dx, dw, db }
}

/// Pointwise channel mixing. `w` is `(cout, cin)`.
pub fn conv1x1<T: Scalar>(x: &Tensor<T>, w: &[T], b: &[T], cout: usize) -> Result<Tensor<T>> {
    check_conv_shapes(x, w, b, cout, 1)?;
    let [n, cin, h, wd] = x.shape();
    let hw = h * wd;
    let mut y = Tensor::zeros([n, cout, h, wd]);
    for s in 0..n {
        let out = y.sample_mut(s);
        for (co, plane) in out.chunks_exact_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = b[co]);
        }
        T::gemm(cout, cin, hw, w, false, x.sample(s), false, T::one(), out);
    }
    Ok(y)
}

pub fn conv1x1_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &[T],
    cout: usize,
    dy: &Tensor<T>,
) -> ConvGrads<T> {
    let [n, cin, h, wd] = x.shape();
    let hw = h * wd;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![T::zero(); cout * cin];
    let mut db = vec![T::zero(); cout];
    for s in 0..n {
        let g = dy.sample(s);
        for (co, plane) in g.chunks_exact(hw).enumerate() {
            db[co] += plane.iter().copied().sum();
        }
        T::gemm(cout, hw, cin, g, false, x.sample(s), true, T::one(), &mut dw);
        T::gemm(cin, cout, hw, w, true, g, false, T::zero(), dx.sample_mut(s));
    }
    ConvGrads { dx, dw, db }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = v.max(T::zero()));
    y
}

/// Gradient through ReLU given its output; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(y.as_slice()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

fn check_even<T: Scalar>(x: &Tensor<T>) -> Result<()> {
    if x.height() % 2 != 0 || x.width() % 2 != 0 {
        return Err(Error::dim(format!(
            "2x2 pooling needs even sides, got {}x{}",
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

/// Non-overlapping 2×2 max pooling. Returns the pooled tensor and, for each
/// output element, the flat input index it came from (first maximum in
/// row-major order wins).
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    check_even(x)?;
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    let src = x.as_slice();
    let dst = y.as_mut_slice();
    for p in 0..n * c {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = p * oh * ow + i * ow + j;
                dst[o] = src[best];
                arg[o] = best as u32;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_backward<T: Scalar>(
    input_shape: [usize; 4],
    argmax: &[u32],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.as_mut_slice();
    for (&i, &g) in argmax.iter().zip(dy.as_slice()) {
        d[i as usize] += g;
    }
    dx
}

/// 2×2 unpooling: every input pixel is replicated into a 2×2 block.
pub fn avg_unpool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let src = x.as_slice();
    let dst = y.as_mut_slice();
    for p in 0..n * c {
        for i in 0..oh {
            let srow = &src[p * h * w + (i / 2) * w..p * h * w + (i / 2 + 1) * w];
            let drow = &mut dst[p * oh * ow + i * ow..p * oh * ow + (i + 1) * ow];
            for (j, v) in drow.iter_mut().enumerate() {
                *v = srow[j / 2];
            }
        }
    }
    y
}

/// Adjoint of [`avg_unpool2`]: the sum (4 × mean) of each 2×2 gradient block.
pub fn avg_unpool2_backward<T: Scalar>(dy: &Tensor<T>) -> Result<Tensor<T>> {
    check_even(dy)?;
    let [n, c, oh, ow] = dy.shape();
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    let src = dy.as_slice();
    let dst = dx.as_mut_slice();
    for p in 0..n * c {
        for i in 0..oh {
            for j in 0..ow {
                dst[p * h * w + (i / 2) * w + j / 2] += src[p * oh * ow + i * ow + j];
            }
        }
    }
    Ok(dx)
}

/// Channel concatenation `[a, b]`.
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [na, ca, ha, wa] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::dim(format!(
            "cannot concatenate {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..na {
        data.extend_from_slice(a.sample(s));
        data.extend_from_slice(b.sample(s));
    }
    Tensor::from_vec([na, ca + cb, ha, wa], data)
}

/// Splits a concatenation gradient back into its two branches.
pub fn concat_backward<T: Scalar>(dy: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = dy.shape();
    let cb = c - ca;
    let mut da = Vec::with_capacity(n * ca * h * w);
    let mut db = Vec::with_capacity(n * cb * h * w);
    for s in 0..n {
        let g = dy.sample(s);
        da.extend_from_slice(&g[..ca * h * w]);
        db.extend_from_slice(&g[ca * h * w..]);
    }
    (
        Tensor::from_vec([n, ca, h, w], da).expect("split shape"),
        Tensor::from_vec([n, cb, h, w], db).expect("split shape"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnRunning<T> {
    pub fn new(channels: usize) -> Self {
        BnRunning {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// What batch-norm backward needs.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

/// Per-channel normalization over `(batch, height, width)`.
///
/// In train mode batch statistics are used and the running statistics are
/// blended as `running = momentum · running + (1 - momentum) · batch`
/// (unbiased variance); eval mode normalizes with the running statistics.
pub fn batchnorm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running: &mut BnRunning<T>,
    mode: Mode,
    momentum: f64,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let [n, c, h, w] = x.shape();
    if n == 0 {
        return Err(Error::dim("batch norm on an empty batch"));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::dim(format!(
            "batch norm over {c} channels got {} scales and {} shifts",
            gamma.len(),
            beta.len()
        )));
    }
    let hw = h * w;
    let count = n * hw;
    let eps = T::of(BN_EPS);
    let mut mean = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    match mode {
        Mode::Train => {
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut acc = 0.0f64;
                for s in 0..n {
                    acc += x.sample(s)[ch * hw..(ch + 1) * hw]
                        .iter()
                        .map(|v| v.as_f64())
                        .sum::<f64>();
                }
                let mu = acc / count as f64;
                let mut sq = 0.0f64;
                for s in 0..n {
                    sq += x.sample(s)[ch * hw..(ch + 1) * hw]
                        .iter()
                        .map(|v| (v.as_f64() - mu).powi(2))
                        .sum::<f64>();
                }
                let biased = sq / count as f64;
                mean[ch] = T::of(mu);
                var[ch] = T::of(biased);
                inv_std[ch] = T::of(1.0 / (biased + BN_EPS).sqrt());
                let unbiased = if count > 1 {
                    sq / (count - 1) as f64
                } else {
                    biased
                };
                running.mean[ch] =
                    T::of(momentum * running.mean[ch].as_f64() + (1.0 - momentum) * mu);
                running.var[ch] =
                    T::of(momentum * running.var[ch].as_f64() + (1.0 - momentum) * unbiased);
            }
        }
        Mode::Eval => {
            for ch in 0..c {
                mean[ch] = running.mean[ch];
                inv_std[ch] = T::one() / (running.var[ch] + eps).sqrt();
            }
        }
    }
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for s in 0..n {
        let xs = x.sample(s);
        let xh = xhat.sample_mut(s);
        for ch in 0..c {
            for i in ch * hw..(ch + 1) * hw {
                xh[i] = (xs[i] - mean[ch]) * inv_std[ch];
            }
        }
        let ys = y.sample_mut(s);
        let xh = xhat.sample(s);
        for ch in 0..c {
            for i in ch * hw..(ch + 1) * hw {
                ys[i] = gamma[ch] * xh[i] + beta[ch];
            }
        }
    }
    Ok((y, BnCache { xhat, inv_std, mode }))
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

pub fn batchnorm_backward<T: Scalar>(cache: &BnCache<T>, gamma: &[T], dy: &Tensor<T>) -> BnGrads<T> {
    let [n, c, h, w] = dy.shape();
    let hw = h * w;
    let count = T::of((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n {
        let g = dy.sample(s);
        let xh = cache.xhat.sample(s);
        for ch in 0..c {
            for i in ch * hw..(ch + 1) * hw {
                dbeta[ch] += g[i];
                dgamma[ch] += g[i] * xh[i];
            }
        }
    }
    let mut dx = Tensor::zeros(dy.shape());
    for s in 0..n {
        let g = dy.sample(s);
        let xh = cache.xhat.sample(s);
        let d = dx.sample_mut(s);
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    let mb = dbeta[ch] / count;
                    let mg = dgamma[ch] / count;
                    for i in ch * hw..(ch + 1) * hw {
                        d[i] = k * (g[i] - mb - xh[i] * mg);
                    }
                }
                Mode::Eval => {
                    for i in ch * hw..(ch + 1) * hw {
                        d[i] = k * g[i];
                    }
                }
            }
        }
    }
    BnGrads { dx, dgamma, dbeta }
}

/// `Σ (pred - label)² / batch` and its gradient with respect to `pred`.
pub fn loss_l2<T: Scalar>(pred: &Tensor<T>, label: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != label.shape() {
        return Err(Error::dim(format!(
            "prediction {:?} and label {:?} differ in shape",
            pred.shape(),
            label.shape()
        )));
    }
    let n = T::of(pred.batch().max(1) as f64);
    let mut grad = Tensor::zeros(pred.shape());
    let mut acc = T::zero();
    for ((g, &p), &l) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(label.as_slice())
    {
        let d = p - l;
        acc += d * d;
        *g = (d + d) / n;
    }
    Ok((acc / n, grad))
}
