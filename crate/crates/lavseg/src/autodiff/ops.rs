//! Layer forward/backward implementations.
//!
//! Convolutions run as im2col + GEMM. Backward passes return exact
//! gradients of their forward maps; every op here is covered by the
//! finite-difference oracle in the test suite.

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::tensor::{Parameter, Scalar, Tensor};

/// Clamp bound for binary cross-entropy probabilities.
pub const BCE_EPS: f64 = 1e-7;

/// Reusable im2col buffers owned by a network instance.
#[derive(Debug, Clone, Default)]
pub struct Scratch<S> {
    cols: Vec<S>,
    cols2: Vec<S>,
}

impl<S: Scalar> Scratch<S> {
    pub fn new() -> Scratch<S> {
        Scratch {
            cols: Vec::new(),
            cols2: Vec::new(),
        }
    }
}

fn ensure_len<S: Scalar>(buf: &mut Vec<S>, len: usize) {
    if buf.len() < len {
        buf.resize(len, S::ZERO);
    }
}

/// Copy one batch item into im2col layout: row `r = ci*9 + kh*3 + kw`
/// holds the input plane shifted by `(kh-1, kw-1)` with zero padding.
fn im2col<S: Scalar>(item: &[S], ci: usize, h: usize, w: usize, cols: &mut [S]) {
    let hw = h * w;
    for c in 0..ci {
        let plane = &item[c * hw..(c + 1) * hw];
        for k in 0..9 {
            let dy = (k / 3) as isize - 1;
            let dx = (k % 3) as isize - 1;
            let row = &mut cols[(c * 9 + k) * hw..(c * 9 + k + 1) * hw];
            let src_lo = dx.max(0) as usize;
            let dst_lo = (-dx).max(0) as usize;
            let len = w - dx.unsigned_abs();
            for y in 0..h {
                let sy = y as isize + dy;
                let dst = &mut row[y * w..(y + 1) * w];
                if sy < 0 || sy >= h as isize {
                    dst.fill(S::ZERO);
                    continue;
                }
                let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                if dst_lo > 0 {
                    dst[0] = S::ZERO;
                }
                if src_lo > 0 {
                    dst[w - 1] = S::ZERO;
                }
                dst[dst_lo..dst_lo + len].copy_from_slice(&src[src_lo..src_lo + len]);
            }
        }
    }
}

/// Scatter-add an im2col-layout gradient back onto an input item.
fn col2im_add<S: Scalar>(cols: &[S], ci: usize, h: usize, w: usize, item: &mut [S]) {
    let hw = h * w;
    for c in 0..ci {
        let plane = &mut item[c * hw..(c + 1) * hw];
        for k in 0..9 {
            let dy = (k / 3) as isize - 1;
            let dx = (k % 3) as isize - 1;
            let row = &cols[(c * 9 + k) * hw..(c * 9 + k + 1) * hw];
            let src_lo = dx.max(0) as usize;
            let dst_lo = (-dx).max(0) as usize;
            let len = w - dx.unsigned_abs();
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let src = &row[y * w + dst_lo..y * w + dst_lo + len];
                let dst = &mut plane[sy as usize * w + src_lo..sy as usize * w + src_lo + len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += *s;
                }
            }
        }
    }
}

fn conv_shapes<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, bias: &[S]) -> Result<()> {
    if weight.h != 3 || weight.w != 3 {
        return Err(Error::Shape(format!(
            "convolution kernel must be 3x3, got {}x{}",
            weight.h, weight.w
        )));
    }
    if x.c != weight.c {
        return Err(Error::Shape(format!(
            "input has {} channels, kernel expects {}",
            x.c, weight.c
        )));
    }
    if bias.len() != weight.n {
        return Err(Error::Shape(format!(
            "bias length {} does not match {} output channels",
            bias.len(),
            weight.n
        )));
    }
    Ok(())
}

/// 3×3 convolution, stride 1, zero padding 1 (spatial dims preserved).
pub fn conv2d_fwd<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &[S],
    scratch: &mut Scratch<S>,
) -> Result<Tensor<S>> {
    conv_shapes(x, weight, bias)?;
    let (n, ci, h, w) = x.shape();
    let co = weight.n;
    let hw = h * w;
    let k = ci * 9;
    ensure_len(&mut scratch.cols, k * hw);
    let mut y = Tensor::zeros(n, co, h, w);
    for item in 0..n {
        im2col(x.item(item), ci, h, w, &mut scratch.cols[..k * hw]);
        S::gemm(
            co,
            k,
            hw,
            S::ONE,
            &weight.data,
            k as isize,
            1,
            &scratch.cols[..k * hw],
            hw as isize,
            1,
            S::ZERO,
            y.item_mut(item),
            hw as isize,
            1,
        );
        for c in 0..co {
            let b = bias[c];
            for v in y.plane_mut(item, c) {
                *v += b;
            }
        }
    }
    Ok(y)
}

/// Backward of [`conv2d_fwd`]: gradients for input, weights, and bias.
pub fn conv2d_bwd<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    upstream: &Tensor<S>,
    scratch: &mut Scratch<S>,
) -> Result<(Tensor<S>, Tensor<S>, Vec<S>)> {
    let (n, ci, h, w) = x.shape();
    let co = weight.n;
    if upstream.shape() != (n, co, h, w) {
        return Err(Error::Shape(format!(
            "upstream shape {:?} does not match convolution output ({n}, {co}, {h}, {w})",
            upstream.shape()
        )));
    }
    let hw = h * w;
    let k = ci * 9;
    ensure_len(&mut scratch.cols, k * hw);
    ensure_len(&mut scratch.cols2, k * hw);

    let mut db = vec![S::ZERO; co];
    for item in 0..n {
        for c in 0..co {
            let mut acc = S::ZERO;
            for v in upstream.plane(item, c) {
                acc += *v;
            }
            db[c] += acc;
        }
    }

    let mut dw = Tensor::zeros(co, ci, 3, 3);
    let mut dx = Tensor::zeros(n, ci, h, w);
    for item in 0..n {
        im2col(x.item(item), ci, h, w, &mut scratch.cols[..k * hw]);
        // dW += dY_n (co×hw) @ cols_n^T (hw×k)
        S::gemm(
            co,
            hw,
            k,
            S::ONE,
            upstream.item(item),
            hw as isize,
            1,
            &scratch.cols[..k * hw],
            1,
            hw as isize,
            S::ONE,
            &mut dw.data,
            k as isize,
            1,
        );
        // col-grad = W^T (k×co) @ dY_n (co×hw)
        S::gemm(
            k,
            co,
            hw,
            S::ONE,
            &weight.data,
            1,
            k as isize,
            upstream.item(item),
            hw as isize,
            1,
            S::ZERO,
            &mut scratch.cols2[..k * hw],
            hw as isize,
            1,
        );
        col2im_add(&scratch.cols2[..k * hw], ci, h, w, dx.item_mut(item));
    }
    Ok((dx, dw, db))
}

/// 2×2 max pooling with stride 2. Ties break to the first element in
/// row-major window order; the returned indices (0..4, row-major window
/// position) drive the backward routing and max unpooling.
pub fn maxpool2_fwd<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<u8>)> {
    let (n, c, h, w) = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "max pooling needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(n, c, oh, ow);
    let mut idx = vec![0u8; n * c * oh * ow];
    let mut out_pos = 0usize;
    for item in 0..n {
        for ch in 0..c {
            let plane = x.plane(item, ch);
            let out_plane = y.plane_mut(item, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (oy * 2) * w + ox * 2;
                    let mut best = plane[base];
                    let mut best_k = 0u8;
                    for k in 1..4u8 {
                        let (a, b) = ((k / 2) as usize, (k % 2) as usize);
                        let v = plane[base + a * w + b];
                        if v > best {
                            best = v;
                            best_k = k;
                        }
                    }
                    out_plane[oy * ow + ox] = best;
                    idx[out_pos] = best_k;
                    out_pos += 1;
                }
            }
        }
    }
    Ok((y, idx))
}

/// Backward of [`maxpool2_fwd`]: route each upstream value to its argmax.
pub fn maxpool2_bwd<S: Scalar>(
    upstream: &Tensor<S>,
    indices: &[u8],
    in_h: usize,
    in_w: usize,
) -> Result<Tensor<S>> {
    let (n, c, oh, ow) = upstream.shape();
    if indices.len() != upstream.len() || oh * 2 != in_h || ow * 2 != in_w {
        return Err(Error::Shape("pooling indices do not match upstream shape".into()));
    }
    let mut dx = Tensor::zeros(n, c, in_h, in_w);
    let mut pos = 0usize;
    for item in 0..n {
        for ch in 0..c {
            let up = upstream.plane(item, ch);
            let plane = dx.plane_mut(item, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let k = indices[pos] as usize;
                    let (a, b) = (k / 2, k % 2);
                    plane[(oy * 2 + a) * in_w + ox * 2 + b] = up[oy * ow + ox];
                    pos += 1;
                }
            }
        }
    }
    Ok(dx)
}

/// Max unpooling: place each value at its recorded argmax position in a
/// 2×2 window, zeros elsewhere.
pub fn maxunpool2_fwd<S: Scalar>(x: &Tensor<S>, indices: &[u8]) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.shape();
    if indices.len() != x.len() {
        return Err(Error::Shape(format!(
            "unpool indices length {} does not match input {}",
            indices.len(),
            x.len()
        )));
    }
    let (oh, ow) = (h * 2, w * 2);
    let mut y = Tensor::zeros(n, c, oh, ow);
    let mut pos = 0usize;
    for item in 0..n {
        for ch in 0..c {
            let src = x.plane(item, ch);
            let dst = y.plane_mut(item, ch);
            for iy in 0..h {
                for ix in 0..w {
                    let k = indices[pos] as usize;
                    let (a, b) = (k / 2, k % 2);
                    dst[(iy * 2 + a) * ow + ix * 2 + b] = src[iy * w + ix];
                    pos += 1;
                }
            }
        }
    }
    Ok(y)
}

/// Backward of [`maxunpool2_fwd`]: gather from the recorded positions.
pub fn maxunpool2_bwd<S: Scalar>(upstream: &Tensor<S>, indices: &[u8]) -> Result<Tensor<S>> {
    let (n, c, oh, ow) = upstream.shape();
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::Shape("unpool upstream dims must be even".into()));
    }
    let (h, w) = (oh / 2, ow / 2);
    if indices.len() != n * c * h * w {
        return Err(Error::Shape("unpool indices do not match upstream shape".into()));
    }
    let mut dx = Tensor::zeros(n, c, h, w);
    let mut pos = 0usize;
    for item in 0..n {
        for ch in 0..c {
            let up = upstream.plane(item, ch);
            let dst = dx.plane_mut(item, ch);
            for iy in 0..h {
                for ix in 0..w {
                    let k = indices[pos] as usize;
                    let (a, b) = (k / 2, k % 2);
                    dst[iy * w + ix] = up[(iy * 2 + a) * ow + ix * 2 + b];
                    pos += 1;
                }
            }
        }
    }
    Ok(dx)
}

/// Nearest-neighbor 2× upsampling: `y[2i+a, 2j+b] = x[i, j]`.
pub fn upsample2_fwd<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = x.shape();
    let (oh, ow) = (h * 2, w * 2);
    let mut y = Tensor::zeros(n, c, oh, ow);
    for item in 0..n {
        for ch in 0..c {
            let src = x.plane(item, ch);
            let dst = y.plane_mut(item, ch);
            for iy in 0..h {
                let row = &src[iy * w..(iy + 1) * w];
                for a in 0..2 {
                    let base = (iy * 2 + a) * ow;
                    for (ix, &v) in row.iter().enumerate() {
                        dst[base + ix * 2] = v;
                        dst[base + ix * 2 + 1] = v;
                    }
                }
            }
        }
    }
    y
}

/// Backward of [`upsample2_fwd`]: each input cell receives the sum of its
/// 2×2 output block.
pub fn upsample2_bwd<S: Scalar>(upstream: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, oh, ow) = upstream.shape();
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::Shape("upsample upstream dims must be even".into()));
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor::zeros(n, c, h, w);
    for item in 0..n {
        for ch in 0..c {
            let up = upstream.plane(item, ch);
            let dst = dx.plane_mut(item, ch);
            for iy in 0..h {
                for ix in 0..w {
                    let base = (iy * 2) * ow + ix * 2;
                    dst[iy * w + ix] = up[base] + up[base + 1] + up[base + ow] + up[base + ow + 1];
                }
            }
        }
    }
    Ok(dx)
}

/// Concatenate along the channel axis (`a`'s channels first).
pub fn concat_channels_fwd<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.n != b.n || a.h != b.h || a.w != b.w {
        return Err(Error::Shape(format!(
            "concat inputs disagree: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut y = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    for item in 0..a.n {
        let dst = y.item_mut(item);
        let a_len = a.c * a.h * a.w;
        dst[..a_len].copy_from_slice(a.item(item));
        dst[a_len..].copy_from_slice(b.item(item));
    }
    Ok(y)
}

/// Backward of [`concat_channels_fwd`]: split upstream at `ca` channels.
pub fn concat_channels_bwd<S: Scalar>(
    upstream: &Tensor<S>,
    ca: usize,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (n, c, h, w) = upstream.shape();
    if ca > c {
        return Err(Error::Shape(format!("cannot split {c} channels at {ca}")));
    }
    let cb = c - ca;
    let mut da = Tensor::zeros(n, ca, h, w);
    let mut db = Tensor::zeros(n, cb, h, w);
    for item in 0..n {
        let src = upstream.item(item);
        let a_len = ca * h * w;
        da.item_mut(item).copy_from_slice(&src[..a_len]);
        db.item_mut(item).copy_from_slice(&src[a_len..]);
    }
    Ok((da, db))
}

/// Elementwise `max(0, x)`.
pub fn relu_fwd<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let mut y = x.clone();
    for v in &mut y.data {
        if !(*v > S::ZERO) {
            *v = S::ZERO;
        }
    }
    y
}

/// Backward of ReLU; the derivative at exactly zero is zero.
pub fn relu_bwd<S: Scalar>(x: &Tensor<S>, upstream: &Tensor<S>) -> Tensor<S> {
    debug_assert!(x.same_shape(upstream));
    let mut dx = upstream.clone();
    for (d, v) in dx.data.iter_mut().zip(&x.data) {
        if !(*v > S::ZERO) {
            *d = S::ZERO;
        }
    }
    dx
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid_fwd<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let mut y = x.clone();
    for v in &mut y.data {
        *v = if *v >= S::ZERO {
            S::ONE / (S::ONE + (-*v).exp())
        } else {
            let e = (*v).exp();
            e / (S::ONE + e)
        };
    }
    y
}

/// Backward of sigmoid given its output `y`.
pub fn sigmoid_bwd<S: Scalar>(y: &Tensor<S>, upstream: &Tensor<S>) -> Tensor<S> {
    debug_assert!(y.same_shape(upstream));
    let mut dx = upstream.clone();
    for (d, v) in dx.data.iter_mut().zip(&y.data) {
        *d *= *v * (S::ONE - *v);
    }
    dx
}

/// Mask recorded by a dropout forward pass.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    /// One byte per element: 1 = kept. `None` when dropout was inactive.
    pub keep: Option<Vec<u8>>,
    pub scale: f64,
}

/// Inverted dropout: zero each element with probability `rate` during
/// training and scale survivors by `1/(1-rate)`; at inference the op is
/// the identity (bitwise).
pub fn dropout_fwd<S: Scalar>(
    x: &Tensor<S>,
    rate: f64,
    training: bool,
    rng: &mut RngStream,
) -> Result<(Tensor<S>, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((
            x.clone(),
            DropoutMask {
                keep: None,
                scale: 1.0,
            },
        ));
    }
    let scale = 1.0 / (1.0 - rate);
    let scale_s = S::from_f64(scale);
    let mut y = x.clone();
    let mut keep = vec![1u8; x.len()];
    for (v, k) in y.data.iter_mut().zip(&mut keep) {
        if rng.uniform_f64() < rate {
            *v = S::ZERO;
            *k = 0;
        } else {
            *v *= scale_s;
        }
    }
    Ok((
        y,
        DropoutMask {
            keep: Some(keep),
            scale,
        },
    ))
}

/// Backward of dropout using the recorded mask.
pub fn dropout_bwd<S: Scalar>(upstream: &Tensor<S>, mask: &DropoutMask) -> Tensor<S> {
    match &mask.keep {
        None => upstream.clone(),
        Some(keep) => {
            let scale = S::from_f64(mask.scale);
            let mut dx = upstream.clone();
            for (d, &k) in dx.data.iter_mut().zip(keep) {
                if k == 0 {
                    *d = S::ZERO;
                } else {
                    *d *= scale;
                }
            }
            dx
        }
    }
}

/// Mean binary cross-entropy with clamped probabilities.
///
/// Returns the scalar loss and the gradient with respect to `pred`.
/// Predictions outside `[BCE_EPS, 1-BCE_EPS]` saturate the clamp, so
/// their gradient is zero.
pub fn bce_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<(f64, Tensor<S>)> {
    if !pred.same_shape(target) {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} shapes differ",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut sum = 0.0f64;
    let mut grad = Tensor::zeros(pred.n, pred.c, pred.h, pred.w);
    for i in 0..pred.len() {
        let raw = pred.data[i].to_f64();
        let t = target.data[i].to_f64();
        let p = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        sum -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        let saturated = raw < BCE_EPS || raw > 1.0 - BCE_EPS;
        if !saturated {
            grad.data[i] = S::from_f64((-t / p + (1.0 - t) / (1.0 - p)) / n);
        }
    }
    Ok((sum / n, grad))
}

/// L2 penalty `(lambda/2) * sum(w^2)` over decay-eligible parameters;
/// adds `lambda * w` to each such gradient. Biases never contribute.
pub fn l2_penalty<S: Scalar>(params: &mut [&mut Parameter<S>], lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let lam = S::from_f64(lambda);
    let mut sum = 0.0f64;
    for p in params.iter_mut() {
        if !p.decay_eligible {
            continue;
        }
        for (g, &w) in p.grad.data.iter_mut().zip(&p.value.data) {
            sum += w.to_f64() * w.to_f64();
            *g += lam * w;
        }
    }
    lambda / 2.0 * sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor_f64(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(n, c, h, w, data)
    }

    #[test]
    fn conv_identity_kernel_is_bitwise_identity() {
        let x: Tensor<f32> =
            Tensor::from_vec(1, 1, 3, 3, (0..9).map(|i| i as f32 * 0.31 - 1.0).collect());
        let mut w = Tensor::zeros(1, 1, 3, 3);
        w.data[4] = 1.0; // center tap
        let mut scratch = Scratch::new();
        let y = conv2d_fwd(&x, &w, &[0.0], &mut scratch).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn conv_all_ones_kernel_interior() {
        let c = 0.7f32;
        let x: Tensor<f32> = Tensor::from_vec(1, 1, 5, 5, vec![c; 25]);
        let w: Tensor<f32> = Tensor::from_vec(1, 1, 3, 3, vec![1.0; 9]);
        let b = [0.25f32];
        let mut scratch = Scratch::new();
        let y = conv2d_fwd(&x, &w, &b, &mut scratch).unwrap();
        // Interior pixel sees all nine taps.
        let center = y.plane(0, 0)[2 * 5 + 2];
        assert!((center - (9.0 * c + 0.25)).abs() < 1e-6);
        // Corner only sees four.
        let corner = y.plane(0, 0)[0];
        assert!((corner - (4.0 * c + 0.25)).abs() < 1e-6);
    }

    #[test]
    fn conv_channel_mismatch_rejected() {
        let x: Tensor<f32> = Tensor::zeros(1, 2, 4, 4);
        let w: Tensor<f32> = Tensor::zeros(3, 1, 3, 3);
        let mut scratch = Scratch::new();
        assert!(matches!(
            conv2d_fwd(&x, &w, &[0.0; 3], &mut scratch),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn maxpool_window_cases() {
        let x = tensor_f64(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let (y, idx) = maxpool2_fwd(&x).unwrap();
        assert_eq!(y.data, vec![4.0]);
        assert_eq!(idx, vec![3]); // window position (1,1)

        let constant = tensor_f64(1, 1, 4, 4, vec![2.5; 16]);
        let (_, idx) = maxpool2_fwd(&constant).unwrap();
        assert!(idx.iter().all(|&k| k == 0)); // ties go to (0,0)
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let x = tensor_f64(1, 1, 3, 4, vec![0.0; 12]);
        assert!(matches!(maxpool2_fwd(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_bwd_routes_one_value_per_window() {
        let data: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
        let x = tensor_f64(1, 1, 4, 4, data);
        let (y, idx) = maxpool2_fwd(&x).unwrap();
        let ones = Tensor::from_vec(1, 1, 2, 2, vec![1.0f64; 4]);
        let dx = maxpool2_bwd(&ones, &idx, 4, 4).unwrap();
        // Brute force: exactly one 1 per window, at the max position.
        for oy in 0..2 {
            for ox in 0..2 {
                let mut count = 0;
                for a in 0..2 {
                    for b in 0..2 {
                        let pos = (oy * 2 + a) * 4 + ox * 2 + b;
                        if dx.data[pos] != 0.0 {
                            count += 1;
                            assert_eq!(x.data[pos], y.data[oy * 2 + ox]);
                        }
                    }
                }
                assert_eq!(count, 1);
            }
        }
    }

    #[test]
    fn unpool_places_values_at_recorded_positions() {
        let data: Vec<f64> = vec![5.0, 1.0, 2.0, 8.0, 3.0, 9.0, 7.0, 4.0, 6.0, 0.5, 1.5, 2.5, 3.5, 4.5, 5.5, 6.5];
        let x = tensor_f64(1, 1, 4, 4, data);
        let (pooled, idx) = maxpool2_fwd(&x).unwrap();
        let y = maxunpool2_fwd(&pooled, &idx).unwrap();
        // Brute-force placement check on the 4x4 plane.
        let mut pos = 0;
        for oy in 0..2 {
            for ox in 0..2 {
                let k = idx[pos] as usize;
                for a in 0..2 {
                    for b in 0..2 {
                        let v = y.data[(oy * 2 + a) * 4 + ox * 2 + b];
                        if a * 2 + b == k {
                            assert_eq!(v, pooled.data[oy * 2 + ox]);
                        } else {
                            assert_eq!(v, 0.0);
                        }
                    }
                }
                pos += 1;
            }
        }
    }

    #[test]
    fn upsample_broadcast_and_block_sum() {
        let x = tensor_f64(1, 1, 1, 1, vec![5.0]);
        let y = upsample2_fwd(&x);
        assert_eq!(y.data, vec![5.0; 4]);

        let ones = tensor_f64(1, 1, 2, 2, vec![1.0; 4]);
        let dx = upsample2_bwd(&ones).unwrap();
        assert_eq!(dx.data, vec![4.0]);
    }

    #[test]
    fn upsample_then_average_downsample_recovers_input() {
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.37).collect();
        let x = tensor_f64(1, 1, 3, 4, data);
        let y = upsample2_fwd(&x);
        let summed = upsample2_bwd(&y).unwrap();
        for (s, v) in summed.data.iter().zip(&x.data) {
            assert!((s / 4.0 - v).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_ordering_and_split() {
        let a = tensor_f64(1, 2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = tensor_f64(1, 3, 1, 2, vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let y = concat_channels_fwd(&a, &b).unwrap();
        assert_eq!(y.c, 5);
        assert_eq!(y.plane(0, 0), &[1.0, 2.0]);
        assert_eq!(y.plane(0, 2), &[5.0, 6.0]);
        let (da, db) = concat_channels_bwd(&y, 2).unwrap();
        assert_eq!(da.data, a.data);
        assert_eq!(db.data, b.data);
    }

    #[test]
    fn concat_with_empty_is_identity() {
        let a = tensor_f64(1, 2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let empty: Tensor<f64> = Tensor::zeros(1, 0, 1, 2);
        let y = concat_channels_fwd(&a, &empty).unwrap();
        assert_eq!(y.data, a.data);
        assert_eq!(y.c, 2);
    }

    #[test]
    fn relu_cases() {
        let x = tensor_f64(1, 1, 1, 3, vec![-3.0, 0.0, 2.0]);
        let y = relu_fwd(&x);
        assert_eq!(y.data, vec![0.0, 0.0, 2.0]);
        let up = tensor_f64(1, 1, 1, 3, vec![1.0, 1.0, 1.0]);
        let dx = relu_bwd(&x, &up);
        assert_eq!(dx.data, vec![0.0, 0.0, 1.0]); // derivative at 0 is 0
    }

    #[test]
    fn sigmoid_cases() {
        let x = tensor_f64(1, 1, 1, 3, vec![0.0, 40.0, -40.0]);
        let y = sigmoid_fwd(&x);
        assert_eq!(y.data[0], 0.5);
        // No overflow at large magnitudes. A naive 1/(1+exp(-x)) would
        // overflow exp at x=-40 and collapse to exactly 0; the stable
        // branch keeps the tiny positive value. (At +40 the true value
        // rounds to 1.0 in both f32 and f64.)
        assert!(y.data[1].is_finite() && y.data[1] > 0.9999 && y.data[1] <= 1.0);
        assert!(y.data[2].is_finite() && y.data[2] > 0.0 && y.data[2] < 1e-15);
        let xf: Tensor<f32> = x.cast();
        let yf = sigmoid_fwd(&xf);
        assert!(yf.data.iter().all(|v| v.is_finite()));
        assert!(yf.data[2] > 0.0);
    }

    #[test]
    fn dropout_identity_modes() {
        let x = tensor_f64(1, 1, 4, 4, (0..16).map(|i| i as f64).collect());
        let mut rng = RngStream::new(5);
        let (y, _) = dropout_fwd(&x, 0.5, false, &mut rng).unwrap();
        assert_eq!(y.data, x.data);
        let (y, _) = dropout_fwd(&x, 0.0, true, &mut rng).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn dropout_rate_one_rejected() {
        let x: Tensor<f64> = Tensor::zeros(1, 1, 2, 2);
        let mut rng = RngStream::new(5);
        assert!(matches!(
            dropout_fwd(&x, 1.0, true, &mut rng),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn dropout_zero_fraction_near_rate() {
        let x: Tensor<f64> = Tensor::from_vec(1, 1, 1000, 1000, vec![1.0; 1_000_000]);
        let mut rng = RngStream::derive(42, "dropout-test", 0);
        let (y, mask) = dropout_fwd(&x, 0.1, true, &mut rng).unwrap();
        let zeros = y.data.iter().filter(|&&v| v == 0.0).count();
        let frac = zeros as f64 / 1e6;
        assert!((frac - 0.1).abs() < 0.003, "zero fraction {frac}");
        // Survivors carry the inverted-dropout scale.
        let kept = y.data.iter().find(|&&v| v != 0.0).unwrap();
        assert!((kept - 1.0 / 0.9).abs() < 1e-12);
        // Backward reuses the same mask.
        let up = Tensor::from_vec(1, 1, 1000, 1000, vec![1.0; 1_000_000]);
        let dx = dropout_bwd(&up, &mask);
        assert_eq!(
            dx.data.iter().filter(|&&v| v == 0.0).count(),
            zeros
        );
    }

    #[test]
    fn bce_uniform_half_is_ln2() {
        let pred = tensor_f64(1, 1, 2, 2, vec![0.5; 4]);
        let target = tensor_f64(1, 1, 2, 2, vec![1.0, 0.0, 1.0, 0.0]);
        let (loss, _) = bce_loss(&pred, &target).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_is_tiny() {
        let pred = tensor_f64(1, 1, 1, 4, vec![1.0, 0.0, 1.0, 0.0]);
        let target = pred.clone();
        let (loss, grad) = bce_loss(&pred, &target).unwrap();
        assert!(loss <= 1.2e-7);
        assert!(grad.data.iter().all(|&g| g == 0.0)); // clamp saturates
    }

    #[test]
    fn bce_shape_mismatch_rejected() {
        let pred: Tensor<f64> = Tensor::zeros(1, 1, 2, 2);
        let target: Tensor<f64> = Tensor::zeros(1, 1, 2, 3);
        assert!(matches!(bce_loss(&pred, &target), Err(Error::Shape(_))));
    }

    #[test]
    fn l2_penalty_cases() {
        let mut w = Parameter::new(
            "w",
            Tensor::from_vec(1, 1, 1, 1, vec![2.0f64]),
            true,
        );
        let mut b = Parameter::new(
            "b",
            Tensor::from_vec(1, 1, 1, 1, vec![3.0f64]),
            false,
        );
        let penalty = l2_penalty(&mut [&mut w, &mut b], 0.001);
        assert!((penalty - 0.002).abs() < 1e-12);
        assert!((w.grad.data[0] - 0.002).abs() < 1e-12);
        assert_eq!(b.grad.data[0], 0.0); // biases excluded

        w.zero_grad();
        let penalty = l2_penalty(&mut [&mut w, &mut b], 0.0);
        assert_eq!(penalty, 0.0);
        assert_eq!(w.grad.data[0], 0.0);
    }
}
