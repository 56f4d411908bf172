//! Forward and backward kernels for every differentiable primitive.
//!
//! Kernels are pure functions over [`Tensor`] values. The tape (see
//! `tape.rs`) wires them together; nothing here knows about autodiff
//! bookkeeping. Forward kernels validate shapes and return `Result`;
//! backward kernels are only reachable through the tape with shapes the
//! forward pass already accepted, so they assert instead of returning errors.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

// ---------------------------------------------------------------- conv2d

/// Cross-correlation with zero padding.
/// x: (N, C_in, H, W), w: (C_out, C_in, R, S), b: (1, C_out, 1, 1).
/// Output spatial size: (H + 2*padding - R) / stride + 1, which must be >= 1.
pub fn conv2d_fwd(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (xs, ws) = (x.shape, w.shape);
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be >= 1"));
    }
    if ws.c != xs.c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels, weight expects {}", xs.c, ws.c),
        ));
    }
    if b.shape != Shape::new(1, ws.n, 1, 1) {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {} does not match {} output channels", b.shape, ws.n),
        ));
    }
    let (r, s) = (ws.h, ws.w);
    if xs.h + 2 * padding < r || xs.w + 2 * padding < s {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {}x{} larger than padded input {}x{}", r, s, xs.h + 2 * padding, xs.w + 2 * padding),
        ));
    }
    let oh = (xs.h + 2 * padding - r) / stride + 1;
    let ow = (xs.w + 2 * padding - s) / stride + 1;
    let os = Shape::new(xs.n, ws.n, oh, ow);
    let mut out = Tensor::zeros(os);

    for n in 0..xs.n {
        for co in 0..ws.n {
            let bias = b.data[co];
            let obase = (n * os.c + co) * oh * ow;
            out.data[obase..obase + oh * ow].fill(bias);
            for ci in 0..xs.c {
                let xbase = (n * xs.c + ci) * xs.h * xs.w;
                for kr in 0..r {
                    for ks in 0..s {
                        let wv = w.data[((co * ws.c + ci) * r + kr) * s + ks];
                        if wv == 0.0 {
                            continue;
                        }
                        let (oh_lo, oh_hi) = valid_range(xs.h, oh, stride, kr, padding);
                        let (ow_lo, ow_hi) = valid_range(xs.w, ow, stride, ks, padding);
                        for oy in oh_lo..oh_hi {
                            let iy = oy * stride + kr - padding;
                            let xrow = xbase + iy * xs.w;
                            let orow = obase + oy * ow;
                            for ox in ow_lo..ow_hi {
                                let ix = ox * stride + ks - padding;
                                out.data[orow + ox] += wv * x.data[xrow + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Output coordinates whose input coordinate `o*stride + k - padding`
/// lands inside [0, in_len).
#[inline]
fn valid_range(in_len: usize, out_len: usize, stride: usize, k: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    let hi_excl = if in_len + padding > k {
        ((in_len + padding - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi_excl), hi_excl)
}

/// Returns (dx, dw, db).
pub fn conv2d_bwd(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    padding: usize,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (xs, ws, os) = (x.shape, w.shape, dout.shape);
    debug_assert_eq!(os.c, ws.n);
    let (r, s) = (ws.h, ws.w);
    let mut dx = Tensor::zeros(xs);
    let mut dw = Tensor::zeros(ws);
    let mut db = Tensor::zeros(Shape::new(1, ws.n, 1, 1));

    for n in 0..xs.n {
        for co in 0..ws.n {
            let obase = (n * os.c + co) * os.h * os.w;
            let mut bias_acc = 0.0;
            for v in &dout.data[obase..obase + os.h * os.w] {
                bias_acc += v;
            }
            db.data[co] += bias_acc;
            for ci in 0..xs.c {
                let xbase = (n * xs.c + ci) * xs.h * xs.w;
                for kr in 0..r {
                    for ks in 0..s {
                        let widx = ((co * ws.c + ci) * r + kr) * s + ks;
                        let wv = w.data[widx];
                        let mut dw_acc = 0.0;
                        let (oh_lo, oh_hi) = valid_range(xs.h, os.h, stride, kr, padding);
                        let (ow_lo, ow_hi) = valid_range(xs.w, os.w, stride, ks, padding);
                        for oy in oh_lo..oh_hi {
                            let iy = oy * stride + kr - padding;
                            let xrow = xbase + iy * xs.w;
                            let orow = obase + oy * os.w;
                            for ox in ow_lo..ow_hi {
                                let ix = ox * stride + ks - padding;
                                let g = dout.data[orow + ox];
                                dx.data[xrow + ix] += g * wv;
                                dw_acc += g * x.data[xrow + ix];
                            }
                        }
                        dw.data[widx] += dw_acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

// ------------------------------------------------------------ batch norm

/// Per-channel mean and biased variance over the (N, H, W) axes.
pub fn channel_mean_var(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape;
    let count = (s.n * s.h * s.w) as f64;
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            let mut acc = 0.0;
            for v in &x.data[base..base + s.h * s.w] {
                acc += v;
            }
            mean[c] += acc;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            let m = mean[c];
            let mut acc = 0.0;
            for v in &x.data[base..base + s.h * s.w] {
                let d = v - m;
                acc += d * d;
            }
            var[c] += acc;
        }
    }
    for v in &mut var {
        *v /= count;
    }
    (mean, var)
}

/// Normalize-scale-shift with the statistics the caller chose
/// (batch stats in training, running stats in eval).
pub fn bn_fwd(x: &Tensor, gamma: &[f64], beta: &[f64], mean: &[f64], invstd: &[f64]) -> Tensor {
    let s = x.shape;
    debug_assert_eq!(gamma.len(), s.c);
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            let (g, b, m, is) = (gamma[c], beta[c], mean[c], invstd[c]);
            for i in base..base + s.h * s.w {
                out.data[i] = g * (x.data[i] - m) * is + b;
            }
        }
    }
    out
}

/// Returns (dx, dgamma, dbeta). With `stats_from_batch` the statistics are a
/// function of x and the full batch-norm backward applies; otherwise the
/// statistics are constants (eval mode) and dx is a plain per-channel scale.
pub fn bn_bwd(
    x: &Tensor,
    gamma: &[f64],
    mean: &[f64],
    invstd: &[f64],
    dout: &Tensor,
    stats_from_batch: bool,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let s = x.shape;
    let m = (s.n * s.h * s.w) as f64;
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            let (mu, is) = (mean[c], invstd[c]);
            let mut dg = 0.0;
            let mut db = 0.0;
            for i in base..base + s.h * s.w {
                let xhat = (x.data[i] - mu) * is;
                dg += dout.data[i] * xhat;
                db += dout.data[i];
            }
            dgamma[c] += dg;
            dbeta[c] += db;
        }
    }
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            let (mu, is, g) = (mean[c], invstd[c], gamma[c]);
            if stats_from_batch {
                let k = g * is / m;
                for i in base..base + s.h * s.w {
                    let xhat = (x.data[i] - mu) * is;
                    dx.data[i] += k * (m * dout.data[i] - dbeta[c] - xhat * dgamma[c]);
                }
            } else {
                let k = g * is;
                for i in base..base + s.h * s.w {
                    dx.data[i] += k * dout.data[i];
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

// --------------------------------------------------- adaptive average pool

/// Window over rows for output index i of k: [floor(i*H/k), ceil((i+1)*H/k)).
#[inline]
pub fn pool_window(i: usize, input_len: usize, k: usize) -> (usize, usize) {
    let lo = i * input_len / k;
    let hi = ((i + 1) * input_len).div_ceil(k);
    (lo, hi)
}

pub fn adaptive_avg_pool_fwd(x: &Tensor, k: usize) -> Result<Tensor> {
    let s = x.shape;
    if k == 0 {
        return Err(Error::invalid("adaptive_avg_pool", "output size must be >= 1"));
    }
    let os = Shape::new(s.n, s.c, k, k);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            for i in 0..k {
                let (r0, r1) = pool_window(i, s.h, k);
                for j in 0..k {
                    let (c0, c1) = pool_window(j, s.w, k);
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        let row = base + r * s.w;
                        for col in c0..c1 {
                            acc += x.data[row + col];
                        }
                    }
                    let area = ((r1 - r0) * (c1 - c0)) as f64;
                    *out.at_mut(n, c, i, j) = acc / area;
                }
            }
        }
    }
    Ok(out)
}

pub fn adaptive_avg_pool_bwd(in_shape: Shape, k: usize, dout: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(in_shape);
    let s = in_shape;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            for i in 0..k {
                let (r0, r1) = pool_window(i, s.h, k);
                for j in 0..k {
                    let (c0, c1) = pool_window(j, s.w, k);
                    let g = dout.at(n, c, i, j) / (((r1 - r0) * (c1 - c0)) as f64);
                    for r in r0..r1 {
                        let row = base + r * s.w;
                        for col in c0..c1 {
                            dx.data[row + col] += g;
                        }
                    }
                }
            }
        }
    }
    dx
}

// -------------------------------------------------------------- max pool

/// 2x2 max pool with stride 2. Ties resolve to the first maximal element in
/// row-major window order; `argmax` stores the flat input index per output.
pub fn max_pool2_fwd(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let s = x.shape;
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::shape(
            "max_pool2",
            format!("spatial dims {}x{} must be even (pad the input first)", s.h, s.w),
        ));
    }
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(os);
    let mut argmax = vec![0usize; os.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best_idx = base + (2 * oy) * s.w + 2 * ox;
                    let mut best = x.data[best_idx];
                    for (dy, dx_) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * s.w + 2 * ox + dx_;
                        if x.data[idx] > best {
                            best = x.data[idx];
                            best_idx = idx;
                        }
                    }
                    let o = os.idx(n, c, oy, ox);
                    out.data[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn max_pool2_bwd(in_shape: Shape, argmax: &[usize], dout: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(in_shape);
    for (o, &src) in argmax.iter().enumerate() {
        dx.data[src] += dout.data[o];
    }
    dx
}

// -------------------------------------------------------- bilinear resize

/// Precomputed 1-D interpolation: for each output index, the two source
/// indices and the fractional weight toward the second.
fn resize_axis(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Half-pixel-center bilinear resize. Resizing to the input size returns the
/// input unchanged.
pub fn bilinear_resize_fwd(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let s = x.shape;
    if oh == 0 || ow == 0 {
        return Err(Error::invalid("bilinear_resize", "output dims must be >= 1"));
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::invalid("bilinear_resize", "input dims must be >= 1"));
    }
    if (oh, ow) == (s.h, s.w) {
        return Ok(x.clone());
    }
    let rows = resize_axis(s.h, oh);
    let cols = resize_axis(s.w, ow);
    let os = Shape::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            let obase = (n * s.c + c) * oh * ow;
            for (oy, &(r0, r1, ty)) in rows.iter().enumerate() {
                let row0 = base + r0 * s.w;
                let row1 = base + r1 * s.w;
                let orow = obase + oy * ow;
                for (ox, &(c0, c1, tx)) in cols.iter().enumerate() {
                    let a = x.data[row0 + c0];
                    let b = x.data[row0 + c1];
                    let c_ = x.data[row1 + c0];
                    let d = x.data[row1 + c1];
                    let top = a + tx * (b - a);
                    let bot = c_ + tx * (d - c_);
                    out.data[orow + ox] = top + ty * (bot - top);
                }
            }
        }
    }
    Ok(out)
}

pub fn bilinear_resize_bwd(in_shape: Shape, dout: &Tensor) -> Tensor {
    let s = in_shape;
    let os = dout.shape;
    if (os.h, os.w) == (s.h, s.w) {
        return dout.clone();
    }
    let rows = resize_axis(s.h, os.h);
    let cols = resize_axis(s.w, os.w);
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            let obase = (n * s.c + c) * os.h * os.w;
            for (oy, &(r0, r1, ty)) in rows.iter().enumerate() {
                let orow = obase + oy * os.w;
                for (ox, &(c0, c1, tx)) in cols.iter().enumerate() {
                    let g = dout.data[orow + ox];
                    dx.data[base + r0 * s.w + c0] += (1.0 - ty) * (1.0 - tx) * g;
                    dx.data[base + r0 * s.w + c1] += (1.0 - ty) * tx * g;
                    dx.data[base + r1 * s.w + c0] += ty * (1.0 - tx) * g;
                    dx.data[base + r1 * s.w + c1] += ty * tx * g;
                }
            }
        }
    }
    dx
}

// --------------------------------------------------------- fully connected

/// x is viewed as (N, F) with F = C*H*W; w: (F_out, F, 1, 1); b: (1, F_out, 1, 1).
/// Output: (N, F_out, 1, 1).
pub fn fully_connected_fwd(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (xs, ws) = (x.shape, w.shape);
    let f = xs.c * xs.h * xs.w;
    if ws.c != f || ws.h != 1 || ws.w != 1 {
        return Err(Error::shape(
            "fully_connected",
            format!("weight {} incompatible with {} input features", ws, f),
        ));
    }
    if b.shape != Shape::new(1, ws.n, 1, 1) {
        return Err(Error::shape(
            "fully_connected",
            format!("bias shape {} does not match {} outputs", b.shape, ws.n),
        ));
    }
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, 1, 1));
    for n in 0..xs.n {
        let xrow = &x.data[n * f..(n + 1) * f];
        for fo in 0..ws.n {
            let wrow = &w.data[fo * f..(fo + 1) * f];
            let mut acc = b.data[fo];
            for k in 0..f {
                acc += wrow[k] * xrow[k];
            }
            out.data[n * ws.n + fo] = acc;
        }
    }
    Ok(out)
}

pub fn fully_connected_bwd(x: &Tensor, w: &Tensor, dout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (xs, ws) = (x.shape, w.shape);
    let f = ws.c;
    let mut dx = Tensor::zeros(xs);
    let mut dw = Tensor::zeros(ws);
    let mut db = Tensor::zeros(Shape::new(1, ws.n, 1, 1));
    for n in 0..xs.n {
        let xrow = &x.data[n * f..(n + 1) * f];
        for fo in 0..ws.n {
            let g = dout.data[n * ws.n + fo];
            db.data[fo] += g;
            let wrow = &w.data[fo * f..(fo + 1) * f];
            let dwrow = &mut dw.data[fo * f..(fo + 1) * f];
            let dxrow = &mut dx.data[n * f..(n + 1) * f];
            for k in 0..f {
                dxrow[k] += g * wrow[k];
                dwrow[k] += g * xrow[k];
            }
        }
    }
    (dx, dw, db)
}

// ------------------------------------------------------------ activations

pub fn relu_fwd(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    }
}

/// Subgradient at exactly 0 is taken as 0.
pub fn relu_bwd(x: &Tensor, dout: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x
            .data
            .iter()
            .zip(&dout.data)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

/// Numerically stable logistic, clamped into the open interval (0, 1) so the
/// output stays strictly between the bounds for every finite input.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0f64.next_down())
}

pub fn sigmoid_fwd(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x.data.iter().map(|&v| sigmoid_scalar(v)).collect(),
    }
}

/// Uses the saved forward output: d/dx sigma(x) = y * (1 - y).
pub fn sigmoid_bwd(y: &Tensor, dout: &Tensor) -> Tensor {
    Tensor {
        shape: y.shape,
        data: y
            .data
            .iter()
            .zip(&dout.data)
            .map(|(&y, &g)| g * y * (1.0 - y))
            .collect(),
    }
}

// -------------------------------------------------------- channel concat

pub fn concat_channels_fwd(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape, b.shape);
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::shape(
            "concat_channels",
            format!("{} vs {}", sa, sb),
        ));
    }
    let os = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut out = Tensor::zeros(os);
    let plane = sa.h * sa.w;
    for n in 0..sa.n {
        let oa = (n * os.c) * plane;
        out.data[oa..oa + sa.c * plane]
            .copy_from_slice(&a.data[n * sa.c * plane..(n + 1) * sa.c * plane]);
        let ob = (n * os.c + sa.c) * plane;
        out.data[ob..ob + sb.c * plane]
            .copy_from_slice(&b.data[n * sb.c * plane..(n + 1) * sb.c * plane]);
    }
    Ok(out)
}

pub fn concat_channels_bwd(sa: Shape, sb: Shape, dout: &Tensor) -> (Tensor, Tensor) {
    let mut da = Tensor::zeros(sa);
    let mut db = Tensor::zeros(sb);
    let plane = sa.h * sa.w;
    let oc = sa.c + sb.c;
    for n in 0..sa.n {
        let oa = (n * oc) * plane;
        da.data[n * sa.c * plane..(n + 1) * sa.c * plane]
            .copy_from_slice(&dout.data[oa..oa + sa.c * plane]);
        let ob = (n * oc + sa.c) * plane;
        db.data[n * sb.c * plane..(n + 1) * sb.c * plane]
            .copy_from_slice(&dout.data[ob..ob + sb.c * plane]);
    }
    (da, db)
}

// ---------------------------------------------------- broadcast elementwise

/// Supported right-operand broadcast patterns against a full (N,C,H,W) left
/// operand. Checked in order, so equal shapes are always `Same`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Broadcast {
    Same,
    /// b has shape (N, C, 1, 1): one value per (batch, channel).
    PerChannel,
    /// b has shape (N, 1, H, W): one value per (batch, pixel).
    PerPixel,
}

pub fn broadcast_kind(op: &'static str, a: Shape, b: Shape) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b == Shape::new(a.n, a.c, 1, 1) {
        Ok(Broadcast::PerChannel)
    } else if b == Shape::new(a.n, 1, a.h, a.w) {
        Ok(Broadcast::PerPixel)
    } else {
        Err(Error::shape(op, format!("{} not broadcastable against {}", b, a)))
    }
}

#[inline]
fn bcast_index(kind: Broadcast, a: Shape, n: usize, c: usize, pix: usize) -> usize {
    match kind {
        Broadcast::Same => (n * a.c + c) * a.h * a.w + pix,
        Broadcast::PerChannel => n * a.c + c,
        Broadcast::PerPixel => n * a.h * a.w + pix,
    }
}

pub fn ewise_fwd(a: &Tensor, b: &Tensor, kind: Broadcast, mul: bool) -> Tensor {
    let s = a.shape;
    let plane = s.h * s.w;
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            for p in 0..plane {
                let bv = b.data[bcast_index(kind, s, n, c, p)];
                let av = a.data[base + p];
                out.data[base + p] = if mul { av * bv } else { av + bv };
            }
        }
    }
    out
}

/// Sums a full-shaped gradient down to the broadcast operand's shape.
pub fn reduce_to_broadcast(full: &Tensor, bshape: Shape, kind: Broadcast) -> Tensor {
    let s = full.shape;
    let plane = s.h * s.w;
    let mut out = Tensor::zeros(bshape);
    match kind {
        Broadcast::Same => out.data.copy_from_slice(&full.data),
        Broadcast::PerChannel => {
            for n in 0..s.n {
                for c in 0..s.c {
                    let base = (n * s.c + c) * plane;
                    let mut acc = 0.0;
                    for p in 0..plane {
                        acc += full.data[base + p];
                    }
                    out.data[n * s.c + c] = acc;
                }
            }
        }
        Broadcast::PerPixel => {
            for n in 0..s.n {
                for c in 0..s.c {
                    let base = (n * s.c + c) * plane;
                    for p in 0..plane {
                        out.data[n * plane + p] += full.data[base + p];
                    }
                }
            }
        }
    }
    out
}

/// Expands a broadcast operand's view to the full shape (used by mul backward
/// for the left operand: da = dout * broadcast(b)).
pub fn ewise_mul_grad_a(dout: &Tensor, b: &Tensor, kind: Broadcast) -> Tensor {
    ewise_fwd(dout, b, kind, true)
}

/// db for mul: reduce(dout * a) down to b's shape.
pub fn ewise_mul_grad_b(dout: &Tensor, a: &Tensor, bshape: Shape, kind: Broadcast) -> Tensor {
    let s = a.shape;
    let plane = s.h * s.w;
    let mut full = Tensor::zeros(s);
    for i in 0..s.numel() {
        full.data[i] = dout.data[i] * a.data[i];
    }
    let _ = plane;
    reduce_to_broadcast(&full, bshape, kind)
}

// ------------------------------------------------------------ reductions

pub fn sum_all_fwd(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data.iter().sum())
}

pub fn sum_all_bwd(in_shape: Shape, dout: &Tensor) -> Tensor {
    Tensor::filled(in_shape, dout.data[0])
}

// ---------------------------------------------------------- reflect pad

/// Pads height and width on the bottom/right edges up to the next multiple of
/// `mult`, mirroring across the edge (edge row/column included once).
pub fn reflect_pad_to_multiple(x: &Tensor, mult: usize) -> Result<Tensor> {
    let s = x.shape;
    let ph = s.h.div_ceil(mult) * mult;
    let pw = s.w.div_ceil(mult) * mult;
    if ph == s.h && pw == s.w {
        return Ok(x.clone());
    }
    if ph - s.h > s.h || pw - s.w > s.w {
        return Err(Error::invalid(
            "reflect_pad",
            format!("input {}x{} too small to mirror-pad to a multiple of {}", s.h, s.w, mult),
        ));
    }
    let os = Shape::new(s.n, s.c, ph, pw);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            let obase = (n * s.c + c) * ph * pw;
            for y in 0..ph {
                let sy = if y < s.h { y } else { 2 * s.h - 1 - y };
                for xcol in 0..pw {
                    let sx = if xcol < s.w { xcol } else { 2 * s.w - 1 - xcol };
                    out.data[obase + y * pw + xcol] = x.data[base + sy * s.w + sx];
                }
            }
        }
    }
    Ok(out)
}
