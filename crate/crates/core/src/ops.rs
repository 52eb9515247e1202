//! Forward and backward numeric kernels.
//!
//! These are plain functions over [`Tensor`]s. The recording graph in
//! [`crate::graph`] stores whatever each backward kernel needs from its
//! forward counterpart.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output extent of a sliding window along one axis.
fn window_out(extent: usize, window: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = extent + 2 * padding;
    if window == 0 || stride == 0 || window > padded {
        None
    } else {
        Some((padded - window) / stride + 1)
    }
}

/// `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index addressed by the given extents and
    // strides (checked above), and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

pub fn conv_geometry(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<ConvGeometry> {
    let mismatch = || {
        Error::invalid(format!(
            "conv2d shape mismatch: input {:?}, kernel {:?}, stride {stride}, padding {padding}",
            input.shape(),
            kernel.shape()
        ))
    };
    let (_, ci, h, w) = input.dims4().map_err(|_| mismatch())?;
    let (_, kci, kh, kw) = kernel.dims4().map_err(|_| mismatch())?;
    if ci != kci || stride == 0 {
        return Err(mismatch());
    }
    let out_h = window_out(h, kh, stride, padding).ok_or_else(mismatch)?;
    let out_w = window_out(w, kw, stride, padding).ok_or_else(mismatch)?;
    Ok(ConvGeometry {
        in_channels: ci,
        in_h: h,
        in_w: w,
        kh,
        kw,
        stride,
        padding,
        out_h,
        out_w,
    })
}

/// Unfolds one `[C, H, W]` sample into a `[C*kh*kw, out_h*out_w]` patch matrix.
fn im2col(sample: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let hw = g.out_len();
    for c in 0..g.in_channels {
        let plane = &sample[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a patch matrix back into a sample.
fn col2im(cols: &[f64], g: &ConvGeometry, sample: &mut [f64]) {
    let hw = g.out_len();
    for c in 0..g.in_channels {
        let plane = &mut sample[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation. Returns the output and the per-sample patch
/// matrices needed by [`conv2d_backward`].
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Vec<f64>)> {
    let g = conv_geometry(input, kernel, stride, padding)?;
    let n = input.shape()[0];
    let co = kernel.shape()[0];
    if bias.shape() != [co] {
        return Err(Error::invalid(format!(
            "conv2d bias shape {:?} does not match kernel {:?}",
            bias.shape(),
            kernel.shape()
        )));
    }
    let (k, hw) = (g.patch_len(), g.out_len());
    let sample_len = g.in_channels * g.in_h * g.in_w;
    let mut cols = vec![0.0; n * k * hw];
    let mut out = vec![0.0; n * co * hw];
    for i in 0..n {
        let sample = &input.data()[i * sample_len..(i + 1) * sample_len];
        let c = &mut cols[i * k * hw..(i + 1) * k * hw];
        im2col(sample, &g, c);
        let o = &mut out[i * co * hw..(i + 1) * co * hw];
        for (ch, b) in bias.data().iter().enumerate() {
            o[ch * hw..(ch + 1) * hw].fill(*b);
        }
        gemm(co, k, hw, kernel.data(), (k, 1), c, (hw, 1), 1.0, o);
    }
    Ok((Tensor::new(&[n, co, g.out_h, g.out_w], out)?, cols))
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    cols: &[f64],
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, kernel, stride, padding)?;
    let n = input.shape()[0];
    let co = kernel.shape()[0];
    let (k, hw) = (g.patch_len(), g.out_len());
    let sample_len = g.in_channels * g.in_h * g.in_w;
    let mut d_kernel = vec![0.0; co * k];
    let mut d_bias = vec![0.0; co];
    let mut d_input = if need_input_grad {
        Some(vec![0.0; input.len()])
    } else {
        None
    };
    let mut d_cols = vec![0.0; if need_input_grad { k * hw } else { 0 }];
    for i in 0..n {
        let dy = &grad_out.data()[i * co * hw..(i + 1) * co * hw];
        for (ch, db) in d_bias.iter_mut().enumerate() {
            *db += dy[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
        }
        let c = &cols[i * k * hw..(i + 1) * k * hw];
        // dK += dY * cols^T
        gemm(co, hw, k, dy, (hw, 1), c, (1, hw), 1.0, &mut d_kernel);
        if let Some(dx) = d_input.as_mut() {
            // dcols = K^T * dY
            gemm(k, co, hw, kernel.data(), (1, k), dy, (hw, 1), 0.0, &mut d_cols);
            col2im(&d_cols, &g, &mut dx[i * sample_len..(i + 1) * sample_len]);
        }
    }
    Ok(ConvGrads {
        input: d_input.map(|d| Tensor::new(input.shape(), d)).transpose()?,
        kernel: Tensor::new(kernel.shape(), d_kernel)?,
        bias: Tensor::new(&[co], d_bias)?,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data).expect("shape preserved")
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Backward of sigmoid given its forward output `y`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::new(y.shape(), data).expect("shape preserved")
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "add shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let data = x
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new(&[n, c], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let hw = input_shape[2] * input_shape[3];
    let mut out = Vec::with_capacity(grad_out.len() * hw);
    for &g in grad_out.data() {
        out.extend(std::iter::repeat_n(g / hw as f64, hw));
    }
    Tensor::new(input_shape, out)
}

/// Global max pool over `H, W`. Returns the pooled `[N, C]` tensor and the
/// flat input index of each maximum; ties go to the lowest index.
pub fn global_max_pool(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut values = Vec::with_capacity(n * c);
    let mut argmax = Vec::with_capacity(n * c);
    for (p, plane) in x.data().chunks_exact(hw).enumerate() {
        let mut best = 0;
        for (i, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = i;
            }
        }
        values.push(plane[best]);
        argmax.push(p * hw + best);
    }
    Ok((Tensor::new(&[n, c], values)?, argmax))
}

/// Scatters `grad_out` to the recorded argmax positions.
pub fn scatter_to_argmax(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let mut out = Tensor::zeros(input_shape);
    let d = out.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(out)
}

/// Windowed max pool without padding.
pub fn max_pool(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = match (window_out(h, window, stride, 0), window_out(w, window, stride, 0)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::invalid(format!(
                "max_pool window {window} (stride {stride}) does not fit spatial extent {h}x{w}"
            )))
        }
    };
    let mut values = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let src = x.data();
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                values.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], values)?, argmax))
}

/// `y = x W^T + b` with `x: [N, I]`, `W: [O, I]`, `b: [O]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mismatch = || {
        Error::invalid(format!(
            "fully_connected shape mismatch: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            weight.shape(),
            bias.shape()
        ))
    };
    let (n, i) = x.dims2().map_err(|_| mismatch())?;
    let (o, wi) = weight.dims2().map_err(|_| mismatch())?;
    if wi != i || bias.shape() != [o] {
        return Err(mismatch());
    }
    let mut out = Vec::with_capacity(n * o);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(n, i, o, x.data(), (i, 1), weight.data(), (1, i), 1.0, &mut out);
    Tensor::new(&[n, o], out)
}

pub struct LinearGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor, need_input_grad: bool) -> Result<LinearGrads> {
    let (n, i) = x.dims2()?;
    let (o, _) = weight.dims2()?;
    let dy = grad_out.data();
    let mut dw = vec![0.0; o * i];
    gemm(o, n, i, dy, (1, o), x.data(), (i, 1), 0.0, &mut dw);
    let mut db = vec![0.0; o];
    for row in dy.chunks_exact(o) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    let input = if need_input_grad {
        let mut dx = vec![0.0; n * i];
        gemm(n, o, i, dy, (o, 1), weight.data(), (i, 1), 0.0, &mut dx);
        Some(Tensor::new(&[n, i], dx)?)
    } else {
        None
    };
    Ok(LinearGrads {
        input,
        weight: Tensor::new(&[o, i], dw)?,
        bias: Tensor::new(&[o], db)?,
    })
}

/// Which statistics batch normalization uses.
#[derive(Debug, Clone, Copy)]
pub enum NormStats<'a> {
    /// Normalize by the current batch's mean and (biased) variance.
    Batch,
    /// Normalize by externally supplied running statistics.
    Running { mean: &'a [f64], var: &'a [f64] },
}

pub struct BatchNormForward {
    pub output: Tensor,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Per-channel batch mean and biased variance (batch mode only).
    pub batch_moments: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn batch_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: NormStats<'_>,
    eps: f64,
) -> Result<BatchNormForward> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::invalid(format!(
            "batch_norm parameter shapes {:?}/{:?} do not match input {:?}",
            gamma.shape(),
            beta.shape(),
            x.shape()
        )));
    }
    let hw = h * w;
    let count = n * hw;
    let src = x.data();
    let channel_values = |ch: usize| (0..n).flat_map(move |i| src[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().copied());
    let (mean, var, moments) = match stats {
        NormStats::Batch => {
            if count < 2 {
                return Err(Error::invalid(format!(
                    "batch_norm in train mode needs N*H*W >= 2, got {count} for shape {:?}",
                    x.shape()
                )));
            }
            let mean: Vec<f64> = (0..c).map(|ch| channel_values(ch).sum::<f64>() / count as f64).collect();
            let var: Vec<f64> = (0..c)
                .map(|ch| channel_values(ch).map(|v| (v - mean[ch]).powi(2)).sum::<f64>() / count as f64)
                .collect();
            (mean.clone(), var.clone(), Some((mean, var)))
        }
        NormStats::Running { mean, var } => {
            if mean.len() != c || var.len() != c {
                return Err(Error::invalid("batch_norm running statistics length mismatch"));
            }
            (mean.to_vec(), var.to_vec(), None)
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * hw;
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            for j in off..off + hw {
                let xh = (src[j] - mean[ch]) * inv_std[ch];
                xhat[j] = xh;
                out[j] = g * xh + b;
            }
        }
    }
    Ok(BatchNormForward {
        output: Tensor::new(x.shape(), out)?,
        xhat,
        inv_std,
        batch_moments: moments,
    })
}

pub struct BatchNormGrads {
    pub input: Option<Tensor>,
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub fn batch_norm_backward(
    shape: &[usize],
    gamma: &Tensor,
    xhat: &[f64],
    inv_std: &[f64],
    batch_stats: bool,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<BatchNormGrads> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let m = (n * hw) as f64;
    let dy = grad_out.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * hw;
            for j in off..off + hw {
                dgamma[ch] += dy[j] * xhat[j];
                dbeta[ch] += dy[j];
            }
        }
    }
    let input = if need_input_grad {
        let mut dx = vec![0.0; dy.len()];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                let g = gamma.data()[ch];
                for j in off..off + hw {
                    dx[j] = if batch_stats {
                        // dxhat = dy * gamma; sums over dxhat reuse dbeta/dgamma.
                        g * inv_std[ch] * (dy[j] - dbeta[ch] / m - xhat[j] * dgamma[ch] / m)
                    } else {
                        g * inv_std[ch] * dy[j]
                    };
                }
            }
        }
        Some(Tensor::new(shape, dx)?)
    } else {
        None
    };
    Ok(BatchNormGrads {
        input,
        gamma: Tensor::new(&[c], dgamma)?,
        beta: Tensor::new(&[c], dbeta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct six-loop cross-correlation.
    fn conv_oracle(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (n, ci, h, w) = x.dims4().unwrap();
        let (co, _, kh, kw) = k.dims4().unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        for i in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += x.data()[((i * ci + c) * h + iy as usize) * w + ix as usize]
                                            * k.data()[((o * ci + c) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((i * co + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_window_of_ones() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let k = Tensor::ones(&[1, 1, 2, 2]);
        let (y, _) = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn conv_unit_kernel_is_identity() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let k = Tensor::ones(&[1, 1, 1, 1]);
        let (y, _) = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[2, 3, 5, 5], &mut rng);
        let k = random(&[4, 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let (y, _) = conv2d_forward(&x, &k, &b, 1, 0).unwrap();
        assert!(y.max_abs_diff(&conv_oracle(&x, &k, &b, 1, 0)) <= 1e-12);
    }

    #[test]
    fn conv_matches_nested_loops_on_small_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.random_range(1..=3);
            let ci = rng.random_range(1..=4);
            let co = rng.random_range(1..=4);
            let h = rng.random_range(1..=6);
            let w = rng.random_range(1..=6);
            let pad = rng.random_range(0..=2);
            let kh = rng.random_range(1..=(h + 2 * pad).min(6));
            let kw = rng.random_range(1..=(w + 2 * pad).min(6));
            let stride = rng.random_range(1..=3);
            let x = random(&[n, ci, h, w], &mut rng);
            let k = random(&[co, ci, kh, kw], &mut rng);
            let b = random(&[co], &mut rng);
            let (y, _) = conv2d_forward(&x, &k, &b, stride, pad).unwrap();
            assert!(y.max_abs_diff(&conv_oracle(&x, &k, &b, stride, pad)) <= 1e-12);
        }
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let x = Tensor::ones(&[1, 2, 3, 3]);
        let k = Tensor::ones(&[1, 3, 2, 2]);
        let err = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 3, 3]") && err.contains("[1, 3, 2, 2]"), "{err}");
        let big = Tensor::ones(&[1, 2, 4, 4]);
        assert!(conv2d_forward(&x, &big, &Tensor::zeros(&[1]), 1, 0).is_err());
    }

    #[test]
    fn pools_on_two_by_two_map() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let (m, arg) = global_max_pool(&x).unwrap();
        assert_eq!(m.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn max_ties_route_to_lowest_index() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let (_, arg) = global_max_pool(&x).unwrap();
        assert_eq!(arg, vec![0]);
        let (_, arg) = max_pool(&x, 2, 2).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn max_pool_rejects_oversized_window() {
        let x = Tensor::ones(&[1, 1, 2, 2]);
        assert!(max_pool(&x, 3, 1).is_err());
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!(sigmoid_scalar(-800.0) >= 0.0);
        assert!(sigmoid_scalar(800.0) <= 1.0);
    }

    #[test]
    fn batch_norm_of_standardized_input_is_identity() {
        let x = Tensor::new(&[4, 1, 1, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let bn = batch_norm_forward(&x, &Tensor::ones(&[1]), &Tensor::zeros(&[1]), NormStats::Batch, 1e-5).unwrap();
        assert!(bn.output.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn batch_norm_constant_channel_gives_beta() {
        let x = Tensor::full(&[2, 1, 2, 2], 3.0);
        let beta = Tensor::full(&[1], 0.7);
        let bn = batch_norm_forward(&x, &Tensor::ones(&[1]), &beta, NormStats::Batch, 1e-5).unwrap();
        assert!(bn.output.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn batch_norm_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(&[6, 3, 4, 4], |_| rng.random_range(-3.0..5.0));
        let gamma = Tensor::new(&[3], vec![0.5, 2.0, 1.5]).unwrap();
        let beta = Tensor::new(&[3], vec![-1.0, 0.25, 3.0]).unwrap();
        let bn = batch_norm_forward(&x, &gamma, &beta, NormStats::Batch, 0.0).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..6)
                .flat_map(|i| bn.output.data()[(i * 3 + ch) * 16..(i * 3 + ch + 1) * 16].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!((mean - beta.data()[ch]).abs() < 1e-6);
            assert!((std - gamma.data()[ch]).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_needs_two_values_in_train_mode() {
        let x = Tensor::ones(&[1, 2, 1, 1]);
        let r = batch_norm_forward(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), NormStats::Batch, 1e-5);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        let (m, v) = (vec![0.0; 2], vec![1.0; 2]);
        let stats = NormStats::Running { mean: &m, var: &v };
        assert!(batch_norm_forward(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), stats, 1e-5).is_ok());
    }
}
