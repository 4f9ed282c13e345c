use super::kernels::{self, ConvGeometry};
use super::{ConvKernel, DepthwiseKernel, Tensor};
use crate::error::{structural, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Avg,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

/// Dilated, same-padded (zero fill), unit-stride cross-correlation.
pub fn conv2d(x: &Tensor, k: &ConvKernel, dilation: usize) -> Result<Tensor> {
    if k.in_channels() != x.channels() {
        return Err(structural(format!(
            "conv2d expects {} input channels, got {}",
            k.in_channels(),
            x.channels()
        )));
    }
    if dilation == 0 {
        return Err(structural("dilation must be positive"));
    }
    let weights: Vec<f64> = k.weights().iter().map(|&v| v as f64).collect();
    let bias: Vec<f64> = match k.bias() {
        Some(b) => b.iter().map(|&v| v as f64).collect(),
        None => vec![0.0; k.out_channels()],
    };
    let mut out = Tensor::zeros(x.height(), x.width(), k.out_channels());
    let geometry = ConvGeometry {
        height: x.height(),
        width: x.width(),
        in_channels: x.channels(),
        out_channels: k.out_channels(),
        size: k.size(),
        dilation,
    };
    kernels::conv_same(&geometry, x.data(), &weights, &bias, out.data_mut());
    Ok(out)
}

/// Same-padded per-channel convolution without bias.
pub fn depthwise_conv2d(x: &Tensor, k: &DepthwiseKernel) -> Result<Tensor> {
    if k.channels() != x.channels() {
        return Err(structural(format!(
            "depthwise kernel has {} filters for {} channels",
            k.channels(),
            x.channels()
        )));
    }
    let weights: Vec<f64> = k.weights().iter().map(|&v| v as f64).collect();
    let mut out = Tensor::zeros(x.height(), x.width(), x.channels());
    kernels::depthwise_same(
        x.height(),
        x.width(),
        x.channels(),
        k.size(),
        x.data(),
        &weights,
        out.data_mut(),
    );
    Ok(out)
}

/// Standardizes each pixel's channel vector, then scales by `gamma` and
/// shifts by `beta`. Uses the biased (population) variance.
pub fn layer_norm(x: &Tensor, gamma: &[f32], beta: &[f32], eps: f32) -> Result<Tensor> {
    let mut out = x.clone();
    layer_norm_in_place(&mut out, gamma, beta, eps, Activation::Linear)?;
    Ok(out)
}

/// [`layer_norm`] followed by `then`, without an intermediate tensor.
pub fn layer_norm_in_place(
    x: &mut Tensor,
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
    then: Activation,
) -> Result<()> {
    let c = x.channels();
    if gamma.len() != c || beta.len() != c {
        return Err(structural(format!(
            "layer norm over {c} channels got gamma/beta of length {}/{}",
            gamma.len(),
            beta.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "layer norm epsilon must be positive, got {eps}"
        )));
    }
    let gamma: Vec<f64> = gamma.iter().map(|&v| v as f64).collect();
    let beta: Vec<f64> = beta.iter().map(|&v| v as f64).collect();
    let eps = eps as f64;
    match then {
        Activation::Gelu => kernels::layer_norm_rows(x.data_mut(), c, &gamma, &beta, eps, gelu),
        Activation::Sigmoid => kernels::layer_norm_rows(x.data_mut(), c, &gamma, &beta, eps, sigmoid),
        Activation::Linear => kernels::layer_norm_rows(x.data_mut(), c, &gamma, &beta, eps, |v| v),
    }
    Ok(())
}

/// Sigmoid outputs are clamped to `[2^-24, 1 - 2^-24]` so they stay strictly
/// inside (0, 1) after rounding to `f32`.
const SIGMOID_FLOOR: f32 = 1.0 / 16_777_216.0;

// Rational minimax fit of erf on [-4, 4], evaluated in f32; error stays
// within a few ulp. Beyond |x| = 4, erf is 1 to within 2e-8.
const ERF_NUM: [f32; 7] = [
    -2.726_142_258_013_06e-10,
    2.770_681_424_959_02e-08,
    -2.101_024_020_825_08e-06,
    -5.692_506_394_623_46e-05,
    -7.349_906_303_268_55e-04,
    -2.954_599_808_540_25e-03,
    -1.609_603_332_624_15e-02,
];
const ERF_DEN: [f32; 5] = [
    -1.456_607_184_649_96e-05,
    -2.133_740_552_789_05e-04,
    -1.682_826_974_382_03e-03,
    -7.373_329_167_204_68e-03,
    -1.426_473_905_141_89e-02,
];

#[inline(always)]
pub(crate) fn erf(x: f32) -> f32 {
    let x = x.clamp(-4.0, 4.0);
    let x2 = x * x;
    let mut p = 0.0;
    for c in ERF_NUM {
        p = p * x2 + c;
    }
    let mut q = 0.0;
    for c in ERF_DEN {
        q = q * x2 + c;
    }
    x * p / q
}

/// GELU with the erf formulation, `x · Φ(x)`.
#[inline(always)]
pub(crate) fn gelu(v: f32) -> f32 {
    0.5 * v * (1.0 + erf(v * std::f32::consts::FRAC_1_SQRT_2))
}

// Rational fit of tanh on [-7.9, 7.9]; tanh is ±1 to f32 rounding beyond.
const TANH_CLAMP: f32 = 7.905_311;
const TANH_NUM: [f32; 7] = [
    -2.760_768_477_423_55e-16,
    2.000_187_904_824_77e-13,
    -8.604_671_522_137_35e-11,
    5.122_297_090_371_14e-08,
    1.485_722_357_179_79e-05,
    6.372_619_288_754_36e-04,
    4.893_524_558_917_86e-03,
];
const TANH_DEN: [f32; 4] = [
    1.198_258_394_667_02e-06,
    1.185_347_056_866_54e-04,
    2.268_434_632_439_00e-03,
    4.893_525_185_543_85e-03,
];

#[inline(always)]
fn tanh(x: f32) -> f32 {
    let x = x.clamp(-TANH_CLAMP, TANH_CLAMP);
    let x2 = x * x;
    let mut p = 0.0;
    for c in TANH_NUM {
        p = p * x2 + c;
    }
    let mut q = 0.0;
    for c in TANH_DEN {
        q = q * x2 + c;
    }
    x * p / q
}

#[inline(always)]
pub(crate) fn sigmoid(v: f32) -> f32 {
    let s = 0.5 + 0.5 * tanh(0.5 * v);
    s.clamp(SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let mut out = x.clone();
    activation_in_place(&mut out, kind);
    out
}

pub fn activation_in_place(x: &mut Tensor, kind: Activation) {
    match kind {
        Activation::Gelu => kernels::map_in_place(x.data_mut(), gelu),
        Activation::Sigmoid => kernels::map_in_place(x.data_mut(), sigmoid),
        Activation::Linear => {}
    }
}

fn pooled_extent(len: usize, size: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if len < size {
                return Err(structural(format!(
                    "valid pooling window {size} larger than extent {len}"
                )));
            }
            Ok(((len - size) / stride + 1, 0))
        }
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + size).saturating_sub(len);
            Ok((out, total / 2))
        }
    }
}

/// Spatial pooling. With same padding, max treats out-of-bounds cells as
/// `-inf` and avg divides by the number of in-bounds cells.
pub fn pool2d(
    x: &Tensor,
    mode: PoolMode,
    size: usize,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    if size == 0 || stride == 0 {
        return Err(structural(format!(
            "pool size and stride must be positive, got {size}/{stride}"
        )));
    }
    if mode == PoolMode::Max && stride == 1 && padding == Padding::Same {
        return Ok(max_pool_unit_stride(x, size));
    }
    let (h, w, c) = x.shape();
    let (oh, pad_top) = pooled_extent(h, size, stride, padding)?;
    let (ow, pad_left) = pooled_extent(w, size, stride, padding)?;
    let mut out = Tensor::zeros(oh, ow, c);
    let mut acc = vec![0f64; c];
    for oy in 0..oh {
        let y0 = (oy * stride) as isize - pad_top as isize;
        let ys = y0.max(0) as usize..((y0 + size as isize).min(h as isize)) as usize;
        for ox in 0..ow {
            let x0 = (ox * stride) as isize - pad_left as isize;
            let xs = x0.max(0) as usize..((x0 + size as isize).min(w as isize)) as usize;
            let dst = (oy * ow + ox) * c;
            match mode {
                PoolMode::Max => {
                    let o = &mut out.data_mut()[dst..dst + c];
                    o.fill(f32::NEG_INFINITY);
                    for y in ys.clone() {
                        for xx in xs.clone() {
                            for (m, &v) in o.iter_mut().zip(x.pixel(y, xx)) {
                                if v > *m {
                                    *m = v;
                                }
                            }
                        }
                    }
                }
                PoolMode::Avg => {
                    acc.fill(0.0);
                    let count = (ys.len() * xs.len()) as f64;
                    for y in ys.clone() {
                        for xx in xs.clone() {
                            for (a, &v) in acc.iter_mut().zip(x.pixel(y, xx)) {
                                *a += v as f64;
                            }
                        }
                    }
                    let o = &mut out.data_mut()[dst..dst + c];
                    for (o, a) in o.iter_mut().zip(&acc) {
                        *o = (a / count) as f32;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Max over a `size × size` window is the max over rows of per-row maxima,
/// so the unit-stride case runs as two 1-D passes.
fn max_pool_unit_stride(x: &Tensor, size: usize) -> Tensor {
    let (h, w, c) = x.shape();
    let before = (size - 1) / 2;
    let after = size - 1 - before;
    let window = |i: usize, len: usize| i.saturating_sub(before)..(i + after + 1).min(len);
    let mut rows = Tensor::zeros(h, w, c);
    for y in 0..h {
        for xx in 0..w {
            let dst = (y * w + xx) * c;
            let o = &mut rows.data_mut()[dst..dst + c];
            o.fill(f32::NEG_INFINITY);
            for sx in window(xx, w) {
                for (m, &v) in o.iter_mut().zip(x.pixel(y, sx)) {
                    if v > *m {
                        *m = v;
                    }
                }
            }
        }
    }
    let mut out = Tensor::filled(h, w, c, f32::NEG_INFINITY);
    for y in 0..h {
        for sy in window(y, h) {
            let src = &rows.data()[sy * w * c..(sy + 1) * w * c];
            let dst = &mut out.data_mut()[y * w * c..(y + 1) * w * c];
            for (m, &v) in dst.iter_mut().zip(src) {
                if v > *m {
                    *m = v;
                }
            }
        }
    }
    out
}

/// Replicates every pixel into a `factor × factor` block.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(structural("upsampling factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (h, w, c) = x.shape();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor::zeros(oh, ow, c);
    let data = out.data_mut();
    for (oy, row) in data.chunks_exact_mut(ow * c).enumerate() {
        let y = oy / factor;
        if oy % factor != 0 {
            continue;
        }
        for (ox, px) in row.chunks_exact_mut(c).enumerate() {
            px.copy_from_slice(x.pixel(y, ox / factor));
        }
    }
    for oy in 0..oh {
        if oy % factor != 0 {
            let src = (oy - oy % factor) * ow * c;
            data.copy_within(src..src + ow * c, oy * ow * c);
        }
    }
    Ok(out)
}

/// `concat_channels(&[&upsample_nearest(low, factor)?, skip])` in one pass.
pub fn upsample_concat(low: &Tensor, factor: usize, skip: &Tensor) -> Result<Tensor> {
    if factor == 0 {
        return Err(structural("upsampling factor must be at least 1"));
    }
    let (h, w) = (skip.height(), skip.width());
    if low.height() * factor != h || low.width() * factor != w {
        return Err(structural(format!(
            "cannot concatenate {}x{} upsampled by {factor} with {h}x{w}",
            low.height(),
            low.width()
        )));
    }
    let (cl, cs) = (low.channels(), skip.channels());
    let c = cl + cs;
    let mut out = Tensor::zeros(h, w, c);
    for (y, row) in out.data_mut().chunks_exact_mut(w * c).enumerate() {
        for (xx, px) in row.chunks_exact_mut(c).enumerate() {
            px[..cl].copy_from_slice(low.pixel(y / factor, xx / factor));
            px[cl..].copy_from_slice(skip.pixel(y, xx));
        }
    }
    Ok(out)
}

/// Channel-wise concatenation in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| structural("concatenation of zero tensors"))?;
    let (h, w) = (first.height(), first.width());
    if let Some(bad) = parts.iter().find(|t| t.height() != h || t.width() != w) {
        return Err(structural(format!(
            "cannot concatenate {}x{} with {}x{}",
            h,
            w,
            bad.height(),
            bad.width()
        )));
    }
    let c: usize = parts.iter().map(|t| t.channels()).sum();
    let mut out = Tensor::zeros(h, w, c);
    for (i, px) in out.data_mut().chunks_exact_mut(c).enumerate() {
        let mut at = 0;
        for t in parts {
            let tc = t.channels();
            px[at..at + tc].copy_from_slice(&t.data()[i * tc..(i + 1) * tc]);
            at += tc;
        }
    }
    Ok(out)
}

/// Splits the channel axis into two equal halves.
pub fn split_half(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let c = x.channels();
    if c % 2 != 0 {
        return Err(structural(format!("cannot split {c} channels into halves")));
    }
    let half = c / 2;
    let mut a = Vec::with_capacity(x.len() / 2);
    let mut b = Vec::with_capacity(x.len() / 2);
    for px in x.data().chunks_exact(c) {
        a.extend_from_slice(&px[..half]);
        b.extend_from_slice(&px[half..]);
    }
    Ok((
        Tensor::from_vec(x.height(), x.width(), half, a)?,
        Tensor::from_vec(x.height(), x.width(), half, b)?,
    ))
}

fn elementwise(a: &Tensor, b: &Tensor, op: &str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(structural(format!(
            "{op} needs identical shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(a.height(), a.width(), a.channels());
    for ((o, &x), &y) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        *o = f(x, y);
    }
    Ok(out)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(a, b, "mul", |x, y| x * y)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(a, b, "add", |x, y| x + y)
}

/// `a += b`, elementwise.
pub fn add_in_place(a: &mut Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(structural(format!(
            "add needs identical shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y);
    Ok(())
}
