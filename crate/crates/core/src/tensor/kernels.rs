//! Inner loops for the convolutions and the elementwise passes. Each loop is
//! compiled for the baseline target and for AVX2/AVX-512 with FMA, and the
//! widest variant the CPU supports is picked at runtime. On a given machine
//! the choice is fixed, so results are reproducible run to run.

pub(crate) struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub size: usize,
    pub dilation: usize,
}

/// Same-padded cross-correlation. `weights` is `(s, s, in, out)`, `bias` has
/// `out` entries (zeros for unbiased layers).
pub(crate) fn conv_same(g: &ConvGeometry, x: &[f32], weights: &[f64], bias: &[f64], out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if has_avx2_fma() {
            // SAFETY: the features were detected at runtime just above.
            unsafe {
                if g.out_channels <= NARROW_OUT {
                    conv_narrow_avx2(g, x, weights, bias, out)
                } else if has_avx512() {
                    if g.out_channels > 16 {
                        conv_same_avx512::<2, 6>(g, x, weights, bias, out)
                    } else {
                        conv_same_avx512::<1, 8>(g, x, weights, bias, out)
                    }
                } else {
                    conv_same_avx2(g, x, weights, bias, out)
                }
            }
            return;
        }
    }
    if g.out_channels <= NARROW_OUT {
        conv_narrow_impl::<false>(g, x, weights, bias, out)
    } else {
        let p = prepare(g, x, weights, bias, CH_GENERIC, PIX_GENERIC);
        conv_rows::<false>(g, &p, p.input(x), out);
        p.recycle();
    }
}

#[cfg(target_arch = "x86_64")]
fn has_avx2_fma() -> bool {
    std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
}

#[cfg(target_arch = "x86_64")]
fn has_avx512() -> bool {
    std::arch::is_x86_feature_detected!("avx512f")
}

/// `a * b + c`, fused when the kernel is compiled for a CPU with FMA.
#[inline(always)]
fn madd<const FUSED: bool>(a: f64, b: f64, c: f64) -> f64 {
    if FUSED {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

#[inline(always)]
fn madd32<const FUSED: bool>(a: f32, b: f32, c: f32) -> f32 {
    if FUSED {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

/// Layers with at most this many outputs use the plane-wise kernel, which
/// vectorizes along image rows instead of output channels.
const NARROW_OUT: usize = 3;

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn conv_narrow_avx2(g: &ConvGeometry, x: &[f32], weights: &[f64], bias: &[f64], out: &mut [f32]) {
    conv_narrow_impl::<true>(g, x, weights, bias, out)
}

#[inline(always)]
fn conv_narrow_impl<const FUSED: bool>(g: &ConvGeometry, x: &[f32], weights: &[f64], bias: &[f64], out: &mut [f32]) {
    let (h, w, cin, cout) = (g.height, g.width, g.in_channels, g.out_channels);
    let reach = g.size / 2 * g.dilation;
    let pw = w + 2 * reach;
    let ph = h + 2 * reach;
    // Channel-planar, zero-padded copy of the input.
    let mut planes = super::scratch::take(cin * ph * pw, 0.0);
    for y in 0..h {
        for xx in 0..w {
            let px = &x[(y * w + xx) * cin..(y * w + xx + 1) * cin];
            for (ci, &v) in px.iter().enumerate() {
                planes[(ci * ph + y + reach) * pw + xx + reach] = v;
            }
        }
    }
    let mut acc = vec![0f64; w];
    for co in 0..cout {
        for y in 0..h {
            acc.fill(bias[co]);
            for ci in 0..cin {
                for ky in 0..g.size {
                    let row = (ci * ph + y + ky * g.dilation) * pw;
                    for kx in 0..g.size {
                        let wv = weights[((ky * g.size + kx) * cin + ci) * cout + co];
                        let src = &planes[row + kx * g.dilation..row + kx * g.dilation + w];
                        for (a, &v) in acc.iter_mut().zip(src) {
                            *a = madd::<FUSED>(v as f64, wv, *a);
                        }
                    }
                }
            }
            for (xx, &a) in acc.iter().enumerate() {
                out[(y * w + xx) * cout + co] = a as f32;
            }
        }
    }
    super::scratch::give(planes);
}

const CH_GENERIC: usize = 16;
const PIX_GENERIC: usize = 4;

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn conv_same_avx2(g: &ConvGeometry, x: &[f32], weights: &[f64], bias: &[f64], out: &mut [f32]) {
    let p = prepare(g, x, weights, bias, CH_GENERIC, PIX_GENERIC);
    conv_rows::<true>(g, &p, p.input(x), out);
    p.recycle();
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,fma")]
unsafe fn conv_same_avx512<const NV: usize, const PIX: usize>(
    g: &ConvGeometry,
    x: &[f32],
    weights: &[f64],
    bias: &[f64],
    out: &mut [f32],
) {
    let p = prepare(g, x, weights, bias, 16 * NV, PIX);
    // SAFETY: AVX-512F and FMA are enabled for this function.
    unsafe { conv_rows_avx512::<NV, PIX>(g, &p, p.input(x), out) };
    p.recycle();
}

/// Zero-padded input plus weights repacked as (tap, in, out rounded up to
/// the channel block). Widths are rounded up to whole pixel blocks; the
/// overhang is computed and discarded. Pointwise layers whose width already
/// is a whole number of blocks read the input in place.
struct Prepared {
    padded: Option<Vec<f32>>,
    packed: Vec<f32>,
    bias: Vec<f32>,
    /// Row length of the padded input, in pixels.
    pw: usize,
    /// Output width rounded up to the pixel block.
    wb: usize,
    block: usize,
    pix: usize,
}

impl Prepared {
    fn input<'a>(&'a self, x: &'a [f32]) -> &'a [f32] {
        self.padded.as_deref().unwrap_or(x)
    }

    fn recycle(self) {
        if let Some(buf) = self.padded {
            super::scratch::give(buf);
        }
    }
}

#[inline(always)]
fn prepare(g: &ConvGeometry, x: &[f32], weights: &[f64], bias: &[f64], block: usize, pix: usize) -> Prepared {
    let (h, w, cin, cout) = (g.height, g.width, g.in_channels, g.out_channels);
    let reach = g.size / 2 * g.dilation;
    let taps = g.size * g.size;
    let wb = w.div_ceil(pix) * pix;
    let pw = wb + 2 * reach;
    let ph = h + 2 * reach;
    let padded = if reach == 0 && wb == w {
        None
    } else {
        let mut buf = super::scratch::take(ph * pw * cin, 0.0);
        for y in 0..h {
            let src = &x[y * w * cin..(y + 1) * w * cin];
            let dst = ((y + reach) * pw + reach) * cin;
            buf[dst..dst + w * cin].copy_from_slice(src);
        }
        Some(buf)
    };
    let cpad = cout.div_ceil(block) * block;
    let mut packed = vec![0f32; taps * cin * cpad];
    for t in 0..taps {
        for ci in 0..cin {
            let src = &weights[(t * cin + ci) * cout..(t * cin + ci + 1) * cout];
            let dst = &mut packed[(t * cin + ci) * cpad..(t * cin + ci) * cpad + cout];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v as f32;
            }
        }
    }
    let mut bias_pad = vec![0f32; cpad];
    for (d, &v) in bias_pad.iter_mut().zip(bias) {
        *d = v as f32;
    }
    Prepared { padded, packed, bias: bias_pad, pw, wb, block, pix }
}

#[inline(always)]
fn store_block(g: &ConvGeometry, out: &mut [f32], y: usize, xx: usize, c0: usize, acc: &[f32]) {
    let (w, cout) = (g.width, g.out_channels);
    if xx >= w {
        return;
    }
    let n = acc.len().min(cout - c0);
    let at = (y * w + xx) * cout + c0;
    out[at..at + n].copy_from_slice(&acc[..n]);
}

#[inline(always)]
fn conv_rows<const FUSED: bool>(g: &ConvGeometry, p: &Prepared, input: &[f32], out: &mut [f32]) {
    const CH: usize = CH_GENERIC;
    debug_assert_eq!((p.block, p.pix), (CH_GENERIC, PIX_GENERIC));
    let cin = g.in_channels;
    let cpad = p.bias.len();
    for y in 0..g.height {
        for c0 in (0..cpad).step_by(CH) {
            let b: [f32; CH] = p.bias[c0..c0 + CH].try_into().unwrap();
            for xb in (0..p.wb).step_by(PIX_GENERIC) {
                let (mut a0, mut a1, mut a2, mut a3) = (b, b, b, b);
                for ky in 0..g.size {
                    let row = (y + ky * g.dilation) * p.pw;
                    for kx in 0..g.size {
                        let base = (row + xb + kx * g.dilation) * cin;
                        let t = ky * g.size + kx;
                        let wt = &p.packed[t * cin * cpad..(t + 1) * cin * cpad];
                        let xs = &input[base..base + PIX_GENERIC * cin];
                        let (x0, rest) = xs.split_at(cin);
                        let (x1, rest) = rest.split_at(cin);
                        let (x2, x3) = rest.split_at(cin);
                        for ci in 0..cin {
                            let wv: &[f32; CH] = wt[ci * cpad + c0..ci * cpad + c0 + CH].try_into().unwrap();
                            let (v0, v1, v2, v3) = (x0[ci], x1[ci], x2[ci], x3[ci]);
                            for j in 0..CH {
                                a0[j] = madd32::<FUSED>(v0, wv[j], a0[j]);
                                a1[j] = madd32::<FUSED>(v1, wv[j], a1[j]);
                                a2[j] = madd32::<FUSED>(v2, wv[j], a2[j]);
                                a3[j] = madd32::<FUSED>(v3, wv[j], a3[j]);
                            }
                        }
                    }
                }
                for (i, a) in [a0, a1, a2, a3].iter().enumerate() {
                    store_block(g, out, y, xb + i, c0, a);
                }
            }
        }
    }
}

/// `PIX` pixels × `16 * NV` output channels held in registers; input values
/// are broadcast straight from memory.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,fma")]
unsafe fn conv_rows_avx512<const NV: usize, const PIX: usize>(
    g: &ConvGeometry,
    p: &Prepared,
    input: &[f32],
    out: &mut [f32],
) {
    use std::arch::x86_64::*;
    let cin = g.in_channels;
    let cpad = p.bias.len();
    let taps = g.size * g.size;
    let span = (g.size - 1) * g.dilation;
    // Every read below stays inside these two buffers.
    assert!(p.block == 16 * NV && p.pix == PIX && cpad % (16 * NV) == 0);
    assert!(p.packed.len() >= taps * cin * cpad);
    assert!(input.len() >= ((g.height - 1 + span) * p.pw + p.wb + span) * cin);
    let xs_all = input.as_ptr();
    let ws_all = p.packed.as_ptr();
    let mut lanes = [0f32; 32];
    for y in 0..g.height {
        for c0 in (0..cpad).step_by(16 * NV) {
            let mut b = [_mm512_setzero_ps(); NV];
            for (v, bv) in b.iter_mut().enumerate() {
                // SAFETY: `c0 + 16 * NV <= cpad == bias.len()`.
                *bv = unsafe { _mm512_loadu_ps(p.bias.as_ptr().add(c0 + 16 * v)) };
            }
            for xb in (0..p.wb).step_by(PIX) {
                let mut acc = [b; PIX];
                for ky in 0..g.size {
                    let row = (y + ky * g.dilation) * p.pw;
                    for kx in 0..g.size {
                        let base = (row + xb + kx * g.dilation) * cin;
                        let t = ky * g.size + kx;
                        for ci in 0..cin {
                            // SAFETY: the asserts above bound `base + PIX * cin`
                            // and `(t * cin + ci) * cpad + c0 + 16 * NV`.
                            unsafe {
                                let wp = ws_all.add((t * cin + ci) * cpad + c0);
                                let mut wv = [_mm512_setzero_ps(); NV];
                                for (v, w) in wv.iter_mut().enumerate() {
                                    *w = _mm512_loadu_ps(wp.add(16 * v));
                                }
                                let xp = xs_all.add(base + ci);
                                for (px, a) in acc.iter_mut().enumerate() {
                                    let x = _mm512_set1_ps(*xp.add(px * cin));
                                    for v in 0..NV {
                                        a[v] = _mm512_fmadd_ps(x, wv[v], a[v]);
                                    }
                                }
                            }
                        }
                    }
                }
                for (px, a) in acc.iter().enumerate() {
                    for (v, av) in a.iter().enumerate() {
                        // SAFETY: `lanes` holds 32 floats and `v < NV <= 2`.
                        unsafe { _mm512_storeu_ps(lanes.as_mut_ptr().add(16 * v), *av) };
                    }
                    store_block(g, out, y, xb + px, c0, &lanes[..16 * NV]);
                }
            }
        }
    }
}

/// Same-padded per-channel cross-correlation, unit dilation, no bias.
pub(crate) fn depthwise_same(
    height: usize,
    width: usize,
    channels: usize,
    size: usize,
    x: &[f32],
    weights: &[f64],
    out: &mut [f32],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if has_avx2_fma() {
            // SAFETY: the features were detected at runtime just above.
            unsafe { depthwise_same_avx2(height, width, channels, size, x, weights, out) };
            return;
        }
    }
    depthwise_same_impl::<false>(height, width, channels, size, x, weights, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn depthwise_same_avx2(
    height: usize,
    width: usize,
    channels: usize,
    size: usize,
    x: &[f32],
    weights: &[f64],
    out: &mut [f32],
) {
    depthwise_same_impl::<true>(height, width, channels, size, x, weights, out)
}

#[inline(always)]
fn depthwise_same_impl<const FUSED: bool>(
    h: usize,
    w: usize,
    c: usize,
    size: usize,
    x: &[f32],
    weights: &[f64],
    out: &mut [f32],
) {
    // Row at a time: each tap is one pass over a contiguous stretch of the
    // row, so bounds are resolved per tap rather than per pixel.
    let reach = (size / 2) as isize;
    let stride = w * c;
    let mut acc = vec![0f64; stride];
    for y in 0..h {
        acc.fill(0.0);
        for ky in 0..size {
            let sy = y as isize + ky as isize - reach;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let srow = &x[sy as usize * stride..(sy as usize + 1) * stride];
            for kx in 0..size {
                let dx = kx as isize - reach;
                let lo = (-dx).max(0) as usize;
                let hi = (w as isize - dx).min(w as isize);
                if hi <= lo as isize {
                    continue;
                }
                let hi = hi as usize;
                let wt = &weights[(ky * size + kx) * c..(ky * size + kx + 1) * c];
                let src = &srow[(lo as isize + dx) as usize * c..(hi as isize + dx) as usize * c];
                let dst = &mut acc[lo * c..hi * c];
                for (a, s) in dst.chunks_exact_mut(c).zip(src.chunks_exact(c)) {
                    for ((a, &v), &wi) in a.iter_mut().zip(s).zip(wt) {
                        *a = madd::<FUSED>(v as f64, wi, *a);
                        }
                }
            }
        }
        for (d, &a) in out[y * stride..(y + 1) * stride].iter_mut().zip(&acc) {
            *d = a as f32;
        }
    }
}

/// Applies `f` to every element; the closure is compiled with AVX2 when the
/// CPU has it.
#[inline(always)]
pub(crate) fn map_in_place<F: Fn(f32) -> f32>(xs: &mut [f32], f: F) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime just above.
            unsafe { map_in_place_avx2(xs, f) };
            return;
        }
    }
    xs.iter_mut().for_each(|v| *v = f(*v));
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn map_in_place_avx2<F: Fn(f32) -> f32>(xs: &mut [f32], f: F) {
    xs.iter_mut().for_each(|v| *v = f(*v));
}

/// Per-pixel standardization over `c` contiguous channels.
/// `post` is applied to each normalized value before it is stored.
#[inline(always)]
pub(crate) fn layer_norm_rows<F: Fn(f32) -> f32>(
    xs: &mut [f32],
    c: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    post: F,
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime just above.
            unsafe { layer_norm_avx2(xs, c, gamma, beta, eps, post) };
            return;
        }
    }
    layer_norm_impl(xs, c, gamma, beta, eps, post)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn layer_norm_avx2<F: Fn(f32) -> f32>(
    xs: &mut [f32],
    c: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    post: F,
) {
    layer_norm_impl(xs, c, gamma, beta, eps, post)
}

#[inline(always)]
fn layer_norm_impl<F: Fn(f32) -> f32>(
    xs: &mut [f32],
    c: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    post: F,
) {
    // Eight independent partial sums so the reductions are not bound by
    // add latency; the lane layout is fixed, so results are deterministic.
    #[inline(always)]
    fn lanes(px: &[f32], f: impl Fn(f32) -> f64) -> f64 {
        const L: usize = 8;
        let mut acc = [0f64; L];
        let mut chunks = px.chunks_exact(L);
        for ch in &mut chunks {
            for i in 0..L {
                acc[i] += f(ch[i]);
            }
        }
        for (i, &v) in chunks.remainder().iter().enumerate() {
            acc[i] += f(v);
        }
        acc.iter().sum()
    }
    let n = c as f64;
    // The activation runs as a separate pass over cache-sized blocks, where
    // it vectorizes independently of the channel count.
    for block in xs.chunks_mut(c * 64) {
        for px in block.chunks_exact_mut(c) {
            let mean = lanes(px, |v| v as f64) / n;
            let var = lanes(px, |v| {
                let d = v as f64 - mean;
                d * d
            }) / n;
            let inv = 1.0 / (var + eps).sqrt();
            for ((v, &g), &bt) in px.iter_mut().zip(gamma).zip(beta) {
                *v = ((*v as f64 - mean) * inv * g + bt) as f32;
            }
        }
        block.iter_mut().for_each(|v| *v = post(*v));
    }
}
