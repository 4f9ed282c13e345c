//! The block library: stem, separable, up/down-sampling, inverted
//! bottleneck, attention gate and head blocks.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::weights::{WeightStore, WeightTensor};
use crate::error::{structural, Error, Result};
use crate::tensor::{
    activation_in_place, add_in_place, concat_channels, conv2d, depthwise_conv2d,
    layer_norm_in_place, mul, pool2d, upsample_concat, upsample_nearest, Activation, ConvKernel, DepthwiseKernel, Padding, PoolMode, Tensor,
};

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// Uniform with variance `1 / fan_in`.
    Fan(usize),
    Bias,
    Gamma,
    Beta,
}

/// Where block constructors get their parameters from: an existing store
/// (recording which names were consumed) or a seeded random generator.
pub(crate) enum ParamSource<'a> {
    Store {
        store: &'a WeightStore,
        used: WeightStore,
        seen: BTreeSet<String>,
    },
    Random {
        rng: ChaCha8Rng,
        out: WeightStore,
    },
}

impl<'a> ParamSource<'a> {
    pub(crate) fn from_store(store: &'a WeightStore) -> Self {
        ParamSource::Store {
            store,
            used: WeightStore::new(),
            seen: BTreeSet::new(),
        }
    }

    pub(crate) fn random(seed: u64) -> Self {
        ParamSource::Random {
            rng: ChaCha8Rng::seed_from_u64(seed),
            out: WeightStore::new(),
        }
    }

    pub(crate) fn take(&mut self, name: &str, dims: &[usize], init: Init) -> Result<Vec<f32>> {
        match self {
            ParamSource::Store { store, used, seen } => {
                let t = store
                    .get(name)
                    .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
                if t.dims() != dims {
                    return Err(Error::ShapeMismatch {
                        name: name.to_string(),
                        expected: dims.to_vec(),
                        found: t.dims().to_vec(),
                    });
                }
                if !seen.insert(name.to_string()) {
                    return Err(Error::DuplicateName(name.to_string()));
                }
                used.insert(name, t.clone())?;
                Ok(t.data().to_vec())
            }
            ParamSource::Random { rng, out } => {
                let n: usize = dims.iter().product();
                let data: Vec<f32> = match init {
                    Init::Fan(fan_in) => {
                        let a = (3.0 / fan_in.max(1) as f32).sqrt();
                        (0..n).map(|_| rng.random_range(-a..a)).collect()
                    }
                    Init::Bias => (0..n).map(|_| rng.random_range(-0.05..0.05)).collect(),
                    Init::Gamma => (0..n).map(|_| rng.random_range(0.9..1.1)).collect(),
                    Init::Beta => (0..n).map(|_| rng.random_range(-0.1..0.1)).collect(),
                };
                out.insert(name, WeightTensor::new(dims.to_vec(), data.clone())?)?;
                Ok(data)
            }
        }
    }

    /// The tensors that were consumed (or generated).
    pub(crate) fn into_store(self) -> WeightStore {
        match self {
            ParamSource::Store { used, .. } => used,
            ParamSource::Random { out, .. } => out,
        }
    }

    fn conv(
        &mut self,
        prefix: &str,
        size: usize,
        cin: usize,
        cout: usize,
    ) -> Result<ConvKernel> {
        let w = self.take(
            &format!("{prefix}.weight"),
            &[size, size, cin, cout],
            Init::Fan(size * size * cin),
        )?;
        let b = self.take(&format!("{prefix}.bias"), &[cout], Init::Bias)?;
        ConvKernel::new(size, cin, cout, w, Some(b))
    }

    fn depthwise(&mut self, prefix: &str, size: usize, channels: usize) -> Result<DepthwiseKernel> {
        let w = self.take(
            &format!("{prefix}.weight"),
            &[size, size, channels],
            Init::Fan(size * size),
        )?;
        DepthwiseKernel::new(size, channels, w)
    }

    fn norm(&mut self, prefix: &str, channels: usize, eps: f32) -> Result<Norm> {
        Ok(Norm {
            gamma: self.take(&format!("{prefix}.gamma"), &[channels], Init::Gamma)?,
            beta: self.take(&format!("{prefix}.beta"), &[channels], Init::Beta)?,
            eps,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    gamma: Vec<f32>,
    beta: Vec<f32>,
    eps: f32,
}

impl Norm {
    /// Layer norm followed by GELU.
    fn forward_gelu(&self, mut x: Tensor) -> Result<Tensor> {
        layer_norm_in_place(&mut x, &self.gamma, &self.beta, self.eps, Activation::Gelu)?;
        Ok(x)
    }
}

/// Conv → LayerNorm → GELU → Pooling.
#[derive(Debug, Clone)]
pub(crate) struct StemBlock {
    conv: ConvKernel,
    norm: Norm,
    pool: PoolMode,
    pool_size: usize,
}

impl StemBlock {
    pub(crate) fn build(
        src: &mut ParamSource,
        prefix: &str,
        kernel: usize,
        channels: usize,
        pool: PoolMode,
        pool_size: usize,
        eps: f32,
    ) -> Result<Self> {
        Ok(Self {
            conv: src.conv(&format!("{prefix}.conv"), kernel, 1, channels)?,
            norm: src.norm(&format!("{prefix}.norm"), channels, eps)?,
            pool,
            pool_size,
        })
    }

    /// Runs in horizontal bands so the full-resolution activation never
    /// exists at once. Every output pixel sees exactly the same inputs, zero
    /// padding included, as the unbanded composition.
    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        const BAND: usize = 16;
        let p = self.pool_size;
        let (h, w, _) = x.shape();
        if h < p || w < p {
            return Err(structural(format!("stem input {h}x{w} is smaller than the {p}x{p} pool")));
        }
        let (oh, ow) = ((h - p) / p + 1, (w - p) / p + 1);
        let reach = self.conv.size() / 2;
        let c = self.conv.out_channels();
        let mut out = Tensor::zeros(oh, ow, c);
        for o0 in (0..oh).step_by(BAND) {
            let rows = BAND.min(oh - o0);
            let slab = row_slab(x, (o0 * p) as isize - reach as isize, rows * p + 2 * reach);
            let y = conv2d(&slab, &self.conv, 1)?;
            let y = self.norm.forward_gelu(row_slab(&y, reach as isize, rows * p))?;
            let pooled = pool2d(&y, self.pool, p, p, Padding::Valid)?;
            out.data_mut()[o0 * ow * c..(o0 + rows) * ow * c].copy_from_slice(pooled.data());
        }
        Ok(out)
    }
}

/// `count` rows starting at `start`, zero-filled where they fall outside `x`.
fn row_slab(x: &Tensor, start: isize, count: usize) -> Tensor {
    let (h, w, c) = x.shape();
    let mut out = Tensor::zeros(count, w, c);
    let stride = w * c;
    for r in 0..count {
        let sy = start + r as isize;
        if sy >= 0 && (sy as usize) < h {
            let sy = sy as usize;
            out.data_mut()[r * stride..(r + 1) * stride]
                .copy_from_slice(&x.data()[sy * stride..(sy + 1) * stride]);
        }
    }
    out
}

pub(crate) trait FeatureBlock: Sized {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
}

/// DepthwiseConv(3×3) → pointwise Conv → LayerNorm → GELU.
#[derive(Debug, Clone)]
pub(crate) struct SeparableBlock {
    dw: DepthwiseKernel,
    pw: ConvKernel,
    norm: Norm,
}

impl SeparableBlock {
    pub(crate) fn build(
        src: &mut ParamSource,
        prefix: &str,
        cin: usize,
        cout: usize,
        eps: f32,
    ) -> Result<Self> {
        Ok(Self {
            dw: src.depthwise(&format!("{prefix}.dw"), 3, cin)?,
            pw: src.conv(&format!("{prefix}.pw"), 1, cin, cout)?,
            norm: src.norm(&format!("{prefix}.norm"), cout, eps)?,
        })
    }
}

impl FeatureBlock for SeparableBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d(&depthwise_conv2d(x, &self.dw)?, &self.pw, 1)?;
        self.norm.forward_gelu(y)
    }
}

/// Pointwise expansion → DepthwiseConv(3×3) → LayerNorm → GELU → pointwise
/// contraction, plus an identity shortcut when input and output widths match.
#[derive(Debug, Clone)]
pub(crate) struct InvBottleneck {
    expand: ConvKernel,
    dw: DepthwiseKernel,
    norm: Norm,
    project: ConvKernel,
}

impl InvBottleneck {
    pub(crate) fn build(
        src: &mut ParamSource,
        prefix: &str,
        cin: usize,
        hidden: usize,
        cout: usize,
        eps: f32,
    ) -> Result<Self> {
        Ok(Self {
            expand: src.conv(&format!("{prefix}.pw1"), 1, cin, hidden)?,
            dw: src.depthwise(&format!("{prefix}.dw"), 3, hidden)?,
            norm: src.norm(&format!("{prefix}.norm"), hidden, eps)?,
            project: src.conv(&format!("{prefix}.pw2"), 1, hidden, cout)?,
        })
    }

    fn residual(&self) -> bool {
        self.expand.in_channels() == self.project.out_channels()
    }

    fn forward_expanded(&self, expanded: &Tensor) -> Result<Tensor> {
        let y = self.norm.forward_gelu(depthwise_conv2d(expanded, &self.dw)?)?;
        conv2d(&y, &self.project, 1)
    }
}

impl FeatureBlock for InvBottleneck {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.forward_expanded(&conv2d(x, &self.expand, 1)?)?;
        if self.residual() {
            add_in_place(&mut y, x)?;
        }
        Ok(y)
    }
}

/// Nearest-neighbour upsampling → pointwise Conv → LayerNorm → GELU.
///
/// The pointwise stages commute with nearest replication, so they run at the
/// low resolution and the result is replicated afterwards.
#[derive(Debug, Clone)]
pub(crate) struct UpsampleBlock {
    conv: ConvKernel,
    norm: Norm,
    factor: usize,
}

impl UpsampleBlock {
    pub(crate) fn build(
        src: &mut ParamSource,
        prefix: &str,
        cin: usize,
        cout: usize,
        factor: usize,
        eps: f32,
    ) -> Result<Self> {
        Ok(Self {
            conv: src.conv(&format!("{prefix}.conv"), 1, cin, cout)?,
            norm: src.norm(&format!("{prefix}.norm"), cout, eps)?,
            factor,
        })
    }

    /// Everything but the replication, at the input resolution.
    fn forward_low(&self, x: &Tensor) -> Result<Tensor> {
        self.norm.forward_gelu(conv2d(x, &self.conv, 1)?)
    }
}

/// Multi-scale gating: parallel dilated 3×3 convolutions with GELU,
/// concatenated, reduced pointwise and squashed by a sigmoid.
#[derive(Debug, Clone)]
pub struct AttentionGate {
    dilated: Vec<(usize, ConvKernel)>,
    psi: ConvKernel,
}

/// Both the gating signal and the gated features.
#[derive(Debug, Clone)]
pub struct GateOutput {
    pub gate: Tensor,
    pub gated: Tensor,
}

impl AttentionGate {
    /// `dilated` pairs each dilation rate with its biased 3×3 kernel; `psi`
    /// maps the concatenation back to the input width.
    pub fn new(dilated: Vec<(usize, ConvKernel)>, psi: ConvKernel) -> Result<Self> {
        let first = dilated
            .first()
            .ok_or_else(|| structural("attention gate needs at least one dilated path"))?;
        let cin = first.1.in_channels();
        let mut concat = 0;
        for (rate, k) in &dilated {
            if *rate == 0 {
                return Err(structural("dilation rate must be positive"));
            }
            if k.in_channels() != cin {
                return Err(structural("dilated paths must share the input width"));
            }
            concat += k.out_channels();
        }
        if psi.size() != 1 || psi.in_channels() != concat || psi.out_channels() != cin {
            return Err(structural(format!(
                "gate projection must be 1x1 {concat}->{cin}, got {}x{} {}->{}",
                psi.size(),
                psi.size(),
                psi.in_channels(),
                psi.out_channels()
            )));
        }
        Ok(Self { dilated, psi })
    }

    pub(crate) fn build(
        src: &mut ParamSource,
        prefix: &str,
        channels: usize,
        filters: usize,
        dilations: &[usize],
    ) -> Result<Self> {
        let mut dilated = Vec::with_capacity(dilations.len());
        for &rate in dilations {
            dilated.push((rate, src.conv(&format!("{prefix}.dil{rate}"), 3, channels, filters)?));
        }
        let psi = src.conv(
            &format!("{prefix}.psi"),
            1,
            filters * dilations.len(),
            channels,
        )?;
        Self::new(dilated, psi)
    }

    pub fn channels(&self) -> usize {
        self.psi.out_channels()
    }

    pub fn forward(&self, x: &Tensor) -> Result<GateOutput> {
        if x.channels() != self.channels() {
            return Err(structural(format!(
                "attention gate expects {} channels, got {}",
                self.channels(),
                x.channels()
            )));
        }
        let mut paths = Vec::with_capacity(self.dilated.len());
        for (rate, k) in &self.dilated {
            let mut p = conv2d(x, k, *rate)?;
            activation_in_place(&mut p, Activation::Gelu);
            paths.push(p);
        }
        let refs: Vec<&Tensor> = paths.iter().collect();
        let mut gate = conv2d(&concat_channels(&refs)?, &self.psi, 1)?;
        activation_in_place(&mut gate, Activation::Sigmoid);
        let gated = mul(x, &gate)?;
        Ok(GateOutput { gate, gated })
    }
}

/// Inverted bottleneck at the feature resolution → nearest upsampling to the
/// input resolution → output Conv → task activation.
#[derive(Debug, Clone)]
pub(crate) struct HeadBlock {
    block: InvBottleneck,
    out: ConvKernel,
    activation: Activation,
    factor: usize,
}

impl HeadBlock {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        src: &mut ParamSource,
        prefix: &str,
        cin: usize,
        hidden: usize,
        width: usize,
        kernel: usize,
        outputs: usize,
        activation: Activation,
        factor: usize,
        eps: f32,
    ) -> Result<Self> {
        Ok(Self {
            block: InvBottleneck::build(src, prefix, cin, hidden, width, eps)?,
            out: src.conv(&format!("{prefix}.out"), kernel, width, outputs)?,
            activation,
            factor,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = upsample_nearest(&self.block.forward(x)?, self.factor)?;
        let mut out = conv2d(&y, &self.out, 1)?;
        activation_in_place(&mut out, self.activation);
        Ok(out)
    }
}

/// Encoder levels separated by 2×2 max pooling, decoder stages that upsample,
/// concatenate the matching encoder output and refine.
#[derive(Debug, Clone)]
pub(crate) struct SkipAutoencoder<B> {
    pub(crate) name: &'static str,
    pub(crate) encoder: Vec<B>,
    pub(crate) ups: Vec<UpsampleBlock>,
    pub(crate) decoder: Vec<B>,
}

impl<B: FeatureBlock> SkipAutoencoder<B> {
    pub(crate) fn forward(
        &self,
        x: &Tensor,
        mut observe: impl FnMut(String, &Tensor) -> Result<()>,
    ) -> Result<Tensor> {
        let mut skips: Vec<Tensor> = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for (k, block) in self.encoder.iter().enumerate() {
            if k > 0 {
                h = pool2d(&h, PoolMode::Max, 2, 2, Padding::Valid)?;
            }
            h = block.forward(&h)?;
            observe(format!("{}.enc{}", self.name, k + 1), &h)?;
            if k + 1 < self.encoder.len() {
                skips.push(h.clone());
            }
        }
        for (k, (up, block)) in self.ups.iter().zip(&self.decoder).enumerate() {
            let skip = skips.pop().expect("one skip per decoder stage");
            let low = up.forward_low(&h)?;
            h = block.forward(&upsample_concat(&low, up.factor, &skip)?)?;
            observe(format!("{}.dec{}", self.name, k + 1), &h)?;
        }
        Ok(h)
    }
}
