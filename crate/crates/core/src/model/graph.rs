use std::collections::BTreeMap;

use super::blocks::{
    AttentionGate, HeadBlock, InvBottleneck, ParamSource, SeparableBlock, SkipAutoencoder,
    StemBlock, UpsampleBlock,
};
use super::config::ModelConfig;
use super::pad::{pad_to_multiple, PadRecord};
use super::weights::WeightStore;
use crate::error::{structural, Error, Result};
use crate::postprocess::{cartesian_to_polar, extract_minutiae, gaussian_smooth, nms, MinutiaSet};
use crate::tensor::{concat_channels, Activation, Tensor};

/// Dense outputs of one forward pass, all at the original image extent.
#[derive(Debug, Clone)]
pub struct PredictionMaps {
    /// Minutia likelihood, sigmoid output.
    pub position: Tensor,
    /// `position` after Gaussian smoothing and 7×7 non-maximum suppression.
    pub refined: Tensor,
    pub direction_x: Tensor,
    pub direction_y: Tensor,
    /// Direction in radians, `(-π, π]`.
    pub direction: Tensor,
    /// Ridge-ending likelihood, sigmoid output.
    pub kind: Tensor,
}

/// Executable network. Immutable once built; `forward` may be called from
/// several threads at once.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    stem: Vec<(String, StemBlock)>,
    context: SkipAutoencoder<SeparableBlock>,
    gate: AttentionGate,
    refine: SkipAutoencoder<InvBottleneck>,
    position_head: HeadBlock,
    direction_head: HeadBlock,
    type_head: HeadBlock,
    weights: WeightStore,
    surplus: Vec<String>,
}

/// Activations captured during a forward pass, keyed by stage name. They
/// stay at the network's internal (padded, possibly downsampled) resolution.
pub type Taps = BTreeMap<String, Tensor>;

fn assemble(cfg: &ModelConfig, src: &mut ParamSource) -> Result<AssembledParts> {
    cfg.validate()?;
    let eps = cfg.layer_norm_eps;
    let mut stem = Vec::with_capacity(cfg.stem.paths.len());
    for path in &cfg.stem.paths {
        stem.push((
            path.name.clone(),
            StemBlock::build(
                src,
                &format!("stem.{}", path.name),
                cfg.stem.kernel_size,
                path.channels,
                path.pool,
                cfg.stem.pool_size,
                eps,
            )?,
        ));
    }

    let ctx = &cfg.context;
    let mut encoder = Vec::new();
    let mut cin = cfg.stem_channels();
    for (k, &c) in ctx.encoder.iter().enumerate() {
        encoder.push(SeparableBlock::build(src, &format!("context.enc{}", k + 1), cin, c, eps)?);
        cin = c;
    }
    let mut ups = Vec::new();
    let mut decoder = Vec::new();
    for (k, &c) in ctx.decoder.iter().enumerate() {
        let skip = ctx.encoder[ctx.encoder.len() - 2 - k];
        ups.push(UpsampleBlock::build(src, &format!("context.up{}", k + 1), cin, c, 2, eps)?);
        decoder.push(SeparableBlock::build(
            src,
            &format!("context.dec{}", k + 1),
            c + skip,
            c,
            eps,
        )?);
        cin = c;
    }
    let context = SkipAutoencoder {
        name: "context",
        encoder,
        ups,
        decoder,
    };

    let gate = AttentionGate::build(src, "gate", cfg.gate.channels, cfg.gate.filters, &cfg.gate.dilations)?;

    let rf = &cfg.refine;
    let mut encoder = Vec::new();
    let mut cin = cfg.refine_input_channels();
    for (k, b) in rf.encoder.iter().enumerate() {
        encoder.push(InvBottleneck::build(
            src,
            &format!("refine.enc{}", k + 1),
            cin,
            b.hidden,
            b.channels,
            eps,
        )?);
        cin = b.channels;
    }
    let mut ups = Vec::new();
    let mut decoder = Vec::new();
    for (k, d) in rf.decoder.iter().enumerate() {
        let skip = rf.encoder[rf.encoder.len() - 2 - k].channels;
        ups.push(UpsampleBlock::build(src, &format!("refine.up{}", k + 1), cin, d.upsample, 2, eps)?);
        decoder.push(InvBottleneck::build(
            src,
            &format!("refine.dec{}", k + 1),
            d.upsample + skip,
            d.hidden,
            d.channels,
            eps,
        )?);
        cin = d.channels;
    }
    let refine = SkipAutoencoder {
        name: "refine",
        encoder,
        ups,
        decoder,
    };

    let h = &cfg.head;
    let head = |src: &mut ParamSource, name: &str, outputs: usize, act: Activation| {
        HeadBlock::build(
            src,
            &format!("head.{name}"),
            h.input_channels,
            h.hidden,
            h.block_channels,
            h.output_kernel,
            outputs,
            act,
            cfg.stem.pool_size,
            eps,
        )
    };
    Ok(AssembledParts {
        stem,
        context,
        gate,
        refine,
        position_head: head(src, "position", 1, Activation::Sigmoid)?,
        direction_head: head(src, "direction", 2, Activation::Linear)?,
        type_head: head(src, "type", 1, Activation::Sigmoid)?,
    })
}

struct AssembledParts {
    stem: Vec<(String, StemBlock)>,
    context: SkipAutoencoder<SeparableBlock>,
    gate: AttentionGate,
    refine: SkipAutoencoder<InvBottleneck>,
    position_head: HeadBlock,
    direction_head: HeadBlock,
    type_head: HeadBlock,
}

impl Model {
    fn from_parts(config: ModelConfig, parts: AssembledParts, weights: WeightStore, surplus: Vec<String>) -> Self {
        Self {
            config,
            stem: parts.stem,
            context: parts.context,
            gate: parts.gate,
            refine: parts.refine,
            position_head: parts.position_head,
            direction_head: parts.direction_head,
            type_head: parts.type_head,
            weights,
            surplus,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// The parameters the graph actually consumes.
    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    /// Names present in the source store that no layer consumed.
    pub fn surplus_tensors(&self) -> &[String] {
        &self.surplus
    }

    /// Total number of scalar parameters (weights, biases, norm scales and shifts).
    pub fn parameter_count(&self) -> usize {
        self.weights.parameter_count()
    }

    pub fn attention_gate(&self) -> &AttentionGate {
        &self.gate
    }

    /// Every name accepted by `forward`'s tap list.
    pub fn tap_names(&self) -> Vec<String> {
        let mut names = vec!["stem".to_string()];
        names.extend(self.stem.iter().map(|(n, _)| format!("stem.{n}")));
        for k in 1..=self.context.encoder.len() {
            names.push(format!("context.enc{k}"));
        }
        for k in 1..=self.context.decoder.len() {
            names.push(format!("context.dec{k}"));
        }
        names.extend(["context", "gate", "gate.out"].map(String::from));
        for k in 1..=self.refine.encoder.len() {
            names.push(format!("refine.enc{k}"));
        }
        for k in 1..=self.refine.decoder.len() {
            names.push(format!("refine.dec{k}"));
        }
        names.push("refine.dec_last".to_string());
        names
    }

    /// Runs the full graph on a single-channel image with intensities in
    /// [0, 1]. Any stage listed in `taps` is returned by name.
    pub fn forward(&self, image: &Tensor, taps: &[&str]) -> Result<(PredictionMaps, Taps)> {
        let known = self.tap_names();
        if let Some(bad) = taps.iter().find(|t| !known.iter().any(|k| k == *t)) {
            return Err(structural(format!("unknown tap `{bad}`")));
        }
        if image.channels() != 1 {
            return Err(structural(format!(
                "expected a single-channel image, got {} channels",
                image.channels()
            )));
        }
        if !image.is_finite() {
            return Err(Error::NonFinite("input".into()));
        }
        let mut captured = Taps::new();
        let dec_last = format!("refine.dec{}", self.refine.decoder.len());
        let mut observe = |name: String, t: &Tensor| -> Result<()> {
            if !t.is_finite() {
                return Err(Error::NonFinite(name));
            }
            if taps.contains(&name.as_str()) {
                captured.insert(name.clone(), t.clone());
            }
            if name == dec_last && taps.contains(&"refine.dec_last") {
                captured.insert("refine.dec_last".to_string(), t.clone());
            }
            Ok(())
        };

        let (padded, record) = pad_to_multiple(image, self.config.padding_multiple())?;

        let mut paths = Vec::with_capacity(self.stem.len());
        for (name, block) in &self.stem {
            let y = block.forward(&padded)?;
            observe(format!("stem.{name}"), &y)?;
            paths.push(y);
        }
        let stem = concat_channels(&paths.iter().collect::<Vec<_>>())?;
        observe("stem".into(), &stem)?;

        let x = self.context.forward(&stem, &mut observe)?;
        observe("context".into(), &x)?;

        let g = self.gate.forward(&x)?;
        observe("gate".into(), &g.gate)?;
        observe("gate.out".into(), &g.gated)?;

        let refined_in = concat_channels(&[&g.gated, &stem])?;
        let features = self.refine.forward(&refined_in, &mut observe)?;

        let position = self.position_head.forward(&features)?;
        observe("head.position".into(), &position)?;
        let direction = self.direction_head.forward(&features)?;
        observe("head.direction".into(), &direction)?;
        let kind = self.type_head.forward(&features)?;
        observe("head.type".into(), &kind)?;

        let maps = finish_maps(&record, position, direction, kind)?;
        Ok((maps, captured))
    }

    /// Forward pass followed by read-out of every refined peak with quality
    /// at least `tau_q`.
    pub fn extract(&self, image: &Tensor, tau_q: f64) -> Result<(MinutiaSet, PredictionMaps)> {
        let (maps, _) = self.forward(image, &[])?;
        let set = extract_minutiae(&maps.refined, &maps.direction, &maps.kind, tau_q)?;
        Ok((set, maps))
    }
}

fn finish_maps(record: &PadRecord, position: Tensor, direction: Tensor, kind: Tensor) -> Result<PredictionMaps> {
    let position = record.crop(&position)?;
    let direction_x = record.crop(&direction.channel(0))?;
    let direction_y = record.crop(&direction.channel(1))?;
    Ok(PredictionMaps {
        refined: nms(&gaussian_smooth(&position)?)?,
        direction: cartesian_to_polar(&direction_x, &direction_y)?,
        position,
        direction_x,
        direction_y,
        kind: record.crop(&kind)?,
    })
}

/// Instantiates the graph described by `cfg` from `weights`. Every tensor the
/// graph needs must be present with the right shape; extra tensors are
/// listed in [`Model::surplus_tensors`].
pub fn build_model(weights: &WeightStore, cfg: &ModelConfig) -> Result<Model> {
    if cfg.reference_schedule {
        cfg.check_reference_schedule()?;
    }
    let mut src = ParamSource::from_store(weights);
    let parts = assemble(cfg, &mut src)?;
    let used = src.into_store();
    let surplus = weights
        .names()
        .filter(|n| !used.contains(n))
        .map(String::from)
        .collect();
    Ok(Model::from_parts(cfg.clone(), parts, used, surplus))
}

/// A complete, seeded random parameter set for `cfg`.
pub fn random_weights(cfg: &ModelConfig, seed: u64) -> Result<WeightStore> {
    let mut src = ParamSource::random(seed);
    assemble(cfg, &mut src)?;
    Ok(src.into_store())
}

/// Shorthand for `build_model(&random_weights(cfg, seed)?, cfg)`.
pub fn random_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    build_model(&random_weights(cfg, seed)?, cfg)
}
