//! Channel schedule of the network, loadable from a JSON document.
//!
//! The shipped schedule lives in `configs/leader-default.json`. Exported
//! weights with a different layout can be paired with their own document via
//! `--config`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::PoolMode;

const DEFAULT_CONFIG: &str = include_str!("../../configs/leader-default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub version: u32,
    pub layer_norm_eps: f32,
    /// When set, [`ModelConfig::check_reference_schedule`] is enforced at build time.
    #[serde(default)]
    pub reference_schedule: bool,
    pub stem: StemConfig,
    pub context: ContextConfig,
    pub gate: GateConfig,
    pub refine: RefineConfig,
    pub head: HeadConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemConfig {
    pub kernel_size: usize,
    /// Pooling window and stride of every stem path.
    pub pool_size: usize,
    pub paths: Vec<StemPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemPath {
    pub name: String,
    pub channels: usize,
    pub pool: PoolMode,
}

/// Separable-convolution skip autoencoder. `encoder[k]` is the width at
/// resolution level `k`; `decoder` runs back up from the second-deepest level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    pub dilations: Vec<usize>,
    pub filters: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    pub encoder: Vec<InvBlockConfig>,
    pub decoder: Vec<RefineDecoderStage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvBlockConfig {
    pub channels: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineDecoderStage {
    /// Output width of the upsampling block feeding this stage.
    pub upsample: usize,
    pub channels: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub input_channels: usize,
    pub block_channels: usize,
    pub hidden: usize,
    pub output_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::from_json_str(DEFAULT_CONFIG).expect("shipped model config is valid")
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ModelConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| config_err(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn stem_channels(&self) -> usize {
        self.stem.paths.iter().map(|p| p.channels).sum()
    }

    pub fn context_output_channels(&self) -> usize {
        *self
            .context
            .decoder
            .last()
            .unwrap_or(&self.context.encoder[0])
    }

    pub fn refine_input_channels(&self) -> usize {
        self.gate.channels + self.stem_channels()
    }

    pub fn refine_output_channels(&self) -> usize {
        self.refine
            .decoder
            .last()
            .map_or(self.refine.encoder[0].channels, |d| d.channels)
    }

    /// Spatial multiple the input must be padded to so every pooling stage
    /// divides evenly.
    pub fn padding_multiple(&self) -> usize {
        let context = self.context.encoder.len() - 1;
        let refine = self.refine.encoder.len() - 1;
        self.stem.pool_size << context.max(refine)
    }

    /// Structural consistency: every block's input matches its producer.
    pub fn validate(&self) -> Result<()> {
        if !(self.layer_norm_eps > 0.0) {
            return Err(config_err("layer_norm_eps must be positive"));
        }
        if self.stem.paths.is_empty() {
            return Err(config_err("stem needs at least one path"));
        }
        if self.stem.kernel_size % 2 == 0 || self.stem.kernel_size == 0 {
            return Err(config_err("stem kernel size must be odd"));
        }
        if self.stem.pool_size == 0 {
            return Err(config_err("stem pool size must be positive"));
        }
        if self.stem.paths.iter().any(|p| p.channels == 0) {
            return Err(config_err("stem path widths must be positive"));
        }
        let mut names: Vec<&str> = self.stem.paths.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.stem.paths.len() {
            return Err(config_err("stem path names must be unique"));
        }
        let ctx = &self.context;
        if ctx.encoder.is_empty() || ctx.encoder.contains(&0) || ctx.decoder.contains(&0) {
            return Err(config_err("context encoder widths must be positive"));
        }
        if ctx.decoder.len() + 1 != ctx.encoder.len() {
            return Err(config_err(format!(
                "context decoder needs {} stages for {} encoder levels, got {}",
                ctx.encoder.len() - 1,
                ctx.encoder.len(),
                ctx.decoder.len()
            )));
        }
        if self.gate.dilations.is_empty()
            || self.gate.dilations.contains(&0)
            || self.gate.filters == 0
        {
            return Err(config_err("gate needs positive dilations and filter count"));
        }
        if self.gate.channels != self.context_output_channels() {
            return Err(config_err(format!(
                "gate width {} must equal the context output width {}",
                self.gate.channels,
                self.context_output_channels()
            )));
        }
        let rf = &self.refine;
        if rf.encoder.is_empty() {
            return Err(config_err("refinement encoder needs at least one level"));
        }
        if rf.decoder.len() + 1 != rf.encoder.len() {
            return Err(config_err(format!(
                "refinement decoder needs {} stages for {} encoder levels, got {}",
                rf.encoder.len() - 1,
                rf.encoder.len(),
                rf.decoder.len()
            )));
        }
        if rf.encoder.iter().any(|b| b.channels == 0 || b.hidden == 0)
            || rf
                .decoder
                .iter()
                .any(|d| d.channels == 0 || d.hidden == 0 || d.upsample == 0)
        {
            return Err(config_err("refinement widths must be positive"));
        }
        if self.head.input_channels != self.refine_output_channels() {
            return Err(config_err(format!(
                "head expects {} input channels but the refinement decoder emits {}",
                self.head.input_channels,
                self.refine_output_channels()
            )));
        }
        if self.head.block_channels == 0 || self.head.hidden == 0 {
            return Err(config_err("head widths must be positive"));
        }
        if self.head.output_kernel % 2 == 0 {
            return Err(config_err("head output kernel must be odd"));
        }
        Ok(())
    }

    /// Block output widths of the refinement autoencoder, in execution order.
    pub fn refine_block_widths(&self) -> Vec<usize> {
        self.refine
            .encoder
            .iter()
            .map(|b| b.channels)
            .chain(self.refine.decoder.iter().map(|d| d.channels))
            .collect()
    }

    /// The published schedule constraints: the refinement autoencoder peaks
    /// at 128 channels, its fourth block contracts to 32, the fifth is the
    /// global minimum of 27, and the head reads 52 maps.
    pub fn check_reference_schedule(&self) -> Result<()> {
        let widths = self.refine_block_widths();
        let peak = widths.iter().copied().max().unwrap_or(0);
        let min = widths.iter().copied().min().unwrap_or(0);
        let fail = |msg: String| Err(config_err(format!("reference schedule: {msg}")));
        if peak != 128 {
            return fail(format!("refinement peak width is {peak}, expected 128"));
        }
        if widths.get(3) != Some(&32) {
            return fail(format!("fourth refinement block has width {:?}, expected 32", widths.get(3)));
        }
        if widths.get(4) != Some(&27) || min != 27 {
            return fail(format!(
                "fifth refinement block has width {:?} (minimum {min}), expected the minimum 27",
                widths.get(4)
            ));
        }
        if self.head.input_channels != 52 {
            return fail(format!("head reads {} maps, expected 52", self.head.input_channels));
        }
        if self.gate.channels != 32 || self.gate.filters != 16 || self.gate.dilations != [1, 3, 6] {
            return fail("gate must use dilations 1/3/6 with 16 filters and 32 outputs".into());
        }
        if self.padding_multiple() != 32 {
            return fail(format!("padding multiple is {}, expected 32", self.padding_multiple()));
        }
        Ok(())
    }
}
