//! Network assembly and forward inference.
//!
//! The pipeline is Stem (dual pooling paths) → Context-Autoencoder →
//! Attention-Gate → Refinement-Autoencoder (fed the gated features plus a
//! stem skip) → three heads, followed by the fixed postprocessing layers.

mod blocks;
pub mod config;
mod graph;
mod pad;
mod weights;

pub use blocks::{AttentionGate, GateOutput};
pub use config::ModelConfig;
pub use graph::{build_model, random_model, random_weights, Model, PredictionMaps, Taps};
pub use pad::{pad_to_multiple, pad_to_multiple_32, PadRecord};
pub use weights::{WeightStore, WeightTensor};
