//! Minutiae extraction: network inference, postprocessing, ground-truth
//! encoding, losses and the evaluation protocol.

pub mod cli;
pub mod cmr;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod model;
pub mod postprocess;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{build_model, Model, ModelConfig, PredictionMaps, WeightStore};
pub use postprocess::{Minutia, MinutiaKind, MinutiaSet};
pub use tensor::{ConvKernel, DepthwiseKernel, Tensor};
