//! Dense rank-3 float tensors and the small set of layer primitives the
//! network is built from.
//!
//! Layout is row-major `(row, column, channel)`, i.e. channels are the
//! fastest-varying index. All reductions accumulate in `f64` and round once
//! on store, so results do not depend on evaluation order between calls.

mod kernels;
pub mod ops;
mod scratch;

pub use ops::{
    activation, activation_in_place, add, add_in_place, concat_channels, conv2d, depthwise_conv2d,
    layer_norm, layer_norm_in_place, mul, pool2d, split_half, upsample_concat, upsample_nearest,
    Activation, Padding, PoolMode,
};

use crate::error::{structural, Result};

pub use scratch::release as release_scratch;

/// Default layer-normalization epsilon.
pub const LAYER_NORM_EPS: f32 = 1e-6;

#[derive(PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        let mut data = scratch::take(self.data.len(), 0.0);
        data.copy_from_slice(&self.data);
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }
}

impl Drop for Tensor {
    fn drop(&mut self) {
        scratch::give(std::mem::take(&mut self.data));
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(
            height > 0 && width > 0 && channels > 0,
            "tensor dimensions must be positive"
        );
        Self {
            height,
            width,
            channels,
            data: scratch::take(height * width * channels, value),
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(structural(format!(
                "tensor dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(structural(format!(
                "tensor {height}x{width}x{channels} needs {} elements, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a tensor by evaluating `f(row, col, channel)` at every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut t = Self::zeros(height, width, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    t.data[(y * width + x) * channels + c] = f(y, x, c);
                }
            }
        }
        t
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(mut self) -> Vec<f32> {
        std::mem::take(&mut self.data)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f32) {
        self.data[(row * self.width + col) * self.channels + channel] = value;
    }

    /// The channel vector at one spatial location.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Extracts a single channel as an `h×w×1` tensor.
    pub fn channel(&self, channel: usize) -> Tensor {
        assert!(channel < self.channels, "channel index out of range");
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[channel])
            .collect();
        Tensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Top-left `height × width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Tensor> {
        if height == 0 || width == 0 || height > self.height || width > self.width {
            return Err(structural(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in 0..height {
            let start = y * self.width * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(Tensor {
            height,
            width,
            channels: self.channels,
            data,
        })
    }

    /// Largest elementwise absolute difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f32> {
        if self.shape() != other.shape() {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max),
        )
    }
}

/// Weights of a standard or dilated convolution, stored `(s, s, in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    size: usize,
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f32>,
    bias: Option<Vec<f32>>,
}

impl ConvKernel {
    pub fn new(
        size: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(structural(format!("kernel size must be odd, got {size}")));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(structural("kernel channel counts must be positive"));
        }
        let expected = size * size * in_channels * out_channels;
        if weights.len() != expected {
            return Err(structural(format!(
                "{size}x{size} kernel {in_channels}->{out_channels} needs {expected} weights, got {}",
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(structural(format!(
                    "bias length {} does not match {out_channels} output channels",
                    b.len()
                )));
            }
        }
        Ok(Self {
            size,
            in_channels,
            out_channels,
            weights,
            bias,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    /// Weight at `(ky, kx, in, out)`.
    #[inline]
    pub fn weight(&self, ky: usize, kx: usize, ci: usize, co: usize) -> f32 {
        self.weights[((ky * self.size + kx) * self.in_channels + ci) * self.out_channels + co]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// One `s×s` filter per channel, stored `(s, s, channels)`, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseKernel {
    size: usize,
    channels: usize,
    weights: Vec<f32>,
}

impl DepthwiseKernel {
    pub fn new(size: usize, channels: usize, weights: Vec<f32>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(structural(format!("kernel size must be odd, got {size}")));
        }
        if channels == 0 {
            return Err(structural("depthwise kernel needs at least one channel"));
        }
        if weights.len() != size * size * channels {
            return Err(structural(format!(
                "{size}x{size} depthwise kernel over {channels} channels needs {} weights, got {}",
                size * size * channels,
                weights.len()
            )));
        }
        Ok(Self {
            size,
            channels,
            weights,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, ky: usize, kx: usize, c: usize) -> f32 {
        self.weights[(ky * self.size + kx) * self.channels + c]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len()
    }
}
