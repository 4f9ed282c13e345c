//! Smoothing, non-maximum suppression, angle decoding and minutiae-list
//! extraction applied to the raw head outputs.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};
use crate::tensor::{conv2d, pool2d, ConvKernel, Padding, PoolMode, Tensor};

pub const DEFAULT_SMOOTHING_SIGMA: f64 = 1.0;
pub const SMOOTHING_SIZE: usize = 5;
pub const NMS_WINDOW: usize = 7;
pub const DEFAULT_TAU_Q: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinutiaKind {
    RidgeEnding,
    Bifurcation,
}

impl MinutiaKind {
    /// Single-letter code used in minutiae files: `E` or `B`.
    pub fn code(self) -> char {
        match self {
            MinutiaKind::RidgeEnding => 'E',
            MinutiaKind::Bifurcation => 'B',
        }
    }

    pub fn from_code(c: &str) -> Option<Self> {
        match c {
            "E" => Some(MinutiaKind::RidgeEnding),
            "B" => Some(MinutiaKind::Bifurcation),
            _ => None,
        }
    }

    /// Value carried by the dense type map: 1 for ridge endings.
    pub fn map_value(self) -> f32 {
        match self {
            MinutiaKind::RidgeEnding => 1.0,
            MinutiaKind::Bifurcation => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minutia {
    /// Column.
    pub x: usize,
    /// Row.
    pub y: usize,
    /// Direction in radians, `(-π, π]`.
    pub theta: f64,
    pub kind: MinutiaKind,
    pub quality: f64,
}

impl Minutia {
    pub fn new(x: usize, y: usize, theta: f64, kind: MinutiaKind, quality: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            kind,
            quality,
        }
    }

    pub fn distance_to(&self, other: &Minutia) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Minutiae of one image, in emission order, together with the image extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinutiaSet {
    width: usize,
    height: usize,
    minutiae: Vec<Minutia>,
}

impl MinutiaSet {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            minutiae: Vec::new(),
        }
    }

    /// Checks bounds and rejects two minutiae at the same pixel.
    pub fn new(width: usize, height: usize, minutiae: Vec<Minutia>) -> Result<Self> {
        let mut set = Self::empty(width, height);
        set.minutiae.reserve(minutiae.len());
        let mut seen = HashSet::with_capacity(minutiae.len());
        for m in minutiae {
            if m.x >= width || m.y >= height {
                return Err(Error::InvalidParameter(format!(
                    "minutia ({}, {}) outside a {width}x{height} image",
                    m.x, m.y
                )));
            }
            if !seen.insert((m.x, m.y)) {
                return Err(Error::InvalidParameter(format!(
                    "two minutiae at ({}, {})",
                    m.x, m.y
                )));
            }
            if !m.theta.is_finite() || !m.quality.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite attribute at ({}, {})",
                    m.x, m.y
                )));
            }
            set.minutiae.push(Minutia {
                theta: wrap_angle(m.theta),
                ..m
            });
        }
        Ok(set)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn minutiae(&self) -> &[Minutia] {
        &self.minutiae
    }

    pub fn len(&self) -> usize {
        self.minutiae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Minutia> {
        self.minutiae.iter()
    }

    /// Minutiae with `quality >= tau`, order preserved.
    pub fn above_quality(&self, tau: f64) -> MinutiaSet {
        MinutiaSet {
            width: self.width,
            height: self.height,
            minutiae: self.minutiae.iter().filter(|m| m.quality >= tau).copied().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a MinutiaSet {
    type Item = &'a Minutia;
    type IntoIter = std::slice::Iter<'a, Minutia>;
    fn into_iter(self) -> Self::IntoIter {
        self.minutiae.iter()
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Normalized `SMOOTHING_SIZE`² Gaussian taps in row-major order.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "smoothing sigma must be positive, got {sigma}"
        )));
    }
    let r = (SMOOTHING_SIZE / 2) as isize;
    let mut taps = Vec::with_capacity(SMOOTHING_SIZE * SMOOTHING_SIZE);
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            taps.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(taps)
}

/// 5×5 Gaussian smoothing with zero fill outside the map.
pub fn gaussian_smooth_with(p_hat: &Tensor, sigma: f64) -> Result<Tensor> {
    expect_single(p_hat, "smoothing input")?;
    let taps = gaussian_kernel(sigma)?;
    let k = ConvKernel::new(
        SMOOTHING_SIZE,
        1,
        1,
        taps.iter().map(|&t| t as f32).collect(),
        None,
    )?;
    conv2d(p_hat, &k, 1)
}

pub fn gaussian_smooth(p_hat: &Tensor) -> Result<Tensor> {
    gaussian_smooth_with(p_hat, DEFAULT_SMOOTHING_SIGMA)
}

/// Keeps each value that equals the maximum of its 7×7 neighbourhood and
/// zeroes the rest. Ties are all kept.
pub fn nms(p_star: &Tensor) -> Result<Tensor> {
    expect_single(p_star, "suppression input")?;
    let pooled = pool2d(p_star, PoolMode::Max, NMS_WINDOW, 1, Padding::Same)?;
    let mut out = p_star.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(pooled.data()) {
        if *v != m {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Elementwise `atan2(vy, vx)` in `(-π, π]`, with `atan2(0, 0) = 0`.
pub fn cartesian_to_polar(vx: &Tensor, vy: &Tensor) -> Result<Tensor> {
    if vx.shape() != vy.shape() {
        return Err(structural(format!(
            "direction components differ in shape: {:?} vs {:?}",
            vx.shape(),
            vy.shape()
        )));
    }
    let (h, w, c) = vx.shape();
    let data = vx
        .data()
        .iter()
        .zip(vy.data())
        .map(|(&x, &y)| polar_angle(x, y))
        .collect();
    Tensor::from_vec(h, w, c, data)
}

/// Largest `f32` not above π; `π as f32` rounds up past it.
const PI_F32_BELOW: f32 = 3.141_592_5;

fn polar_angle(x: f32, y: f32) -> f32 {
    if x == 0.0 && y == 0.0 {
        return 0.0;
    }
    let f = (y as f64).atan2(x as f64) as f32;
    if f as f64 > PI || f as f64 <= -PI {
        PI_F32_BELOW
    } else {
        f
    }
}

/// Reads out every pixel with `p̃ >= tau_q` in row-major order.
pub fn extract_minutiae(
    p_tilde: &Tensor,
    d_hat: &Tensor,
    t_hat: &Tensor,
    tau_q: f64,
) -> Result<MinutiaSet> {
    expect_single(p_tilde, "refined position map")?;
    if d_hat.shape() != p_tilde.shape() || t_hat.shape() != p_tilde.shape() {
        return Err(structural(format!(
            "map shapes differ: position {:?}, direction {:?}, type {:?}",
            p_tilde.shape(),
            d_hat.shape(),
            t_hat.shape()
        )));
    }
    if !(0.0..=1.0).contains(&tau_q) {
        return Err(Error::InvalidParameter(format!(
            "quality threshold must lie in [0, 1], got {tau_q}"
        )));
    }
    let (h, w, _) = p_tilde.shape();
    let mut minutiae = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let q = p_tilde.get(y, x, 0) as f64;
            if q >= tau_q {
                let kind = if t_hat.get(y, x, 0) >= 0.5 {
                    MinutiaKind::RidgeEnding
                } else {
                    MinutiaKind::Bifurcation
                };
                minutiae.push(Minutia {
                    x,
                    y,
                    theta: wrap_angle(d_hat.get(y, x, 0) as f64),
                    kind,
                    quality: q,
                });
            }
        }
    }
    Ok(MinutiaSet { width: w, height: h, minutiae })
}

fn expect_single(t: &Tensor, what: &str) -> Result<()> {
    if t.channels() != 1 {
        return Err(structural(format!(
            "{what} must have one channel, got {}",
            t.channels()
        )));
    }
    Ok(())
}
