//! Castle-moat-rampart ground-truth encoding: position, weight, direction
//! and type targets built from an annotated minutiae set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::MinutiaSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmrParams {
    /// Castle radius, pixels.
    pub delta: f64,
    /// Moat width, pixels.
    pub beta: f64,
    /// Slope of the Gaussian flanks, pixels.
    pub sigma: f64,
    /// Background plateau weight.
    pub lambda: f64,
}

impl Default for CmrParams {
    fn default() -> Self {
        Self {
            delta: 4.0,
            beta: 2.0,
            sigma: 2.0,
            lambda: 0.3,
        }
    }
}

impl CmrParams {
    pub fn new(delta: f64, beta: f64, sigma: f64, lambda: f64) -> Result<Self> {
        let p = Self {
            delta,
            beta,
            sigma,
            lambda,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.delta) || !positive(self.beta) || !positive(self.sigma) {
            return Err(Error::InvalidParameter(format!(
                "delta, beta and sigma must be positive, got {}, {}, {}",
                self.delta, self.beta, self.sigma
            )));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Distance at which the inner Gaussian flank reaches the rampart crest.
    pub fn s1(&self) -> f64 {
        self.beta + 3.0 * self.sigma
    }
}

/// Target bundle for one image.
#[derive(Debug, Clone)]
pub struct GroundTruthMaps {
    /// Binary position map.
    pub position: Tensor,
    pub weight: Tensor,
    /// Direction of the nearest minutia, radians.
    pub direction: Tensor,
    /// 1 where the nearest minutia is a ridge ending.
    pub kind: Tensor,
}

/// Which position target to build. The Gaussian variant exists only for
/// ablation comparisons; its weight map is uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoding {
    Cmr(CmrParams),
    Gaussian { sigma: f64 },
}

fn dist(x: usize, y: usize, mx: usize, my: usize) -> f64 {
    let dx = x as f64 - mx as f64;
    let dy = y as f64 - my as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Binary map: 1 where exactly one minutia lies within `delta` and none in
/// the ring `(delta, delta + beta]`.
///
/// Only minutiae whose window reaches a pixel are visited, so the cost grows
/// with the number of minutiae rather than with their product with the image.
pub fn position_map(gt: &MinutiaSet, height: usize, width: usize, params: &CmrParams) -> Result<Tensor> {
    params.validate()?;
    check_dims(gt, height, width)?;
    let n = height * width;
    let mut inside = vec![0u32; n];
    let mut ring = vec![false; n];
    let reach = (params.delta + params.beta).ceil() as usize;
    for m in gt {
        let (y0, y1) = (m.y.saturating_sub(reach), (m.y + reach).min(height - 1));
        let (x0, x1) = (m.x.saturating_sub(reach), (m.x + reach).min(width - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = dist(x, y, m.x, m.y);
                if d <= params.delta {
                    inside[y * width + x] += 1;
                } else if d <= params.delta + params.beta {
                    ring[y * width + x] = true;
                }
            }
        }
    }
    let data = inside
        .iter()
        .zip(&ring)
        .map(|(&k, &r)| if k == 1 && !r { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_vec(height, width, 1, data)
}

/// Distance from pixel `(row, col)` to the nearest positive pixel of `p`,
/// by exhaustive scan; `+inf` when `p` has none.
pub fn rho_min(p: &Tensor, row: usize, col: usize) -> f64 {
    let (h, w, _) = p.shape();
    let mut best = f64::INFINITY;
    for y in 0..h {
        for x in 0..w {
            if p.get(y, x, 0) > 0.5 {
                best = best.min(dist(x, y, col, row));
            }
        }
    }
    best
}

/// `rho_min` for every pixel at once, via an exact separable Euclidean
/// distance transform. Squared distances are integers, so the result equals
/// the exhaustive scan bit for bit.
pub fn distance_map(p: &Tensor) -> Vec<f64> {
    let (h, w, _) = p.shape();
    let d2 = squared_distance_transform(h, w, |y, x| p.get(y, x, 0) > 0.5);
    d2.into_iter()
        .map(|v| v.map_or(f64::INFINITY, |v| (v as f64).sqrt()))
        .collect()
}

/// Squared distance to the nearest feature pixel, or `None` without any.
pub(crate) fn squared_distance_transform(
    h: usize,
    w: usize,
    is_feature: impl Fn(usize, usize) -> bool,
) -> Vec<Option<u64>> {
    // Columns first: distance along each column to the nearest feature.
    let mut col = vec![None::<u64>; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if is_feature(y, x) {
                last = Some(y);
            }
            col[y * w + x] = last.map(|l| (y - l) as u64);
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if is_feature(y, x) {
                next = Some(y);
            }
            if let Some(nx) = next {
                let d = (nx - y) as u64;
                let cell = &mut col[y * w + x];
                *cell = Some(cell.map_or(d, |c| c.min(d)));
            }
        }
    }
    // Rows: lower envelope of parabolas (Felzenszwalb and Huttenlocher).
    let mut out = vec![None; h * w];
    let mut f = vec![0i64; w];
    let mut sites = Vec::with_capacity(w);
    let mut bounds: Vec<f64> = Vec::with_capacity(w + 1);
    for y in 0..h {
        sites.clear();
        bounds.clear();
        for x in 0..w {
            if let Some(d) = col[y * w + x] {
                f[x] = (d * d) as i64;
                let q = x as i64;
                loop {
                    let Some(&v) = sites.last() else { break };
                    let v = v as i64;
                    let s = ((f[x] + q * q) - (f[v as usize] + v * v)) as f64 / (2 * (q - v)) as f64;
                    if s <= *bounds.last().unwrap() {
                        sites.pop();
                        bounds.pop();
                    } else {
                        break;
                    }
                }
                if sites.is_empty() {
                    bounds.push(f64::NEG_INFINITY);
                } else {
                    let v = *sites.last().unwrap() as i64;
                    let s = ((f[x] + q * q) - (f[v as usize] + v * v)) as f64 / (2 * (q - v)) as f64;
                    bounds.push(s);
                }
                sites.push(x);
            }
        }
        if sites.is_empty() {
            continue;
        }
        let mut k = 0;
        for x in 0..w {
            while k + 1 < sites.len() && bounds[k + 1] < x as f64 {
                k += 1;
            }
            let v = sites[k];
            let dx = x as i64 - v as i64;
            out[y * w + x] = Some((dx * dx + f[v]) as u64);
        }
    }
    out
}

/// The castle-moat-rampart profile as a function of the distance to the
/// nearest positive pixel.
pub fn omega(s: f64, params: &CmrParams) -> Result<f64> {
    if s.is_nan() || s < 0.0 {
        return Err(crate::error::structural(format!(
            "omega needs a non-negative distance, got {s}"
        )));
    }
    Ok(omega_unchecked(s, params))
}

fn omega_unchecked(s: f64, p: &CmrParams) -> f64 {
    let g = |z: f64| (-z * z / (2.0 * p.sigma * p.sigma)).exp();
    let s1 = p.s1();
    if s == 0.0 {
        1.0
    } else if s <= p.beta {
        0.0
    } else if s <= s1 {
        g(s - s1)
    } else if s <= s1 + p.beta {
        1.0
    } else {
        // Also covers s = inf (no positive pixel anywhere): exp(-inf) = 0.
        p.lambda + (1.0 - p.lambda) * g(s - s1 - p.beta)
    }
}

/// `omega(rho_min(P))` per pixel.
pub fn weight_map(p: &Tensor, params: &CmrParams) -> Result<Tensor> {
    params.validate()?;
    if p.channels() != 1 {
        return Err(crate::error::structural("position map must have one channel"));
    }
    let (h, w, _) = p.shape();
    let data = distance_map(p)
        .into_iter()
        .map(|s| omega_unchecked(s, params) as f32)
        .collect();
    Tensor::from_vec(h, w, 1, data)
}

/// Direction and type of the nearest minutia at every pixel; ties go to the
/// lower index. An empty set gives zero maps.
pub fn direction_type_maps(gt: &MinutiaSet, height: usize, width: usize) -> Result<(Tensor, Tensor)> {
    check_dims(gt, height, width)?;
    let mut d = Tensor::zeros(height, width, 1);
    let mut t = Tensor::zeros(height, width, 1);
    if gt.is_empty() {
        return Ok((d, t));
    }
    let ms = gt.minutiae();
    for y in 0..height {
        for x in 0..width {
            let mut best = 0;
            let mut best_d2 = u64::MAX;
            for (k, m) in ms.iter().enumerate() {
                let dx = x.abs_diff(m.x) as u64;
                let dy = y.abs_diff(m.y) as u64;
                let d2 = dx * dx + dy * dy;
                if d2 < best_d2 {
                    best_d2 = d2;
                    best = k;
                }
            }
            d.set(y, x, 0, ms[best].theta as f32);
            t.set(y, x, 0, ms[best].kind.map_value());
        }
    }
    Ok((d, t))
}

/// Plain Gaussian heatmap, `max_k exp(-rho^2 / 2 sigma^2)`. Kept for
/// ablation runs; not a reproduction of any published variant.
pub fn gaussian_position_map(gt: &MinutiaSet, height: usize, width: usize, sigma: f64) -> Result<Tensor> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    check_dims(gt, height, width)?;
    let mut out = Tensor::zeros(height, width, 1);
    let reach = (4.0 * sigma).ceil() as usize;
    for m in gt {
        for y in m.y.saturating_sub(reach)..=(m.y + reach).min(height - 1) {
            for x in m.x.saturating_sub(reach)..=(m.x + reach).min(width - 1) {
                let d = dist(x, y, m.x, m.y);
                let v = (-d * d / (2.0 * sigma * sigma)).exp() as f32;
                if v > out.get(y, x, 0) {
                    out.set(y, x, 0, v);
                }
            }
        }
    }
    Ok(out)
}

/// Builds the full target bundle.
pub fn encode(gt: &MinutiaSet, height: usize, width: usize, encoding: &Encoding) -> Result<GroundTruthMaps> {
    let (direction, kind) = direction_type_maps(gt, height, width)?;
    let (position, weight) = match encoding {
        Encoding::Cmr(params) => {
            let p = position_map(gt, height, width, params)?;
            let w = weight_map(&p, params)?;
            (p, w)
        }
        Encoding::Gaussian { sigma } => (
            gaussian_position_map(gt, height, width, *sigma)?,
            Tensor::filled(height, width, 1, 1.0),
        ),
    };
    Ok(GroundTruthMaps {
        position,
        weight,
        direction,
        kind,
    })
}

fn check_dims(gt: &MinutiaSet, height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(crate::error::structural("target maps need a non-empty image"));
    }
    if let Some(m) = gt.iter().find(|m| m.x >= width || m.y >= height) {
        return Err(Error::InvalidParameter(format!(
            "minutia ({}, {}) outside a {width}x{height} image",
            m.x, m.y
        )));
    }
    Ok(())
}
