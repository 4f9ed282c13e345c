//! Value-only multi-task losses between predicted maps and encoded targets.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};
use crate::model::WeightStore;
use crate::tensor::Tensor;

/// Guards the normalizing denominators.
pub const DEFAULT_EPSILON: f64 = 1e-8;
/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha_p: f64,
    pub alpha_d: f64,
    pub alpha_t: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_p: 0.85,
            alpha_d: 0.10,
            alpha_t: 0.05,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let a = [self.alpha_p, self.alpha_d, self.alpha_t];
        if a.iter().any(|v| !v.is_finite() || *v < 0.0) || a.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "loss weights must be non-negative with a positive sum, got {a:?}"
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub position: f64,
    pub direction: f64,
    pub kind: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub position: f64,
    pub direction: f64,
    pub kind: f64,
    pub total: f64,
}

/// Signed difference wrapped into `[-π, π)`.
pub fn angular_difference(d: f64, d_hat: f64) -> f64 {
    (d - d_hat + PI).rem_euclid(TAU) - PI
}

fn bce(target: f64, p: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

fn same_shape(maps: &[(&str, &Tensor)]) -> Result<()> {
    let (first, t0) = maps[0];
    if t0.channels() != 1 {
        return Err(structural(format!("{first} map must have one channel")));
    }
    for (name, t) in &maps[1..] {
        if t.shape() != t0.shape() {
            return Err(structural(format!(
                "{name} map has shape {:?}, {first} has {:?}",
                t.shape(),
                t0.shape()
            )));
        }
    }
    Ok(())
}

/// Weighted BCE between the binary position target and `p_hat`, normalized
/// by the total weight.
pub fn position_loss(p: &Tensor, p_hat: &Tensor, w: &Tensor, eps: f64) -> Result<f64> {
    same_shape(&[("position", p), ("predicted position", p_hat), ("weight", w)])?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((&t, &q), &wi) in p.data().iter().zip(p_hat.data()).zip(w.data()) {
        let wi = wi as f64;
        if wi != 0.0 {
            num += wi * bce(t as f64, q as f64);
        }
        den += wi;
    }
    Ok(num / (den + eps))
}

/// Root-mean-square angular error over positive pixels, scaled into `[0, 1]`.
pub fn direction_loss(p: &Tensor, d: &Tensor, d_hat: &Tensor, eps: f64) -> Result<f64> {
    same_shape(&[("position", p), ("direction", d), ("predicted direction", d_hat)])?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((&m, &a), &b) in p.data().iter().zip(d.data()).zip(d_hat.data()) {
        let m = m as f64;
        if m != 0.0 {
            let phi = angular_difference(a as f64, b as f64);
            num += m * phi * phi;
        }
        den += m;
    }
    Ok((num / (den + eps)).sqrt() / PI)
}

/// BCE between type target and prediction over positive pixels.
pub fn type_loss(p: &Tensor, t: &Tensor, t_hat: &Tensor, eps: f64) -> Result<f64> {
    same_shape(&[("position", p), ("type", t), ("predicted type", t_hat)])?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((&m, &a), &b) in p.data().iter().zip(t.data()).zip(t_hat.data()) {
        let m = m as f64;
        if m != 0.0 {
            num += m * bce(a as f64, b as f64);
        }
        den += m;
    }
    Ok(num / (den + eps))
}

pub fn composite_loss(parts: &LossParts, weights: &LossWeights) -> f64 {
    weights.alpha_p * parts.position + weights.alpha_d * parts.direction + weights.alpha_t * parts.kind
}

/// All three terms plus the weighted total.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_losses(
    p: &Tensor,
    w: &Tensor,
    d: &Tensor,
    t: &Tensor,
    p_hat: &Tensor,
    d_hat: &Tensor,
    t_hat: &Tensor,
    weights: &LossWeights,
) -> Result<LossRecord> {
    weights.validate()?;
    let parts = LossParts {
        position: position_loss(p, p_hat, w, weights.epsilon)?,
        direction: direction_loss(p, d, d_hat, weights.epsilon)?,
        kind: type_loss(p, t, t_hat, weights.epsilon)?,
    };
    Ok(LossRecord {
        position: parts.position,
        direction: parts.direction,
        kind: parts.kind,
        total: composite_loss(&parts, weights),
    })
}

/// Root mean square over every stored parameter value; 0 for an empty store.
pub fn weight_magnitude(weights: &WeightStore) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (_, t) in weights.iter() {
        sum += t.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        n += t.len();
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}
