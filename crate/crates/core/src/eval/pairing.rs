use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::angular_difference;
use crate::postprocess::MinutiaSet;
use crate::tensor::Tensor;

use super::crop::crop_and_filter;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdLevel {
    /// Maximum pairing distance, pixels.
    pub rho_t: f64,
    /// Maximum absolute angular difference, radians.
    pub theta_t: f64,
}

impl ThresholdLevel {
    pub fn new(rho_t: f64, theta_t: f64) -> Result<Self> {
        if !(rho_t > 0.0 && rho_t.is_finite() && theta_t > 0.0 && theta_t.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "threshold level needs positive limits, got ({rho_t}, {theta_t})"
            )));
        }
        Ok(Self { rho_t, theta_t })
    }

    /// The three standard levels, loosest first.
    pub fn standard() -> [ThresholdLevel; 3] {
        [
            ThresholdLevel { rho_t: 16.0, theta_t: PI / 6.0 },
            ThresholdLevel { rho_t: 12.0, theta_t: PI / 8.0 },
            ThresholdLevel { rho_t: 8.0, theta_t: PI / 10.0 },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub extracted: usize,
    pub ground_truth: usize,
    pub distance: f64,
    /// Ground truth minus extracted, wrapped into `[-π, π)`.
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub type_aware: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Quality threshold the point was measured at.
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct quality value, ascending in `tau`.
    pub points: Vec<OperatingPoint>,
    /// Highest F1; the lowest threshold wins ties.
    pub best: OperatingPoint,
}

/// Minimum-cost assignment of rows to columns for a rectangular cost matrix
/// (`rows <= cols`), by the shortest-augmenting-path Hungarian method.
/// Returns the column assigned to each row.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "assignment needs at least as many columns as rows");
    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Pairs extracted with ground-truth minutiae one to one. The matching has
/// the largest possible number of feasible pairs and, among those, the
/// smallest total distance. A pair is feasible when it is within both
/// thresholds and, if `type_aware`, the types agree.
pub fn pair_minutiae(
    extracted: &MinutiaSet,
    gt: &MinutiaSet,
    level: &ThresholdLevel,
    type_aware: bool,
) -> MatchResult {
    let (e, g) = (extracted.minutiae(), gt.minutiae());
    let feasible = |i: usize, j: usize| -> Option<(f64, f64)> {
        let d = e[i].distance_to(&g[j]);
        let phi = angular_difference(g[j].theta, e[i].theta);
        let ok = d <= level.rho_t && phi.abs() <= level.theta_t && (!type_aware || e[i].kind == g[j].kind);
        ok.then_some((d, phi))
    };
    // Every feasible pair is worth more than any total-distance saving, so
    // cardinality comes first; leaving a pair out costs 0.
    let big = (e.len().min(g.len()) as f64 + 1.0) * (level.rho_t + 1.0);
    let transpose = e.len() > g.len();
    let (rows, cols) = if transpose { (g.len(), e.len()) } else { (e.len(), g.len()) };
    let at = |r: usize, c: usize| if transpose { (c, r) } else { (r, c) };
    let mut any = false;
    let cost: Vec<Vec<f64>> = (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| {
                    let (i, j) = at(r, c);
                    feasible(i, j).map_or(0.0, |(d, _)| {
                        any = true;
                        d - big
                    })
                })
                .collect()
        })
        .collect();
    let mut pairs = Vec::new();
    if any {
        for (r, c) in solve_assignment(&cost).into_iter().enumerate() {
            let (i, j) = at(r, c);
            if let Some((distance, angle)) = feasible(i, j) {
                pairs.push(MatchedPair {
                    extracted: i,
                    ground_truth: j,
                    distance,
                    angle,
                });
            }
        }
    }
    pairs.sort_by_key(|p| p.extracted);
    let tp = pairs.len();
    MatchResult {
        pairs,
        true_positives: tp,
        false_positives: e.len() - tp,
        false_negatives: g.len() - tp,
        type_aware,
    }
}

/// Precision, recall and F1; any zero denominator yields 0. `tau` is left 0.
pub fn precision_recall_f1(r: &MatchResult) -> OperatingPoint {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let tp = r.true_positives;
    let precision = ratio(tp, tp + r.false_positives);
    let recall = ratio(tp, tp + r.false_negatives);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    OperatingPoint {
        tau: 0.0,
        precision,
        recall,
        f1,
    }
}

/// Crops both sets with `mask` (when given), then re-pairs at every distinct
/// quality value of the extracted minutiae.
pub fn pr_curve(
    extracted: &MinutiaSet,
    gt: &MinutiaSet,
    mask: Option<&Tensor>,
    level: &ThresholdLevel,
    type_aware: bool,
    margin: f64,
) -> Result<PrCurve> {
    let (e, g) = match mask {
        Some(m) => (crop_and_filter(extracted, m, margin)?.set, crop_and_filter(gt, m, margin)?.set),
        None => (extracted.clone(), gt.clone()),
    };
    let mut taus: Vec<f64> = e.iter().map(|m| m.quality).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    if taus.is_empty() {
        taus.push(0.0);
    }
    let points: Vec<OperatingPoint> = taus
        .iter()
        .map(|&tau| OperatingPoint {
            tau,
            ..precision_recall_f1(&pair_minutiae(&e.above_quality(tau), &g, level, type_aware))
        })
        .collect();
    let best = points
        .iter()
        .copied()
        .fold(None::<OperatingPoint>, |acc, p| match acc {
            Some(b) if b.f1 >= p.f1 => Some(b),
            _ => Some(p),
        })
        .expect("at least one point");
    Ok(PrCurve { points, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_small() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = solve_assignment(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn f1_arithmetic() {
        let r = MatchResult {
            pairs: vec![],
            true_positives: 8,
            false_positives: 2,
            false_negatives: 4,
            type_aware: false,
        };
        let p = precision_recall_f1(&r);
        assert!((p.precision - 0.8).abs() < 1e-15);
        assert!((p.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.f1 - 16.0 / 22.0).abs() < 1e-12);
    }
}
