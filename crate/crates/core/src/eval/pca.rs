use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{structural, Result};
use crate::tensor::Tensor;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

/// Projects the per-pixel feature vectors of every tensor onto the top three
/// principal components of the pooled pixels and maps each component to
/// `[0, 1]` using its global range across the whole stack.
///
/// Components that do not exist (rank below three, or a constant stack) are
/// zero. Each eigenvector's sign is fixed so its largest-magnitude entry is
/// positive, which makes the output deterministic.
pub fn pca_projection(stack: &[Tensor]) -> Result<Vec<Tensor>> {
    let Some(first) = stack.first() else {
        return Ok(Vec::new());
    };
    let c = first.channels();
    if c < 3 {
        return Err(structural(format!("PCA projection needs at least 3 channels, got {c}")));
    }
    if let Some(t) = stack.iter().find(|t| t.channels() != c) {
        return Err(structural(format!(
            "PCA stack mixes {c} and {} channels",
            t.channels()
        )));
    }
    let pixels: usize = stack.iter().map(|t| t.height() * t.width()).sum();
    let mut mean = vec![0.0f64; c];
    for t in stack {
        for px in t.data().chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(px) {
                *m += v as f64;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= pixels as f64);

    let mut cov = DMatrix::<f64>::zeros(c, c);
    let mut centered = vec![0.0; c];
    for t in stack {
        for px in t.data().chunks_exact(c) {
            for ((d, &v), &m) in centered.iter_mut().zip(px).zip(&mean) {
                *d = v as f64 - m;
            }
            for i in 0..c {
                let di = centered[i];
                if di == 0.0 {
                    continue;
                }
                for j in i..c {
                    cov[(i, j)] += di * centered[j];
                }
            }
        }
    }
    for i in 0..c {
        for j in i..c {
            let v = cov[(i, j)] / pixels as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for &k in order.iter().take(3) {
        let lambda = eig.eigenvalues[k];
        if top == 0.0 || lambda <= top * RANK_TOL {
            break;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(v);
    }

    let mut projected: Vec<Vec<[f64; 3]>> = Vec::with_capacity(stack.len());
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for t in stack {
        let mut out = Vec::with_capacity(t.height() * t.width());
        for px in t.data().chunks_exact(c) {
            let mut p = [0.0; 3];
            for (k, axis) in axes.iter().enumerate() {
                p[k] = px
                    .iter()
                    .zip(&mean)
                    .zip(axis)
                    .map(|((&v, &m), &a)| (v as f64 - m) * a)
                    .sum();
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
            out.push(p);
        }
        projected.push(out);
    }

    stack
        .iter()
        .zip(projected)
        .map(|(t, proj)| {
            let mut data = Vec::with_capacity(proj.len() * 3);
            for p in proj {
                for k in 0..3 {
                    let v = if k < axes.len() && hi[k] > lo[k] {
                        (p[k] - lo[k]) / (hi[k] - lo[k])
                    } else {
                        0.0
                    };
                    data.push(v as f32);
                }
            }
            Tensor::from_vec(t.height(), t.width(), 3, data)
        })
        .collect()
}
