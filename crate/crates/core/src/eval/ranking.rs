use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};

/// How methods with equal F1 on a sample are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankTies {
    /// Tied methods share the best rank of their group (1, 1, 3).
    #[default]
    Competition,
    /// Tied methods share the mean of the ranks they span (1.5, 1.5, 3).
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub name: String,
    pub mean_rank: f64,
    /// Population standard deviation of the per-sample ranks.
    pub rank_sd: f64,
    /// Percentage of samples ranked first.
    pub top1: f64,
    /// Percentage of samples ranked third or better.
    pub top3: f64,
    /// Percentage of samples ranked strictly below the middle: rank > n/2.
    pub bottom_half: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub methods: Vec<MethodStats>,
    /// `ranks[m][s]`: rank of method `m` on sample `s`.
    pub ranks: Vec<Vec<f64>>,
    /// `direct_win[i][j]`: percentage of samples where `i` strictly beats
    /// `j`; `None` on the diagonal.
    pub direct_win: Vec<Vec<Option<f64>>>,
}

fn check_table(f1: &[Vec<f64>]) -> Result<usize> {
    let samples = f1.first().map_or(0, Vec::len);
    if f1.iter().any(|row| row.len() != samples) {
        return Err(structural("F1 table rows differ in length"));
    }
    if f1.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("F1 table contains non-finite values".into()));
    }
    Ok(samples)
}

/// Per-sample ranks of every method (higher F1 ranks better) and the
/// aggregate statistics. Rows of `f1` are methods, columns samples.
pub fn sample_ranking(names: &[String], f1: &[Vec<f64>], ties: RankTies) -> Result<RankingReport> {
    if f1.len() < 2 {
        return Err(structural(format!("ranking needs at least 2 methods, got {}", f1.len())));
    }
    if names.len() != f1.len() {
        return Err(structural(format!("{} names for {} methods", names.len(), f1.len())));
    }
    let samples = check_table(f1)?;
    let n = f1.len();
    let mut ranks = vec![vec![0.0; samples]; n];
    for s in 0..samples {
        for m in 0..n {
            let v = f1[m][s];
            let better = (0..n).filter(|&o| f1[o][s] > v).count();
            let equal = (0..n).filter(|&o| f1[o][s] == v).count();
            ranks[m][s] = match ties {
                RankTies::Competition => (better + 1) as f64,
                RankTies::Average => better as f64 + (equal as f64 + 1.0) / 2.0,
            };
        }
    }
    let pct = |count: usize| if samples == 0 { 0.0 } else { 100.0 * count as f64 / samples as f64 };
    let half = n as f64 / 2.0;
    let methods = names
        .iter()
        .zip(&ranks)
        .map(|(name, r)| {
            let mean = if samples == 0 { 0.0 } else { r.iter().sum::<f64>() / samples as f64 };
            let var = if samples == 0 {
                0.0
            } else {
                r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / samples as f64
            };
            MethodStats {
                name: name.clone(),
                mean_rank: mean,
                rank_sd: var.sqrt(),
                top1: pct(r.iter().filter(|&&v| v <= 1.0).count()),
                top3: pct(r.iter().filter(|&&v| v <= 3.0).count()),
                bottom_half: pct(r.iter().filter(|&&v| v > half).count()),
            }
        })
        .collect();
    Ok(RankingReport {
        methods,
        ranks,
        direct_win: direct_win_matrix(f1)?,
    })
}

fn pairwise_counts(f1: &[Vec<f64>], count: impl Fn(f64, f64) -> bool) -> Result<Vec<Vec<usize>>> {
    let samples = check_table(f1)?;
    let n = f1.len();
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0 } else { (0..samples).filter(|&s| count(f1[i][s], f1[j][s])).count() })
                .collect()
        })
        .collect())
}

fn as_percent(f1: &[Vec<f64>], counts: Vec<Vec<usize>>) -> Vec<Vec<Option<f64>>> {
    let samples = f1.first().map_or(0, Vec::len);
    counts
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .enumerate()
                .map(|(j, c)| {
                    (i != j).then(|| if samples == 0 { 0.0 } else { 100.0 * c as f64 / samples as f64 })
                })
                .collect()
        })
        .collect()
}

/// Number of samples where method `i` has strictly higher F1 than `j`.
/// Together with [`tie_counts`], `wins[i][j] + wins[j][i] + ties[i][j]`
/// equals the sample count for every `i != j`.
pub fn direct_win_counts(f1: &[Vec<f64>]) -> Result<Vec<Vec<usize>>> {
    pairwise_counts(f1, |a, b| a > b)
}

pub fn tie_counts(f1: &[Vec<f64>]) -> Result<Vec<Vec<usize>>> {
    pairwise_counts(f1, |a, b| a == b)
}

/// Cell `(i, j)`: percentage of samples where method `i` has strictly
/// higher F1 than method `j`. Ties count for neither.
pub fn direct_win_matrix(f1: &[Vec<f64>]) -> Result<Vec<Vec<Option<f64>>>> {
    Ok(as_percent(f1, direct_win_counts(f1)?))
}

/// Percentage of samples where the two methods tie.
pub fn tie_matrix(f1: &[Vec<f64>]) -> Result<Vec<Vec<Option<f64>>>> {
    Ok(as_percent(f1, tie_counts(f1)?))
}
