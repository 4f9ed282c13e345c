//! Intrinsic evaluation: cropping and margin filtering, optimal pairing,
//! precision/recall/F1 and PR sweeps, per-sample rankings and feature PCA.

mod crop;
mod pairing;
mod pca;
mod ranking;

pub use crop::{crop_and_filter, CropResult, DEFAULT_MARGIN};
pub use pairing::{
    pair_minutiae, pr_curve, precision_recall_f1, solve_assignment, MatchResult, MatchedPair, OperatingPoint,
    PrCurve, ThresholdLevel,
};
pub use pca::pca_projection;
pub use ranking::{
    direct_win_counts, direct_win_matrix, sample_ranking, tie_counts, tie_matrix, MethodStats, RankTies, RankingReport,
};
