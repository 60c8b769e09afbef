//! Cosine-distance retrieval, CMC and mAP, Monte Carlo aggregation over
//! query/gallery splits, text reports and ranked-retrieval grids.

mod grid;
mod metrics;
mod monte_carlo;
mod ranking;
mod report;

pub use grid::{frame_color, render_ranked_grid, write_png, GridLayout, RankedGrid, MATCH_COLOR, MISMATCH_COLOR};
pub use metrics::{average_precision, cmc_curve, mean_average_precision};
pub use monte_carlo::{
    evaluate_monte_carlo, evaluate_splits, extract_features, feature_table, mean_std, rank_split, split_metrics,
    EvalOptions, EvalResult, FeatureTable, SplitMetrics, DEFAULT_K_MAX, DEFAULT_SPLITS,
};
pub use ranking::{cosine_distances, rank_gallery, RankingResult};
pub use report::render_report;
