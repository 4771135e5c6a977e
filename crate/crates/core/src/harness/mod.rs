//! The evaluation protocol: seeded k-fold splits, SGD hyperparameter search,
//! per-fold training and RMSE aggregation.

pub mod experiment;
pub mod folds;
pub mod grid;
pub mod report;

pub use experiment::{fold_design, fold_seed, FoldDesign, ladder_non_increasing, run_experiment, ExperimentConfig, GridPolicy, SolverConfig};
pub use folds::{audit_fold, make_folds, FoldAudit, FoldPlan};
pub use grid::{grid_search, grid_search_matrix, split_validation, GridCell, GridOptions, GridResult, GridSpec};
pub use report::{DimAggregate, ExperimentReport, FoldResult, FoldTrace};
