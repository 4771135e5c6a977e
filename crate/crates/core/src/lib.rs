//! Factorization machines for rating prediction, trained by stochastic
//! gradient descent or Gibbs sampling, and a cross-validation harness for
//! running matrix factorization, SVD++ and the time-aware variants as
//! carefully tuned baselines.
//!
//! ```
//! use fmbench::prelude::*;
//!
//! let data = Dataset::new(vec![
//!     RatingRecord::new(1, 10, 4.0, 0),
//!     RatingRecord::new(1, 11, 2.0, 0),
//!     RatingRecord::new(2, 10, 5.0, 86_400),
//! ]);
//! let vocab = fit_vocabulary(&data, ModelVariant::MF, &data);
//! let rows = build_rows(&data, &vocab, &build_implicit_index(&data), ImplicitWeighting::InvSqrt)?;
//! let model = init_model(rows.n_cols(), 4, rows.groups().to_vec(), 7, 0.1)?;
//! let out = gibbs_train(&rows, &rows, model, &McmcConfig { steps: 8, ..McmcConfig::default() })?;
//! assert_eq!(out.predictions.len(), 3);
//! # Ok::<(), fmbench::Error>(())
//! ```

pub mod checkpoint;
pub mod design;
pub mod error;
pub mod featurize;
pub mod harness;
pub mod ingest;
pub mod mcmc;
pub mod metrics;
pub mod model;
pub mod sgd;
pub mod types;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::design::DesignMatrix;
    pub use crate::error::{Error, Result};
    pub use crate::featurize::{
        build_implicit_index, build_rows, fit_vocabulary, FeatureBuilder, ImplicitIndex,
        ImplicitMode, ImplicitWeighting, ModelVariant, Vocabulary,
    };
    pub use crate::harness::{
        grid_search, make_folds, run_experiment, ExperimentConfig, ExperimentReport, FoldPlan,
        GridSpec, SolverConfig,
    };
    pub use crate::ingest::{parse_fm_text, parse_movielens};
    pub use crate::mcmc::{gibbs_train, McmcConfig};
    pub use crate::metrics::rmse;
    pub use crate::model::{init_model, FmModel};
    pub use crate::sgd::{sgd_train, SgdConfig};
    pub use crate::types::{Dataset, FeatureGroup, GroupKind, RatingRecord, SparseRow};
}
