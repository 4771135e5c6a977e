//! Learning-rate and regularization search for SGD on a 95/5 split of the
//! training data.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::featurize::{
    build_implicit_index, fit_vocabulary, FeatureBuilder, ImplicitWeighting, ModelVariant,
};
use crate::metrics::rmse;
use crate::model::init_model;
use crate::sgd::{sgd_train, SgdConfig};
use crate::types::Dataset;

pub const DEFAULT_REGS: [f64; 4] = [0.02, 0.03, 0.04, 0.05];
pub const DEFAULT_LRS: [f64; 2] = [0.001, 0.003];
pub const DEFAULT_TUNING_DIM: usize = 64;
pub const VALIDATION_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub regs: Vec<f64>,
    pub lrs: Vec<f64>,
    pub tuning_dim: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            regs: DEFAULT_REGS.to_vec(),
            lrs: DEFAULT_LRS.to_vec(),
            tuning_dim: DEFAULT_TUNING_DIM,
        }
    }
}

impl GridSpec {
    /// All `(reg, lr)` cells, regularization-major.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.regs
            .iter()
            .flat_map(|&r| self.lrs.iter().map(move |&l| (r, l)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.regs.is_empty() || self.lrs.is_empty() {
            return Err(Error::Config("grid needs at least one reg and one lr".into()));
        }
        if self.tuning_dim == 0 {
            return Err(Error::Config("tuning dimension must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Settings shared by every cell of a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Template for each cell; its `reg` and `learning_rate` are replaced.
    pub sgd: SgdConfig,
    pub init_std: f64,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            sgd: SgdConfig {
                track_train_rmse: false,
                ..SgdConfig::default()
            },
            init_std: 0.1,
            seed: 0,
            validation_fraction: VALIDATION_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub reg: f64,
    pub lr: f64,
    /// Final-epoch validation RMSE; infinite when training diverged.
    #[serde(with = "crate::harness::report::float_or_null")]
    pub validation_rmse: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_reg: f64,
    pub best_lr: f64,
    pub cells: Vec<GridCell>,
    pub n_train: usize,
    pub n_validation: usize,
}

/// Seeded split of `0..n` into (train, validation) with
/// `round(n · fraction)` validation rows, at least one on each side.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Config(format!("cannot split {n} rows for validation")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} not in (0, 1)")));
    }
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Lower RMSE wins; ties go to the larger regularization, then the smaller
/// learning rate.
fn better(a: &GridCell, b: &GridCell) -> bool {
    match a.validation_rmse.partial_cmp(&b.validation_rmse) {
        Some(Ordering::Less) => true,
        Some(Ordering::Greater) => false,
        _ => a.reg > b.reg || (a.reg == b.reg && a.lr < b.lr),
    }
}

/// Trains one model per grid cell on 95% of `data` and scores it on the
/// other 5%.
pub fn grid_search_matrix(data: &DesignMatrix, grid: &GridSpec, opts: &GridOptions) -> Result<GridResult> {
    grid.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train_idx, val_idx) = split_validation(data.n_rows(), opts.validation_fraction, opts.seed)?;
    let train = data.subset(&train_idx);
    let val = data.subset(&val_idx);
    let init = init_model(
        data.n_cols(),
        grid.tuning_dim,
        data.groups().to_vec(),
        opts.seed,
        opts.init_std,
    )?;
    let mut cells = Vec::new();
    for (reg, lr) in grid.cells() {
        let cfg = SgdConfig {
            reg,
            learning_rate: lr,
            shuffle_seed: opts.seed,
            ..opts.sgd.clone()
        };
        let cell = match sgd_train(&train, init.clone(), &cfg, None)
            .and_then(|out| rmse(&out.model.predict_matrix(&val)?, val.targets()))
        {
            Ok(r) if r.is_finite() => GridCell { reg, lr, validation_rmse: r, error: None },
            Ok(r) => GridCell {
                reg,
                lr,
                validation_rmse: f64::INFINITY,
                error: Some(format!("non-finite validation rmse {r}")),
            },
            Err(e) => GridCell {
                reg,
                lr,
                validation_rmse: f64::INFINITY,
                error: Some(e.to_string()),
            },
        };
        cells.push(cell);
    }
    let best = cells
        .iter()
        .filter(|c| c.error.is_none())
        .fold(None::<&GridCell>, |best, c| match best {
            Some(b) if !better(c, b) => Some(b),
            _ => Some(c),
        })
        .ok_or_else(|| Error::Config("every grid cell diverged".into()))?;
    Ok(GridResult {
        best_reg: best.reg,
        best_lr: best.lr,
        n_train: train.n_rows(),
        n_validation: val.n_rows(),
        cells,
    })
}

/// Featurizes `train` for `variant` and runs [`grid_search_matrix`].
pub fn grid_search(
    train: &Dataset,
    variant: ModelVariant,
    grid: &GridSpec,
    opts: &GridOptions,
) -> Result<GridResult> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vocab = fit_vocabulary(train, variant, train);
    let builder = FeatureBuilder::new(vocab, &build_implicit_index(train), ImplicitWeighting::default())?;
    grid_search_matrix(&builder.build(train)?, grid, opts)
}
