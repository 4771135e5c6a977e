//! Cross-validated experiments: featurize each fold, train, evaluate.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::featurize::{fit_vocabulary, FeatureBuilder, ImplicitIndex, ImplicitMode, ImplicitWeighting, ModelVariant};
use crate::harness::folds::{audit_fold, FoldAudit, FoldPlan};
use crate::harness::grid::{grid_search_matrix, GridOptions, GridResult, GridSpec};
use crate::harness::report::{DimAggregate, ExperimentReport, FoldResult, FoldTrace, REPORT_SCHEMA_VERSION};
use crate::mcmc::{gibbs_train, McmcConfig};
use crate::metrics::{mean_std, rmse};
use crate::model::init_model;
use crate::sgd::{sgd_train, SgdConfig};
use crate::types::Dataset;

/// When SGD hyperparameters are searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPolicy {
    /// Search on every fold's training data.
    #[default]
    PerFold,
    /// Search on the first fold that runs and reuse the winner elsewhere.
    FirstFold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "lowercase")]
pub enum SolverConfig {
    Sgd {
        sgd: SgdConfig,
        init_std: f64,
        /// When set, `sgd.reg` and `sgd.learning_rate` come from a search.
        grid: Option<GridSpec>,
        #[serde(default)]
        grid_policy: GridPolicy,
    },
    Mcmc(McmcConfig),
}

impl SolverConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SolverConfig::Sgd { .. } => "sgd",
            SolverConfig::Mcmc(_) => "mcmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub variant: ModelVariant,
    pub solver: SolverConfig,
    pub dims: Vec<usize>,
    pub implicit_mode: ImplicitMode,
    pub weighting: ImplicitWeighting,
    /// Base seed; fold `f` uses `seed + f` for initialization, shuffling,
    /// sampling and validation splits.
    pub seed: u64,
    /// Parallel fold workers.
    pub jobs: usize,
    /// Run only these folds (all when `None`).
    pub folds: Option<Vec<usize>>,
    /// Keep per-step/per-epoch traces in the report.
    pub keep_traces: bool,
}

impl ExperimentConfig {
    pub fn new(variant: ModelVariant, solver: SolverConfig, dims: Vec<usize>) -> Self {
        ExperimentConfig {
            variant,
            solver,
            dims,
            implicit_mode: ImplicitMode::Prize,
            weighting: ImplicitWeighting::InvSqrt,
            seed: 1,
            jobs: 1,
            folds: None,
            keep_traces: true,
        }
    }

    fn validate(&self, plan: &FoldPlan) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::Config("dims must be a non-empty list of positive sizes".into()));
        }
        if let Some(folds) = &self.folds {
            if let Some(f) = folds.iter().find(|&&f| f >= plan.n_folds()) {
                return Err(Error::Config(format!("fold {f} not in plan of {}", plan.n_folds())));
            }
        }
        match &self.solver {
            SolverConfig::Sgd { sgd, grid, .. } => {
                sgd.validate()?;
                if let Some(g) = grid {
                    g.validate()?;
                }
            }
            SolverConfig::Mcmc(m) => m.validate()?,
        }
        Ok(())
    }
}

pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64)
}

/// Everything one fold produced.
struct FoldOutput {
    results: Vec<FoldResult>,
    traces: Vec<FoldTrace>,
    grid: Option<GridResult>,
    audit: Option<FoldAudit>,
}

pub fn run_experiment(data: &Dataset, cfg: &ExperimentConfig, plan: &FoldPlan) -> Result<ExperimentReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if plan.n_records != data.len() {
        return Err(Error::Dimension(format!(
            "fold plan covers {} records, dataset has {}",
            plan.n_records,
            data.len()
        )));
    }
    cfg.validate(plan)?;
    let folds: Vec<usize> = cfg.folds.clone().unwrap_or_else(|| (0..plan.n_folds()).collect());

    // Searching once up front keeps parallel and serial runs identical.
    let shared_grid = match &cfg.solver {
        SolverConfig::Sgd {
            grid: Some(grid),
            grid_policy: GridPolicy::FirstFold,
            sgd,
            init_std,
        } => {
            let first = folds[0];
            let design = fold_design(data, cfg, plan, first)?;
            Some(grid_search_matrix(&design.train, grid, &grid_options(sgd, *init_std, cfg.seed, first))?)
        }
        _ => None,
    };

    let run = |&fold: &usize| run_fold(data, cfg, plan, fold, shared_grid.as_ref());
    let outputs: Vec<FoldOutput> = if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| folds.par_iter().map(run).collect())
    } else {
        folds.iter().map(run).collect()
    };

    let mut results = Vec::new();
    let mut traces = Vec::new();
    let mut grids = Vec::new();
    let mut audits = Vec::new();
    for (fold, out) in folds.iter().zip(outputs) {
        results.extend(out.results);
        traces.extend(out.traces);
        if let Some(g) = out.grid {
            grids.push((*fold, g));
        }
        if let Some(a) = out.audit {
            audits.push((*fold, a));
        }
    }
    if let Some(g) = shared_grid {
        grids = vec![(folds[0], g)];
    }
    let aggregates = cfg
        .dims
        .iter()
        .map(|&dim| aggregate(dim, &results, folds.len()))
        .collect::<Vec<_>>();
    let partial = aggregates.iter().any(|a| a.partial);
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        n_records: data.len(),
        n_folds: plan.n_folds(),
        fold_seed: plan.seed,
        fold_sizes: plan.test_sets.iter().map(Vec::len).collect(),
        groups: fit_vocabulary(data, cfg.variant, data).groups().to_vec(),
        results,
        aggregates,
        partial,
        grids: grids.into_iter().map(Into::into).collect(),
        audits: audits.into_iter().map(Into::into).collect(),
        traces,
    })
}

fn grid_options(sgd: &SgdConfig, init_std: f64, seed: u64, fold: usize) -> GridOptions {
    GridOptions {
        sgd: SgdConfig {
            track_train_rmse: false,
            ..sgd.clone()
        },
        init_std,
        seed: fold_seed(seed, fold),
        ..GridOptions::default()
    }
}

/// Train and test design matrices for one fold, built the way
/// [`run_experiment`] builds them.
#[derive(Debug, Clone)]
pub struct FoldDesign {
    pub train: DesignMatrix,
    pub test: DesignMatrix,
    pub audit: FoldAudit,
}

/// Featurizes one fold and audits it; a fold that fails the audit is an
/// error.
pub fn fold_design(data: &Dataset, cfg: &ExperimentConfig, plan: &FoldPlan, fold: usize) -> Result<FoldDesign> {
    let train_idx = plan.train_indices(fold);
    let test_idx = plan.test_indices(fold);
    let train = data.subset(&train_idx);
    let test = data.subset(test_idx);
    // Vocabulary over the whole corpus; ratings come from the training fold only.
    let vocab = fit_vocabulary(&train, cfg.variant, data);
    let implicit = ImplicitIndex::for_mode(cfg.implicit_mode, &train, data);
    let audit = audit_fold(data, &train_idx, test_idx, &implicit, cfg.implicit_mode);
    if !audit.is_clean() {
        return Err(Error::Config(format!("fold {fold} failed the protocol audit: {audit:?}")));
    }
    let builder = FeatureBuilder::new(vocab, &implicit, cfg.weighting)?;
    Ok(FoldDesign {
        train: builder.build(&train)?,
        test: builder.build(&test)?,
        audit,
    })
}

fn run_fold(
    data: &Dataset,
    cfg: &ExperimentConfig,
    plan: &FoldPlan,
    fold: usize,
    shared_grid: Option<&GridResult>,
) -> FoldOutput {
    let failed = |dims: &[usize], err: &Error| FoldOutput {
        results: dims
            .iter()
            .map(|&dim| FoldResult::failed(fold, dim, err.to_string()))
            .collect(),
        traces: Vec::new(),
        grid: None,
        audit: None,
    };
    let FoldDesign { train, test, audit } = match fold_design(data, cfg, plan, fold) {
        Ok(d) => d,
        Err(e) => return failed(&cfg.dims, &e),
    };
    let seed = fold_seed(cfg.seed, fold);
    let mut out = FoldOutput {
        results: Vec::new(),
        traces: Vec::new(),
        grid: None,
        audit: Some(audit),
    };

    match &cfg.solver {
        SolverConfig::Sgd {
            sgd,
            init_std,
            grid,
            ..
        } => {
            let mut sgd = SgdConfig {
                shuffle_seed: seed,
                ..sgd.clone()
            };
            if let Some(g) = shared_grid {
                sgd.reg = g.best_reg;
                sgd.learning_rate = g.best_lr;
            } else if let Some(grid) = grid {
                match grid_search_matrix(&train, grid, &grid_options(&sgd, *init_std, cfg.seed, fold)) {
                    Ok(g) => {
                        sgd.reg = g.best_reg;
                        sgd.learning_rate = g.best_lr;
                        out.grid = Some(g);
                    }
                    Err(e) => return failed(&cfg.dims, &e),
                }
            }
            for &dim in &cfg.dims {
                let start = Instant::now();
                let res = init_model(train.n_cols(), dim, train.groups().to_vec(), seed, *init_std)
                    .and_then(|m| sgd_train(&train, m, &sgd, Some(&test)))
                    .and_then(|o| Ok((rmse(&o.model.predict_matrix(&test)?, test.targets())?, o.trace)));
                let seconds = start.elapsed().as_secs_f64();
                match res {
                    Ok((r, trace)) => {
                        out.results.push(FoldResult {
                            fold,
                            dim,
                            rmse: Some(r),
                            seconds,
                            reg: Some(sgd.reg),
                            lr: Some(sgd.learning_rate),
                            error: None,
                        });
                        if cfg.keep_traces {
                            out.traces.push(FoldTrace { fold, dim, sgd: Some(trace), mcmc: None });
                        }
                    }
                    Err(e) => out.results.push(FoldResult::failed(fold, dim, e.to_string())),
                }
            }
        }
        SolverConfig::Mcmc(mcmc) => {
            let mcmc = McmcConfig {
                seed,
                ..mcmc.clone()
            };
            for &dim in &cfg.dims {
                let start = Instant::now();
                let res = init_model(train.n_cols(), dim, train.groups().to_vec(), seed, mcmc.init_std)
                    .and_then(|m| gibbs_train(&train, &test, m, &mcmc))
                    .and_then(|o| Ok((rmse(&o.predictions, test.targets())?, o.trace)));
                let seconds = start.elapsed().as_secs_f64();
                match res {
                    Ok((r, trace)) => {
                        out.results.push(FoldResult {
                            fold,
                            dim,
                            rmse: Some(r),
                            seconds,
                            reg: None,
                            lr: None,
                            error: None,
                        });
                        if cfg.keep_traces {
                            out.traces.push(FoldTrace { fold, dim, sgd: None, mcmc: Some(trace) });
                        }
                    }
                    Err(e) => out.results.push(FoldResult::failed(fold, dim, e.to_string())),
                }
            }
        }
    }
    out
}

fn aggregate(dim: usize, results: &[FoldResult], n_folds_run: usize) -> DimAggregate {
    let values: Vec<f64> = results
        .iter()
        .filter(|r| r.dim == dim)
        .filter_map(|r| r.rmse)
        .collect();
    let n_failed = n_folds_run - values.len();
    let (mean, std) = if values.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&values);
        (Some(m), s)
    };
    DimAggregate {
        dim,
        mean,
        std,
        n_ok: values.len(),
        n_failed,
        std_defined: std.is_some(),
        partial: n_failed > 0,
    }
}

/// True when the mean RMSEs are non-increasing along the given order.
pub fn ladder_non_increasing(means: &[f64]) -> bool {
    means.windows(2).all(|w| w[1] <= w[0])
}
