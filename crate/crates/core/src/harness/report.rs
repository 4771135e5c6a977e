//! Experiment reports: JSON document, flat results CSV, trace CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::experiment::ExperimentConfig;
use crate::harness::folds::FoldAudit;
use crate::harness::grid::GridResult;
use crate::mcmc::StepStats;
use crate::sgd::EpochStats;
use crate::types::FeatureGroup;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub dim: usize,
    pub rmse: Option<f64>,
    /// Wall-clock training and evaluation time.
    pub seconds: f64,
    /// SGD hyperparameters used (after any search).
    pub reg: Option<f64>,
    pub lr: Option<f64>,
    pub error: Option<String>,
}

impl FoldResult {
    pub(crate) fn failed(fold: usize, dim: usize, error: String) -> Self {
        FoldResult {
            fold,
            dim,
            rmse: None,
            seconds: 0.0,
            reg: None,
            lr: None,
            error: Some(error),
        }
    }
}

/// Mean and sample standard deviation (`n − 1`) over the folds that
/// finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimAggregate {
    pub dim: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    /// False with fewer than two finished folds.
    pub std_defined: bool,
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldGrid {
    pub fold: usize,
    pub result: GridResult,
}

impl From<(usize, GridResult)> for FoldGrid {
    fn from((fold, result): (usize, GridResult)) -> Self {
        FoldGrid { fold, result }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAuditEntry {
    pub fold: usize,
    #[serde(flatten)]
    pub audit: FoldAudit,
}

impl From<(usize, FoldAudit)> for FoldAuditEntry {
    fn from((fold, audit): (usize, FoldAudit)) -> Self {
        FoldAuditEntry { fold, audit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTrace {
    pub fold: usize,
    pub dim: usize,
    pub sgd: Option<Vec<EpochStats>>,
    pub mcmc: Option<Vec<StepStats>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub n_records: usize,
    pub n_folds: usize,
    pub fold_seed: u64,
    pub fold_sizes: Vec<usize>,
    /// Column layout shared by every fold.
    pub groups: Vec<FeatureGroup>,
    pub results: Vec<FoldResult>,
    pub aggregates: Vec<DimAggregate>,
    /// Some fold failed for some dimension.
    pub partial: bool,
    pub grids: Vec<FoldGrid>,
    pub audits: Vec<FoldAuditEntry>,
    pub traces: Vec<FoldTrace>,
}

impl ExperimentReport {
    pub fn aggregate(&self, dim: usize) -> Option<&DimAggregate> {
        self.aggregates.iter().find(|a| a.dim == dim)
    }

    /// Finished RMSEs for `dim`, in fold order.
    pub fn fold_rmses(&self, dim: usize) -> Vec<f64> {
        self.results
            .iter()
            .filter(|r| r.dim == dim)
            .filter_map(|r| r.rmse)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let report: ExperimentReport = serde_json::from_str(s)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "report schema {} not supported (expected {REPORT_SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// `variant,solver,dim,fold,rmse,seconds`
    pub fn results_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["variant", "solver", "dim", "fold", "rmse", "seconds"])?;
        let variant = self.config.variant.to_string();
        let solver = self.config.solver.name();
        for r in &self.results {
            w.write_record([
                variant.clone(),
                solver.to_string(),
                r.dim.to_string(),
                r.fold.to_string(),
                r.rmse.map(|x| x.to_string()).unwrap_or_default(),
                r.seconds.to_string(),
            ])?;
        }
        into_string(w)
    }

    /// `fold,reg,lr,validation_rmse`
    pub fn grid_csv(&self) -> Result<String> {
        grid_csv(&self.grids)
    }

    /// Writes `report.json`, `results.csv`, `grid.csv` (if searched) and one
    /// trace CSV per fold and dimension under `traces/`. Returns the paths.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mkdir(dir)?;
        let mut written = Vec::new();
        let mut put = |name: PathBuf, body: String| -> Result<()> {
            fs::write(&name, body).map_err(|e| Error::io(&name, e))?;
            written.push(name);
            Ok(())
        };
        put(dir.join("report.json"), self.to_json()?)?;
        put(dir.join("results.csv"), self.results_csv()?)?;
        if !self.grids.is_empty() {
            put(dir.join("grid.csv"), self.grid_csv()?)?;
        }
        if !self.traces.is_empty() {
            let tdir = dir.join("traces");
            mkdir(&tdir)?;
            let stem = format!("{}_{}", self.config.solver.name(), self.config.variant);
            for t in &self.traces {
                let name = tdir.join(format!("{stem}_d{}_fold{}.csv", t.dim, t.fold));
                let mut buf = Vec::new();
                if let Some(s) = &t.sgd {
                    crate::sgd::write_trace_csv(&mut buf, s)?;
                }
                if let Some(m) = &t.mcmc {
                    crate::mcmc::write_trace_csv(&mut buf, m, &self.groups)?;
                }
                put(name, String::from_utf8(buf).expect("csv output is utf-8"))?;
            }
        }
        Ok(written)
    }
}

pub fn grid_csv(grids: &[FoldGrid]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fold", "reg", "lr", "validation_rmse"])?;
    for g in grids {
        for c in &g.result.cells {
            w.write_record([
                g.fold.to_string(),
                c.reg.to_string(),
                c.lr.to_string(),
                c.validation_rmse.to_string(),
            ])?;
        }
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// JSON has no infinity; non-finite values are written as `null` and read
/// back as `+inf`.
pub(crate) mod float_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
