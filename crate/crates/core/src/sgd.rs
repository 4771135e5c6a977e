//! L2-regularized stochastic gradient descent.
//!
//! Each epoch visits the rows in a fresh seeded permutation. For a row with
//! residual `e = y − ŷ(x)`, every parameter touched by the row moves by
//! `θ ← θ + η (e ∂ŷ/∂θ − λ_θ θ)`. The global bias is not regularized.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::metrics::rmse;
use crate::model::FmModel;
use crate::types::{group_of, GroupKind};

/// Overrides for one feature group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOverride {
    pub group: GroupKind,
    pub reg_w: Option<f64>,
    pub reg_v: Option<f64>,
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub reg: f64,
    pub epochs: usize,
    pub shuffle_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<GroupOverride>,
    /// Per-epoch multiplier on the learning rate; 1 keeps it constant.
    #[serde(default = "one")]
    pub lr_decay: f64,
    /// Evaluate the training RMSE after every epoch (one extra pass).
    #[serde(default = "yes")]
    pub track_train_rmse: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.003,
            reg: 0.04,
            epochs: 128,
            shuffle_seed: 0,
            overrides: Vec::new(),
            lr_decay: 1.0,
            track_train_rmse: true,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be ≥ 0, got {}", self.learning_rate));
        }
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return bad(format!("regularization must be ≥ 0, got {}", self.reg));
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad(format!("lr decay must be > 0, got {}", self.lr_decay));
        }
        for o in &self.overrides {
            for v in [o.reg_w, o.reg_v, o.learning_rate].into_iter().flatten() {
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("override for {} has invalid value {v}", o.group));
                }
            }
        }
        Ok(())
    }

    /// `(lr, reg_w, reg_v)` for every column.
    fn column_rates(&self, model: &FmModel) -> Vec<(f64, f64, f64)> {
        let groups = model.groups();
        let per_group: Vec<(f64, f64, f64)> = groups
            .iter()
            .map(|g| {
                let o = self.overrides.iter().find(|o| o.group == g.kind);
                (
                    o.and_then(|o| o.learning_rate).unwrap_or(self.learning_rate),
                    o.and_then(|o| o.reg_w).unwrap_or(self.reg),
                    o.and_then(|o| o.reg_v).unwrap_or(self.reg),
                )
            })
            .collect();
        (0..model.n_cols())
            .map(|j| per_group[group_of(groups, j).expect("groups tile the columns")])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_rmse: Option<f64>,
    pub holdout_rmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SgdOutcome {
    pub model: FmModel,
    pub trace: Vec<EpochStats>,
}

pub fn sgd_train(
    data: &DesignMatrix,
    mut model: FmModel,
    cfg: &SgdConfig,
    holdout: Option<&DesignMatrix>,
) -> Result<SgdOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_model_dims(model.n_cols())?;
    if let Some(h) = holdout {
        h.check_model_dims(model.n_cols())?;
    }
    let k = model.k();
    let rates = cfg.column_rates(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let mut entries = Vec::new();
    let mut q = vec![0.0; k];
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut decay = 1.0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let global_lr = cfg.learning_rate * decay;
        for &row in &order {
            data.row_entries(row, &mut entries);
            let y_hat = predict_with_sums(&model, &entries, &mut q);
            let e = data.targets()[row] - y_hat;
            if !e.is_finite() {
                return Err(Error::SgdDivergence { epoch, row });
            }
            model.w0 += global_lr * e;
            for &(j, x) in &entries {
                let (lr, reg_w, reg_v) = rates[j];
                let lr = lr * decay;
                let wj = &mut model.w[j];
                *wj += lr * (e * x - reg_w * *wj);
                let wj_finite = wj.is_finite();
                let vj = model.factors_mut(j);
                let mut ok = wj_finite;
                for f in 0..k {
                    let grad = x * (q[f] - vj[f] * x);
                    vj[f] += lr * (e * grad - reg_v * vj[f]);
                    ok &= vj[f].is_finite();
                }
                if !ok {
                    return Err(Error::SgdDivergence { epoch, row });
                }
            }
            if !model.w0.is_finite() {
                return Err(Error::SgdDivergence { epoch, row });
            }
        }
        decay *= cfg.lr_decay;

        let train_rmse = if cfg.track_train_rmse {
            Some(rmse(&model.predict_matrix(data)?, data.targets())?)
        } else {
            None
        };
        let holdout_rmse = match holdout {
            Some(h) if !h.is_empty() => Some(rmse(&model.predict_matrix(h)?, h.targets())?),
            _ => None,
        };
        trace.push(EpochStats {
            epoch,
            train_rmse,
            holdout_rmse,
        });
    }
    Ok(SgdOutcome { model, trace })
}

/// Prediction that leaves `q_f = Σ_j v_jf x_j` in `q`.
fn predict_with_sums(model: &FmModel, entries: &[(usize, f64)], q: &mut [f64]) -> f64 {
    let k = model.k();
    q.fill(0.0);
    let mut y = model.w0;
    let mut sq = 0.0;
    for &(j, x) in entries {
        y += model.w[j] * x;
        let vj = model.factors(j);
        for f in 0..k {
            let vx = vj[f] * x;
            q[f] += vx;
            sq += vx * vx;
        }
    }
    let qq: f64 = q.iter().map(|v| v * v).sum();
    y + 0.5 * (qq - sq)
}

/// The objective the updates descend: `Σ_i ½ e_i² + ½ Σ_{θ active in i} λ_θ θ²`.
pub fn sgd_objective(data: &DesignMatrix, model: &FmModel, cfg: &SgdConfig) -> Result<f64> {
    let preds = model.predict_matrix(data)?;
    let rates = cfg.column_rates(model);
    let mut entries = Vec::new();
    let mut total = 0.0;
    for (i, (&p, &y)) in preds.iter().zip(data.targets()).enumerate() {
        total += 0.5 * (y - p) * (y - p);
        data.row_entries(i, &mut entries);
        for &(j, _) in &entries {
            let (_, reg_w, reg_v) = rates[j];
            let v2: f64 = model.factors(j).iter().map(|v| v * v).sum();
            total += 0.5 * (reg_w * model.w[j] * model.w[j] + reg_v * v2);
        }
    }
    Ok(total)
}

pub fn write_trace_csv(out: impl Write, trace: &[EpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_rmse", "holdout_rmse"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in trace {
        w.write_record([s.epoch.to_string(), opt(s.train_rmse), opt(s.holdout_rmse)])?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))
}

pub fn save_trace_csv(path: impl AsRef<Path>, trace: &[EpochStats]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_csv(file, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::types::{FeatureGroup, SparseRow};

    fn other(p: usize) -> Vec<FeatureGroup> {
        vec![FeatureGroup::new(GroupKind::Other, 0..p)]
    }

    #[test]
    fn single_update_hand_value() {
        // One row, one active column; w0 and V pinned at zero contribution.
        let data =
            DesignMatrix::from_rows(vec![SparseRow::new(1.5, vec![(0, 1.0)])], other(1)).unwrap();
        let mut model = init_model(1, 1, other(1), 0, 0.0).unwrap();
        model.w[0] = 0.5;
        model.w0 = 0.0;
        // ŷ = 0.5, so e = 1.
        let cfg = SgdConfig {
            learning_rate: 0.1,
            reg: 0.04,
            epochs: 1,
            track_train_rmse: false,
            ..SgdConfig::default()
        };
        let out = sgd_train(&data, model, &cfg, None).unwrap();
        assert!((out.model.w[0] - 0.598).abs() < 1e-12);
        assert!((out.model.w0 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let rows = (0..20)
            .map(|i| SparseRow::new(i as f64 % 5.0, vec![(i % 4, 1.0), (4 + i % 3, 1.0)]))
            .collect();
        let data = DesignMatrix::from_rows(rows, other(7)).unwrap();
        let model = init_model(7, 3, other(7), 5, 0.1).unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..SgdConfig::default()
        };
        let out = sgd_train(&data, model.clone(), &cfg, None).unwrap();
        assert_eq!(out.model, model);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let rows = (0..50)
            .map(|i| SparseRow::new(1.0 + (i % 5) as f64, vec![(i % 5, 1.0), (5 + i % 7, 1.0)]))
            .collect();
        let data = DesignMatrix::from_rows(rows, other(12)).unwrap();
        let model = init_model(12, 8, other(12), 1, 0.1).unwrap();
        let cfg = SgdConfig {
            learning_rate: 10.0,
            ..SgdConfig::default()
        };
        let err = sgd_train(&data, model, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::SgdDivergence { .. }), "{err}");
        assert!(err.to_string().contains("divergence"));
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            SgdConfig { epochs: 0, ..SgdConfig::default() },
            SgdConfig { learning_rate: -1.0, ..SgdConfig::default() },
            SgdConfig { reg: f64::NAN, ..SgdConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn overrides_apply_per_group() {
        let groups = vec![
            FeatureGroup::new(GroupKind::User, 0..1),
            FeatureGroup::new(GroupKind::Item, 1..2),
        ];
        let model = init_model(2, 1, groups, 0, 0.0).unwrap();
        let cfg = SgdConfig {
            overrides: vec![GroupOverride {
                group: GroupKind::Item,
                reg_w: Some(0.5),
                reg_v: None,
                learning_rate: Some(0.01),
            }],
            ..SgdConfig::default()
        };
        let rates = cfg.column_rates(&model);
        assert_eq!(rates[0], (0.003, 0.04, 0.04));
        assert_eq!(rates[1], (0.01, 0.5, 0.04));
    }

    #[test]
    fn trace_csv_layout() {
        let trace = vec![
            EpochStats { epoch: 1, train_rmse: Some(1.5), holdout_rmse: None },
            EpochStats { epoch: 2, train_rmse: Some(1.25), holdout_rmse: Some(2.0) },
        ];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_rmse,holdout_rmse\n1,1.5,\n2,1.25,2\n"
        );
    }
}
