//! The second-order factorization machine.
//!
//! For a sparse input `x` the model predicts
//!
//! ```text
//! y(x) = w0 + Σ_j w_j x_j + Σ_{j<j'} <v_j, v_j'> x_j x_j'
//! ```
//!
//! The pairwise term is evaluated in `O(k · nnz)` through
//! `½ Σ_f [(Σ_j v_jf x_j)² − Σ_j v_jf² x_j²]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::types::{check_partition, FeatureGroup, SparseRow};

/// Gibbs-sampler hyperparameters and the constants of their priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Observation-noise precision.
    pub alpha: f64,
    /// Per group: precision and mean of the linear weights.
    pub lambda_w: Vec<f64>,
    pub mu_w: Vec<f64>,
    /// Per group, per factor: precision and mean of the embeddings.
    pub lambda_v: Vec<Vec<f64>>,
    pub mu_v: Vec<Vec<f64>>,
    pub priors: Priors,
}

/// `Gamma(shape, rate)` on every precision, `Normal(mean, 1/precision)` on
/// every group mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub mean: f64,
    pub mean_precision: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            gamma_shape: 1.0,
            gamma_rate: 1.0,
            mean: 0.0,
            mean_precision: 1.0,
        }
    }
}

impl HyperParams {
    /// Unit precisions and zero means for `n_groups` groups of `k` factors.
    pub fn initial(n_groups: usize, k: usize, priors: Priors) -> Self {
        HyperParams {
            alpha: 1.0,
            lambda_w: vec![1.0; n_groups],
            mu_w: vec![0.0; n_groups],
            lambda_v: vec![vec![1.0; k]; n_groups],
            mu_v: vec![vec![0.0; k]; n_groups],
            priors,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmModel {
    pub w0: f64,
    pub w: Vec<f64>,
    /// Row-major `p × k`.
    pub v: Vec<f64>,
    k: usize,
    groups: Vec<FeatureGroup>,
    pub hyper: Option<HyperParams>,
}

/// Partial derivatives of a prediction with respect to the parameters its
/// active columns touch.
#[derive(Debug, Clone, PartialEq)]
pub struct FmGradient {
    /// Always 1.
    pub w0: f64,
    /// `(j, x_j)`.
    pub w: Vec<(usize, f64)>,
    /// `(j, [x_j (q_f − v_jf x_j)]_f)`.
    pub v: Vec<(usize, Vec<f64>)>,
}

/// A model with zero biases and `Normal(0, init_std²)` embeddings.
pub fn init_model(
    p: usize,
    k: usize,
    groups: Vec<FeatureGroup>,
    seed: u64,
    init_std: f64,
) -> Result<FmModel> {
    if p == 0 || k == 0 {
        return Err(Error::Config(format!("need p ≥ 1 and k ≥ 1, got p={p}, k={k}")));
    }
    if !(init_std >= 0.0 && init_std.is_finite()) {
        return Err(Error::Config(format!("init_std must be ≥ 0, got {init_std}")));
    }
    let n = check_partition(&groups).map_err(Error::Dimension)?;
    if n != p {
        return Err(Error::Dimension(format!("groups cover {n} columns, p = {p}")));
    }
    let mut v = vec![0.0; p * k];
    if init_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, init_std).expect("std checked above");
        for x in v.iter_mut() {
            *x = normal.sample(&mut rng);
        }
    }
    Ok(FmModel {
        w0: 0.0,
        w: vec![0.0; p],
        v,
        k,
        groups,
        hyper: None,
    })
}

impl FmModel {
    /// Assembles a model from raw parameters, checking shapes.
    pub fn from_parts(
        w0: f64,
        w: Vec<f64>,
        v: Vec<f64>,
        k: usize,
        groups: Vec<FeatureGroup>,
        hyper: Option<HyperParams>,
    ) -> Result<Self> {
        let p = w.len();
        if k == 0 || v.len() != p * k {
            return Err(Error::Dimension(format!(
                "w has {p} entries, V has {} for k = {k}",
                v.len()
            )));
        }
        let n = check_partition(&groups).map_err(Error::Dimension)?;
        if n != p {
            return Err(Error::Dimension(format!("groups cover {n} columns, p = {p}")));
        }
        Ok(FmModel {
            w0,
            w,
            v,
            k,
            groups,
            hyper,
        })
    }

    pub fn n_cols(&self) -> usize {
        self.w.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    pub fn factors(&self, j: usize) -> &[f64] {
        &self.v[j * self.k..(j + 1) * self.k]
    }

    pub fn factors_mut(&mut self, j: usize) -> &mut [f64] {
        let k = self.k;
        &mut self.v[j * k..(j + 1) * k]
    }

    pub fn all_finite(&self) -> bool {
        self.w0.is_finite()
            && self.w.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
    }

    fn check_columns(&self, entries: &[(usize, f64)]) -> Result<()> {
        match entries.iter().find(|e| e.0 >= self.n_cols()) {
            Some(&(column, _)) => Err(Error::ColumnOutOfRange {
                column,
                n_cols: self.n_cols(),
            }),
            None => Ok(()),
        }
    }

    pub fn predict(&self, x: &SparseRow) -> Result<f64> {
        self.check_columns(&x.entries)?;
        Ok(self.predict_entries(&x.entries))
    }

    /// Prediction without bounds checks. Panics on out-of-range columns.
    pub fn predict_entries(&self, entries: &[(usize, f64)]) -> f64 {
        let mut y = self.w0;
        for &(j, x) in entries {
            y += self.w[j] * x;
        }
        let mut pair = 0.0;
        for f in 0..self.k {
            let (mut q, mut s) = (0.0, 0.0);
            for &(j, x) in entries {
                let vx = self.v[j * self.k + f] * x;
                q += vx;
                s += vx * vx;
            }
            pair += q * q - s;
        }
        y + 0.5 * pair
    }

    pub fn gradient(&self, x: &SparseRow) -> Result<FmGradient> {
        self.check_columns(&x.entries)?;
        let k = self.k;
        let mut q = vec![0.0; k];
        for &(j, xj) in &x.entries {
            for (f, qf) in q.iter_mut().enumerate() {
                *qf += self.v[j * k + f] * xj;
            }
        }
        let w = x.entries.clone();
        let v = x
            .entries
            .iter()
            .map(|&(j, xj)| {
                let grad = (0..k)
                    .map(|f| xj * (q[f] - self.v[j * k + f] * xj))
                    .collect();
                (j, grad)
            })
            .collect();
        Ok(FmGradient { w0: 1.0, w, v })
    }

    /// Predictions for every row of `m`, computing each shared block's
    /// contribution once per key.
    pub fn predict_matrix(&self, m: &DesignMatrix) -> Result<Vec<f64>> {
        m.check_model_dims(self.n_cols())?;
        let k = self.k;
        let caches: Vec<BlockCache> = m
            .relations()
            .iter()
            .map(|rel| BlockCache::compute(self, &rel.table))
            .collect();
        let mut q = vec![0.0; k];
        let mut s = vec![0.0; k];
        let mut out = Vec::with_capacity(m.n_rows());
        for i in 0..m.n_rows() {
            let mut y = self.w0;
            q.fill(0.0);
            s.fill(0.0);
            let (cols, vals) = m.direct_row(i);
            for (&j, &x) in cols.iter().zip(vals) {
                let j = j as usize;
                y += self.w[j] * x;
                let vj = &self.v[j * k..(j + 1) * k];
                for f in 0..k {
                    let vx = vj[f] * x;
                    q[f] += vx;
                    s[f] += vx * vx;
                }
            }
            for (rel, cache) in m.relations().iter().zip(&caches) {
                let key = rel.keys[i] as usize;
                y += cache.linear[key];
                for f in 0..k {
                    q[f] += cache.q[key * k + f];
                    s[f] += cache.s[key * k + f];
                }
            }
            let pair: f64 = q.iter().zip(&s).map(|(qf, sf)| qf * qf - sf).sum();
            out.push(y + 0.5 * pair);
        }
        Ok(out)
    }
}

/// Per-key sums of a block table under the current parameters.
pub(crate) struct BlockCache {
    pub linear: Vec<f64>,
    /// `n_keys × k`: Σ v_jf x_j.
    pub q: Vec<f64>,
    /// `n_keys × k`: Σ v_jf² x_j².
    pub s: Vec<f64>,
}

impl BlockCache {
    pub fn compute(model: &FmModel, table: &crate::design::BlockTable) -> Self {
        let k = model.k;
        let n = table.n_keys();
        let mut linear = vec![0.0; n];
        let mut q = vec![0.0; n * k];
        let mut s = vec![0.0; n * k];
        for key in 0..n {
            let (cols, vals) = table.block(key);
            for (&j, &x) in cols.iter().zip(vals) {
                let j = j as usize;
                linear[key] += model.w[j] * x;
                let vj = model.factors(j);
                for f in 0..k {
                    let vx = vj[f] * x;
                    q[key * k + f] += vx;
                    s[key * k + f] += vx * vx;
                }
            }
        }
        BlockCache { linear, q, s }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::GroupKind;

    fn other(p: usize) -> Vec<FeatureGroup> {
        vec![FeatureGroup::new(GroupKind::Other, 0..p)]
    }

    fn two_feature_model() -> FmModel {
        FmModel::from_parts(0.1, vec![0.2, -0.1], vec![0.5, 0.4], 1, other(2), None).unwrap()
    }

    #[test]
    fn zero_model_predicts_zero() {
        let m = init_model(4, 3, other(4), 0, 0.0).unwrap();
        let x = SparseRow::new(0.0, vec![(0, 1.0), (2, -3.0), (3, 0.5)]);
        assert_eq!(m.predict(&x).unwrap(), 0.0);
    }

    #[test]
    fn two_feature_hand_value() {
        let m = two_feature_model();
        let x = SparseRow::new(0.0, vec![(0, 1.0), (1, 1.0)]);
        assert!((m.predict(&x).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn single_feature_has_no_pairwise_term() {
        let m = init_model(5, 4, other(5), 7, 0.3).unwrap();
        let mut m = m;
        m.w0 = 1.5;
        m.w[3] = -0.25;
        let x = SparseRow::new(0.0, vec![(3, 2.0)]);
        assert!((m.predict(&x).unwrap() - (1.5 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn gradient_hand_value() {
        let m = two_feature_model();
        let g = m.gradient(&SparseRow::new(0.0, vec![(0, 1.0), (1, 1.0)])).unwrap();
        assert_eq!(g.w0, 1.0);
        assert_eq!(g.w, vec![(0, 1.0), (1, 1.0)]);
        // q_0 = 0.9; ∂/∂v_{1,0} = 1·(0.9 − 0.4), ∂/∂v_{0,0} = 1·(0.9 − 0.5).
        assert!((g.v[1].1[0] - 0.5).abs() < 1e-15);
        assert!((g.v[0].1[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_column_is_an_error() {
        let m = two_feature_model();
        let x = SparseRow::new(0.0, vec![(2, 1.0)]);
        assert!(matches!(m.predict(&x), Err(Error::ColumnOutOfRange { column: 2, n_cols: 2 })));
        assert!(m.gradient(&x).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = init_model(10, 4, other(10), 42, 0.1).unwrap();
        let b = init_model(10, 4, other(10), 42, 0.1).unwrap();
        let c = init_model(10, 4, other(10), 43, 0.1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.v, c.v);
        assert_eq!(a.w0, 0.0);
        assert!(a.w.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn init_zero_std_gives_zero_embeddings() {
        let m = init_model(3, 2, other(3), 1, 0.0).unwrap();
        assert!(m.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_rejects_bad_shapes() {
        assert!(init_model(0, 1, other(0), 0, 0.1).is_err());
        assert!(init_model(3, 0, other(3), 0, 0.1).is_err());
        assert!(init_model(3, 1, other(4), 0, 0.1).is_err());
        assert!(init_model(3, 1, other(3), 0, -1.0).is_err());
    }

    #[test]
    fn init_std_matches_request() {
        let m = init_model(250_000, 4, other(250_000), 3, 0.1).unwrap();
        let n = m.v.len() as f64;
        let mean = m.v.iter().sum::<f64>() / n;
        let var = m.v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 0.1).abs() < 0.001, "std {}", var.sqrt());
    }
}
