//! Bayesian factorization machines learned by Gibbs sampling.
//!
//! Every parameter `θ` has a Gaussian prior `N(μ_θ, 1/λ_θ)` whose mean and
//! precision are shared by the parameters of one feature group, and the
//! observations have noise precision `α`. Because the model is affine in
//! each single parameter, `ŷ_i = g_i + θ h_i` with `h_i = ∂ŷ_i/∂θ`, the
//! conditional of `θ` given everything else is Gaussian:
//!
//! ```text
//! precision = α Σ_i h_i² + λ_θ
//! mean      = (α Σ_i (θ_old h_i + e_i) h_i + μ_θ λ_θ) / precision
//! ```
//!
//! where `e_i = y_i − ŷ_i` is the current residual. The hyperparameters get
//! conjugate updates: `α` and every `λ` from Gamma conditionals, every `μ`
//! from a Normal conditional.
//!
//! One sampling step draws `α`, then the group hyperparameters, then sweeps
//! `w0`, all linear weights and all embeddings factor by factor. Test
//! predictions are averaged over all steps.
//!
//! Residuals are kept up to date incrementally. For bag-of-words blocks
//! shared by all rows of a user (or item) the sweep works on per-key
//! aggregates instead of touching every row for every column, which makes
//! SVD++-style models cost about the same per step as plain MF.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{BlockRelation, DesignMatrix};
use crate::error::{Error, Result};
use crate::metrics::rmse;
use crate::model::{FmModel, HyperParams, Priors};
use crate::types::FeatureGroup;

/// How embedding hyperparameters are shared within a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperGrouping {
    /// One `(λ, μ)` per group for all factors.
    PerGroup,
    /// One `(λ, μ)` per group and factor. A factor that picks up signal
    /// loosens its own prior, which is what lets a 0.1 initialization grow.
    #[default]
    PerGroupPerFactor,
}

/// Order in which feature groups are swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    #[default]
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub steps: usize,
    /// Only used for the burn-in-excluded diagnostic column of the trace;
    /// predictions always average every step.
    #[serde(default)]
    pub burn_in: usize,
    pub seed: u64,
    pub init_std: f64,
    #[serde(default)]
    pub priors: Priors,
    /// Prior precision of `w0` (0 is a flat prior).
    #[serde(default)]
    pub w0_precision: f64,
    #[serde(default)]
    pub hyper_grouping: HyperGrouping,
    #[serde(default)]
    pub sweep_order: SweepOrder,
    /// Compute the trace RMSE every this many steps (the final step is
    /// always evaluated). Predictions are accumulated every step.
    #[serde(default = "one")]
    pub eval_every: usize,
}

fn one() -> usize {
    1
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            steps: 512,
            burn_in: 0,
            seed: 0,
            init_std: 0.1,
            priors: Priors::default(),
            w0_precision: 0.0,
            hyper_grouping: HyperGrouping::PerGroupPerFactor,
            sweep_order: SweepOrder::Forward,
            eval_every: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.priors;
        if self.steps == 0 {
            return Err(Error::Config("steps must be ≥ 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be ≥ 1".into()));
        }
        if !(p.gamma_shape > 0.0 && p.gamma_rate > 0.0 && p.mean_precision > 0.0) {
            return Err(Error::Config(format!("priors must be positive: {p:?}")));
        }
        if !(self.w0_precision >= 0.0 && self.init_std >= 0.0) {
            return Err(Error::Config("w0 precision and init std must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    /// RMSE of the running-mean test prediction.
    pub test_rmse: Option<f64>,
    /// Same, averaging only the steps after burn-in.
    pub test_rmse_after_burn_in: Option<f64>,
    pub alpha: f64,
    /// Per group.
    pub lambda_w: Vec<f64>,
    /// Per group, averaged over factors.
    pub lambda_v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct McmcOutcome {
    /// The last sample, with its hyperparameters.
    pub model: FmModel,
    /// Running-mean test predictions over all steps.
    pub predictions: Vec<f64>,
    pub trace: Vec<StepStats>,
}

/// Mean and variance of a parameter's Gaussian conditional.
///
/// `h[i]` is `∂ŷ_i/∂θ` and `e[i]` the residual at `θ_old`.
pub fn conditional_posterior(
    theta_old: f64,
    alpha: f64,
    lambda: f64,
    mu: f64,
    h: &[f64],
    e: &[f64],
) -> (f64, f64) {
    let sum_h2: f64 = h.iter().map(|h| h * h).sum();
    let sum_he: f64 = h.iter().zip(e).map(|(h, e)| h * e).sum();
    conditional_from_sums(theta_old, alpha, lambda, mu, sum_h2, sum_he)
}

fn conditional_from_sums(
    theta_old: f64,
    alpha: f64,
    lambda: f64,
    mu: f64,
    sum_h2: f64,
    sum_he: f64,
) -> (f64, f64) {
    let precision = alpha * sum_h2 + lambda;
    let var = 1.0 / precision;
    let mean = var * (alpha * (theta_old * sum_h2 + sum_he) + mu * lambda);
    (mean, var)
}

fn gamma_draw(shape: f64, rate: f64, rng: &mut impl Rng) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("shape and rate are positive")
        .sample(rng)
}

/// Draws the noise precision given the residuals.
pub fn sample_alpha(residuals: &[f64], priors: &Priors, rng: &mut impl Rng) -> f64 {
    let sse: f64 = residuals.iter().map(|e| e * e).sum();
    gamma_draw(
        priors.gamma_shape + residuals.len() as f64 / 2.0,
        priors.gamma_rate + sse / 2.0,
        rng,
    )
}

/// Draws a group's precision given its current mean, then the mean given
/// the new precision.
pub fn sample_precision_and_mean(
    values: &[f64],
    mu: f64,
    priors: &Priors,
    rng: &mut impl Rng,
) -> (f64, f64) {
    let n = values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - mu) * (v - mu)).sum();
    let lambda = gamma_draw(priors.gamma_shape + n / 2.0, priors.gamma_rate + ss / 2.0, rng);
    let sum: f64 = values.iter().sum();
    let prec = n * lambda + priors.mean_precision;
    let mean = (lambda * sum + priors.mean_precision * priors.mean) / prec;
    let z: f64 = rng.sample(StandardNormal);
    (lambda, mean + z / prec.sqrt())
}

/// Draws `α` from the residuals, then `(λ, μ)` for every non-empty group.
pub fn sample_hyperparams(
    model: &FmModel,
    residuals: &[f64],
    hyper: &mut HyperParams,
    grouping: HyperGrouping,
    rng: &mut impl Rng,
) {
    let priors = hyper.priors;
    hyper.alpha = sample_alpha(residuals, &priors, rng);
    let k = model.k();
    let mut buf = Vec::new();
    for (g, group) in model.groups().iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let (lw, mw) =
            sample_precision_and_mean(&model.w[group.range()], hyper.mu_w[g], &priors, rng);
        hyper.lambda_w[g] = lw;
        hyper.mu_w[g] = mw;
        match grouping {
            HyperGrouping::PerGroup => {
                buf.clear();
                buf.extend_from_slice(&model.v[group.start * k..group.end * k]);
                let (lv, mv) = sample_precision_and_mean(&buf, hyper.mu_v[g][0], &priors, rng);
                hyper.lambda_v[g].fill(lv);
                hyper.mu_v[g].fill(mv);
            }
            HyperGrouping::PerGroupPerFactor => {
                for f in 0..k {
                    buf.clear();
                    buf.extend(group.range().map(|j| model.v[j * k + f]));
                    let (lv, mv) =
                        sample_precision_and_mean(&buf, hyper.mu_v[g][f], &priors, rng);
                    hyper.lambda_v[g][f] = lv;
                    hyper.mu_v[g][f] = mv;
                }
            }
        }
    }
}

/// Column-major copy of the direct entries.
struct ColumnIndex {
    ptr: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
}

impl ColumnIndex {
    fn of_direct(m: &DesignMatrix) -> Self {
        let p = m.n_cols();
        let mut counts = vec![0usize; p + 1];
        for i in 0..m.n_rows() {
            for &c in m.direct_row(i).0 {
                counts[c as usize + 1] += 1;
            }
        }
        for j in 0..p {
            counts[j + 1] += counts[j];
        }
        let ptr = counts.clone();
        let nnz = ptr[p];
        let mut rows = vec![0u32; nnz];
        let mut vals = vec![0.0; nnz];
        let mut fill = counts;
        for i in 0..m.n_rows() {
            let (cols, vs) = m.direct_row(i);
            for (&c, &v) in cols.iter().zip(vs) {
                let at = fill[c as usize];
                rows[at] = i as u32;
                vals[at] = v;
                fill[c as usize] += 1;
            }
        }
        ColumnIndex { ptr, rows, vals }
    }

    fn column(&self, j: usize) -> (&[u32], &[f64]) {
        let r = self.ptr[j]..self.ptr[j + 1];
        (&self.rows[r.clone()], &self.vals[r])
    }
}

/// A block relation prepared for sampling: the table transposed to
/// `column → (key, x)` over the group's columns, plus per-key row counts.
struct BlockPlan<'a> {
    relation: &'a BlockRelation,
    group: FeatureGroup,
    col_ptr: Vec<usize>,
    col_keys: Vec<u32>,
    col_vals: Vec<f64>,
    rows_per_key: Vec<f64>,
}

impl<'a> BlockPlan<'a> {
    fn new(relation: &'a BlockRelation, group: FeatureGroup) -> Self {
        let table = &relation.table;
        let width = group.len();
        let mut counts = vec![0usize; width + 1];
        for key in 0..table.n_keys() {
            for &c in table.block(key).0 {
                counts[c as usize - group.start + 1] += 1;
            }
        }
        for j in 0..width {
            counts[j + 1] += counts[j];
        }
        let col_ptr = counts.clone();
        let mut col_keys = vec![0u32; col_ptr[width]];
        let mut col_vals = vec![0.0; col_ptr[width]];
        let mut fill = counts;
        for key in 0..table.n_keys() {
            let (cols, vals) = table.block(key);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = &mut fill[c as usize - group.start];
                col_keys[*slot] = key as u32;
                col_vals[*slot] = v;
                *slot += 1;
            }
        }
        let mut rows_per_key = vec![0.0; table.n_keys()];
        for &k in &relation.keys {
            rows_per_key[k as usize] += 1.0;
        }
        BlockPlan {
            relation,
            group,
            col_ptr,
            col_keys,
            col_vals,
            rows_per_key,
        }
    }

    fn column(&self, j: usize) -> (&[u32], &[f64]) {
        let local = j - self.group.start;
        let r = self.col_ptr[local]..self.col_ptr[local + 1];
        (&self.col_keys[r.clone()], &self.col_vals[r])
    }

    /// Σ_j v_jf x_j for every key.
    fn factor_sums(&self, model: &FmModel, f: usize, out: &mut Vec<f64>) {
        let k = model.k();
        let table = &self.relation.table;
        out.clear();
        out.extend((0..table.n_keys()).map(|key| {
            let (cols, vals) = table.block(key);
            cols.iter()
                .zip(vals)
                .map(|(&j, &x)| model.v[j as usize * k + f] * x)
                .sum::<f64>()
        }));
    }
}

enum GroupPlan<'a> {
    Direct(FeatureGroup),
    Block(BlockPlan<'a>),
}

/// Mutable sampler state for one chain.
struct Sampler<'a> {
    data: &'a DesignMatrix,
    columns: ColumnIndex,
    plans: Vec<(usize, GroupPlan<'a>)>,
    cfg: &'a McmcConfig,
    rng: ChaCha8Rng,
    /// Residuals `y − ŷ`.
    e: Vec<f64>,
    /// `q_f` per row for the factor being swept.
    q: Vec<f64>,
    // Per-key scratch for block passes.
    block_sum: Vec<f64>,
    agg: Vec<[f64; 4]>,
    shift: Vec<(f64, f64)>,
}

impl<'a> Sampler<'a> {
    fn new(data: &'a DesignMatrix, model: &FmModel, cfg: &'a McmcConfig) -> Result<Self> {
        let groups = model.groups();
        let mut plans = Vec::with_capacity(groups.len());
        for (g, group) in groups.iter().enumerate() {
            let relation = data.relations().iter().find(|r| r.table.kind() == group.kind);
            let plan = match relation {
                Some(rel) => GroupPlan::Block(BlockPlan::new(rel, group.clone())),
                None => GroupPlan::Direct(group.clone()),
            };
            plans.push((g, plan));
        }
        for rel in data.relations() {
            if !groups.iter().any(|g| g.kind == rel.table.kind()) {
                return Err(Error::Dimension(format!(
                    "block relation {} has no matching feature group",
                    rel.table.kind()
                )));
            }
        }
        if cfg.sweep_order == SweepOrder::Reverse {
            plans.reverse();
        }
        let predictions = model.predict_matrix(data)?;
        let e = data.targets().iter().zip(&predictions).map(|(y, p)| y - p).collect();
        Ok(Sampler {
            data,
            columns: ColumnIndex::of_direct(data),
            plans,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            e,
            q: vec![0.0; data.n_rows()],
            block_sum: Vec::new(),
            agg: Vec::new(),
            shift: Vec::new(),
        })
    }

    fn draw(&mut self, mean: f64, var: f64) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        mean + z * var.sqrt()
    }

    fn step(&mut self, model: &mut FmModel, hyper: &mut HyperParams) {
        sample_hyperparams(model, &self.e, hyper, self.cfg.hyper_grouping, &mut self.rng);
        let alpha = hyper.alpha;

        // Global bias: h_i = 1 for every row.
        let sum_he: f64 = self.e.iter().sum();
        let (mean, var) = conditional_from_sums(
            model.w0,
            alpha,
            self.cfg.w0_precision,
            0.0,
            self.e.len() as f64,
            sum_he,
        );
        let new = self.draw(mean, var);
        let delta = new - model.w0;
        model.w0 = new;
        self.e.iter_mut().for_each(|e| *e -= delta);

        let plans = std::mem::take(&mut self.plans);
        for (g, plan) in &plans {
            let (lambda, mu) = (hyper.lambda_w[*g], hyper.mu_w[*g]);
            match plan {
                GroupPlan::Direct(group) => self.linear_direct(model, group, alpha, lambda, mu),
                GroupPlan::Block(b) => self.linear_block(model, b, alpha, lambda, mu),
            }
        }
        for f in 0..model.k() {
            self.compute_q(model, &plans, f);
            for (g, plan) in &plans {
                let (lambda, mu) = (hyper.lambda_v[*g][f], hyper.mu_v[*g][f]);
                match plan {
                    GroupPlan::Direct(group) => {
                        self.factor_direct(model, group, f, alpha, lambda, mu)
                    }
                    GroupPlan::Block(b) => self.factor_block(model, b, f, alpha, lambda, mu),
                }
            }
        }
        self.plans = plans;
    }

    fn linear_direct(
        &mut self,
        model: &mut FmModel,
        group: &FeatureGroup,
        alpha: f64,
        lambda: f64,
        mu: f64,
    ) {
        for j in group.range() {
            let (rows, vals) = self.columns.column(j);
            let (mut s2, mut se) = (0.0, 0.0);
            for (&i, &x) in rows.iter().zip(vals) {
                s2 += x * x;
                se += x * self.e[i as usize];
            }
            let (mean, var) = conditional_from_sums(model.w[j], alpha, lambda, mu, s2, se);
            let new = self.draw(mean, var);
            let delta = new - model.w[j];
            model.w[j] = new;
            let (rows, vals) = self.columns.column(j);
            for (&i, &x) in rows.iter().zip(vals) {
                self.e[i as usize] -= delta * x;
            }
        }
    }

    fn linear_block(
        &mut self,
        model: &mut FmModel,
        plan: &BlockPlan<'_>,
        alpha: f64,
        lambda: f64,
        mu: f64,
    ) {
        let keys = &plan.relation.keys;
        let n_keys = plan.rows_per_key.len();
        // agg[key][0] = Σ e over the key's rows; shift[key].0 = Δŷ so far.
        self.agg.clear();
        self.agg.resize(n_keys, [0.0; 4]);
        self.shift.clear();
        self.shift.resize(n_keys, (0.0, 0.0));
        for (i, &key) in keys.iter().enumerate() {
            self.agg[key as usize][0] += self.e[i];
        }
        for j in plan.group.range() {
            let (ks, xs) = plan.column(j);
            let (mut s2, mut se) = (0.0, 0.0);
            for (&key, &x) in ks.iter().zip(xs) {
                let key = key as usize;
                s2 += x * x * plan.rows_per_key[key];
                se += x * self.agg[key][0];
            }
            let (mean, var) = conditional_from_sums(model.w[j], alpha, lambda, mu, s2, se);
            let new = self.draw(mean, var);
            let delta = new - model.w[j];
            model.w[j] = new;
            for (&key, &x) in ks.iter().zip(xs) {
                let key = key as usize;
                self.agg[key][0] -= delta * x * plan.rows_per_key[key];
                self.shift[key].0 += delta * x;
            }
        }
        for (i, &key) in keys.iter().enumerate() {
            self.e[i] -= self.shift[key as usize].0;
        }
    }

    fn compute_q(&mut self, model: &FmModel, plans: &[(usize, GroupPlan<'_>)], f: usize) {
        let k = model.k();
        for i in 0..self.data.n_rows() {
            let (cols, vals) = self.data.direct_row(i);
            self.q[i] = cols
                .iter()
                .zip(vals)
                .map(|(&j, &x)| model.v[j as usize * k + f] * x)
                .sum();
        }
        for (_, plan) in plans {
            if let GroupPlan::Block(b) = plan {
                b.factor_sums(model, f, &mut self.block_sum);
                for (i, &key) in b.relation.keys.iter().enumerate() {
                    self.q[i] += self.block_sum[key as usize];
                }
            }
        }
    }

    fn factor_direct(
        &mut self,
        model: &mut FmModel,
        group: &FeatureGroup,
        f: usize,
        alpha: f64,
        lambda: f64,
        mu: f64,
    ) {
        let k = model.k();
        for j in group.range() {
            let v_old = model.v[j * k + f];
            let (rows, vals) = self.columns.column(j);
            let (mut s2, mut se) = (0.0, 0.0);
            for (&i, &x) in rows.iter().zip(vals) {
                let i = i as usize;
                let h = x * (self.q[i] - v_old * x);
                s2 += h * h;
                se += h * self.e[i];
            }
            let (mean, var) = conditional_from_sums(v_old, alpha, lambda, mu, s2, se);
            let new = self.draw(mean, var);
            let delta = new - v_old;
            model.v[j * k + f] = new;
            let (rows, vals) = self.columns.column(j);
            for (&i, &x) in rows.iter().zip(vals) {
                let i = i as usize;
                let h = x * (self.q[i] - v_old * x);
                self.e[i] -= delta * h;
                self.q[i] += delta * x;
            }
        }
    }

    /// Embedding pass over a shared block.
    ///
    /// For a row `i` with key `κ`, write `q_i = r_i + B_κ` where `B_κ` is the
    /// block's contribution and `r_i` everything else. For a block column
    /// `j` with weight `x` in key `κ`, `h_i = x (r_i + c_κ)` with
    /// `c_κ = B_κ − v_jf x`, so the sufficient statistics only need per-key
    /// sums of `1, r, r², e, e·r`. The residual change `Δ x (r_i + c_κ)` is
    /// affine in `r_i` and is applied to the rows once at the end.
    fn factor_block(
        &mut self,
        model: &mut FmModel,
        plan: &BlockPlan<'_>,
        f: usize,
        alpha: f64,
        lambda: f64,
        mu: f64,
    ) {
        let k = model.k();
        let keys = &plan.relation.keys;
        let n_keys = plan.rows_per_key.len();
        plan.factor_sums(model, f, &mut self.block_sum);
        // agg[key] = [Σ r, Σ r², Σ e, Σ e·r]
        self.agg.clear();
        self.agg.resize(n_keys, [0.0; 4]);
        self.shift.clear();
        self.shift.resize(n_keys, (0.0, 0.0));
        for (i, &key) in keys.iter().enumerate() {
            let key = key as usize;
            let r = self.q[i] - self.block_sum[key];
            let e = self.e[i];
            let a = &mut self.agg[key];
            a[0] += r;
            a[1] += r * r;
            a[2] += e;
            a[3] += e * r;
        }
        for j in plan.group.range() {
            let v_old = model.v[j * k + f];
            let (ks, xs) = plan.column(j);
            let (mut s2, mut se) = (0.0, 0.0);
            for (&key, &x) in ks.iter().zip(xs) {
                let key = key as usize;
                let n = plan.rows_per_key[key];
                let [r1, r2, e0, e1] = self.agg[key];
                let c = self.block_sum[key] - v_old * x;
                s2 += x * x * (r2 + 2.0 * c * r1 + n * c * c);
                se += x * (e1 + c * e0);
            }
            let (mean, var) = conditional_from_sums(v_old, alpha, lambda, mu, s2, se);
            let new = self.draw(mean, var);
            let delta = new - v_old;
            model.v[j * k + f] = new;
            for (&key, &x) in ks.iter().zip(xs) {
                let key = key as usize;
                let n = plan.rows_per_key[key];
                let c = self.block_sum[key] - v_old * x;
                let dx = delta * x;
                let a = &mut self.agg[key];
                a[2] -= dx * (a[0] + n * c);
                a[3] -= dx * (a[1] + c * a[0]);
                self.shift[key].0 += dx * c;
                self.shift[key].1 += dx;
                self.block_sum[key] += dx;
            }
        }
        for (i, &key) in keys.iter().enumerate() {
            let key = key as usize;
            let (a, b) = self.shift[key];
            // r_i uses the block sum from before this pass.
            let r = self.q[i] - (self.block_sum[key] - b);
            self.e[i] -= a + b * r;
            self.q[i] = r + self.block_sum[key];
        }
    }
}

/// Runs the Gibbs sampler on `train`, averaging predictions for `test`.
pub fn gibbs_train(
    train: &DesignMatrix,
    test: &DesignMatrix,
    mut model: FmModel,
    cfg: &McmcConfig,
) -> Result<McmcOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    train.check_model_dims(model.n_cols())?;
    test.check_model_dims(model.n_cols())?;
    let mut hyper = match model.hyper.take() {
        Some(h) => h,
        None => HyperParams::initial(model.groups().len(), model.k(), cfg.priors),
    };
    let mut sampler = Sampler::new(train, &model, cfg)?;

    let n_test = test.n_rows();
    let mut sum = vec![0.0; n_test];
    let mut sum_after = vec![0.0; n_test];
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut mean = vec![0.0; n_test];
    for step in 1..=cfg.steps {
        sampler.step(&mut model, &mut hyper);
        if sampler.e.iter().any(|e| !e.is_finite()) || !model.all_finite() {
            return Err(Error::McmcDivergence { step });
        }
        let preds = model.predict_matrix(test)?;
        for (s, p) in sum.iter_mut().zip(&preds) {
            *s += p;
        }
        if step > cfg.burn_in {
            for (s, p) in sum_after.iter_mut().zip(&preds) {
                *s += p;
            }
        }
        let evaluate = n_test > 0 && (step % cfg.eval_every == 0 || step == cfg.steps);
        let (test_rmse, test_rmse_after_burn_in) = if evaluate {
            for (m, s) in mean.iter_mut().zip(&sum) {
                *m = s / step as f64;
            }
            let all = rmse(&mean, test.targets())?;
            let after = if step > cfg.burn_in {
                let n = (step - cfg.burn_in) as f64;
                let m: Vec<f64> = sum_after.iter().map(|s| s / n).collect();
                Some(rmse(&m, test.targets())?)
            } else {
                None
            };
            (Some(all), after)
        } else {
            (None, None)
        };
        trace.push(StepStats {
            step,
            test_rmse,
            test_rmse_after_burn_in,
            alpha: hyper.alpha,
            lambda_w: hyper.lambda_w.clone(),
            lambda_v: hyper
                .lambda_v
                .iter()
                .map(|l| l.iter().sum::<f64>() / l.len() as f64)
                .collect(),
        });
    }
    let predictions = sum.iter().map(|s| s / cfg.steps as f64).collect();
    model.hyper = Some(hyper);
    Ok(McmcOutcome {
        model,
        predictions,
        trace,
    })
}

/// Runs `steps` Gibbs steps and returns the sampler's incrementally
/// maintained residuals next to residuals recomputed from scratch, after
/// every step.
pub fn residual_drift(
    train: &DesignMatrix,
    model: FmModel,
    cfg: &McmcConfig,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    cfg.validate()?;
    let mut model = model;
    let mut hyper = HyperParams::initial(model.groups().len(), model.k(), cfg.priors);
    let mut sampler = Sampler::new(train, &model, cfg)?;
    let mut out = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        sampler.step(&mut model, &mut hyper);
        let fresh: Vec<f64> = model
            .predict_matrix(train)?
            .iter()
            .zip(train.targets())
            .map(|(p, y)| y - p)
            .collect();
        out.push((sampler.e.clone(), fresh));
    }
    Ok(out)
}

/// Checks that the running-mean test RMSE trends down: for every pair of
/// adjacent `window`-step windows starting after `after` steps, the later
/// window's mean RMSE exceeds the earlier one's by at most `tol`.
///
/// Steps without an evaluated RMSE are skipped. Returns `None` when the
/// trace is too short to hold two windows.
pub fn trace_trend_holds(trace: &[StepStats], after: usize, window: usize, tol: f64) -> Option<bool> {
    let rmse: Vec<f64> = trace
        .iter()
        .filter(|s| s.step > after)
        .filter_map(|s| s.test_rmse)
        .collect();
    if window == 0 || rmse.len() < 2 * window {
        return None;
    }
    let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    Some((0..=rmse.len() - 2 * window).all(|s| {
        mean(&rmse[s + window..s + 2 * window]) <= mean(&rmse[s..s + window]) + tol
    }))
}

pub fn write_trace_csv(out: impl Write, trace: &[StepStats], groups: &[FeatureGroup]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "step".to_string(),
        "running_mean_test_rmse".to_string(),
        "alpha".to_string(),
    ];
    for g in groups {
        header.push(format!("lambda_w_{}", g.kind));
        header.push(format!("lambda_v_{}", g.kind));
    }
    w.write_record(&header)?;
    for s in trace {
        let mut rec = vec![
            s.step.to_string(),
            s.test_rmse.map(|x| x.to_string()).unwrap_or_default(),
            s.alpha.to_string(),
        ];
        for (lw, lv) in s.lambda_w.iter().zip(&s.lambda_v) {
            rec.push(lw.to_string());
            rec.push(lv.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))
}

pub fn save_trace_csv(
    path: impl AsRef<Path>,
    trace: &[StepStats],
    groups: &[FeatureGroup],
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_csv(file, trace, groups)
}
