#![allow(dead_code)]

use std::path::PathBuf;

use fmbench::model::FmModel;
use fmbench::types::{Dataset, FeatureGroup, GroupKind, RatingRecord, SparseRow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `w0 + Σ w_j x_j + Σ_{j<j'} ⟨v_j, v_j'⟩ x_j x_j'`, summed pair by pair.
pub fn naive_predict(m: &FmModel, x: &SparseRow) -> f64 {
    let mut y = m.w0;
    for &(j, xj) in &x.entries {
        y += m.w[j] * xj;
    }
    for (a, &(j, xj)) in x.entries.iter().enumerate() {
        for &(l, xl) in &x.entries[a + 1..] {
            let dot: f64 = m.factors(j).iter().zip(m.factors(l)).map(|(p, q)| p * q).sum();
            y += dot * xj * xl;
        }
    }
    y
}

pub fn one_group(p: usize) -> Vec<FeatureGroup> {
    vec![FeatureGroup::new(GroupKind::Other, 0..p)]
}

pub fn random_model(rng: &mut impl Rng, p: usize, k: usize) -> FmModel {
    let mut u = || rng.random_range(-1.0..1.0);
    let w0 = u();
    let w = (0..p).map(|_| u()).collect();
    let v = (0..p * k).map(|_| u()).collect();
    FmModel::from_parts(w0, w, v, k, one_group(p), None).unwrap()
}

/// Distinct sorted columns with real-valued weights.
pub fn random_row(rng: &mut impl Rng, p: usize) -> SparseRow {
    let nnz = rng.random_range(0..=p.min(12));
    let mut cols: Vec<usize> = rand::seq::index::sample(rng, p, nnz).into_vec();
    cols.sort_unstable();
    let entries = cols
        .into_iter()
        .map(|j| (j, rng.random_range(-2.0..2.0)))
        .collect();
    SparseRow::new(rng.random_range(1.0..5.0), entries)
}

/// Ratings from a low-rank model plus noise, on a small user × item grid
/// with a few days, about `density` of the pairs observed.
pub fn synthetic_ratings(n_users: i64, n_items: i64, density: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 2;
    let pu: Vec<Vec<f64>> = (0..n_users)
        .map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let qi: Vec<Vec<f64>> = (0..n_items)
        .map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut records = Vec::new();
    for u in 0..n_users {
        for i in 0..n_items {
            if rng.random::<f64>() < density {
                let dot: f64 = pu[u as usize].iter().zip(&qi[i as usize]).map(|(a, b)| a * b).sum();
                let noise: f64 = rng.random_range(-0.3..0.3);
                let r = (3.5 + dot + noise).clamp(1.0, 5.0);
                let day = rng.random_range(0..5);
                records.push(RatingRecord::new(u + 1, 1000 + i, r, day * 86_400 + 3600));
            }
        }
    }
    Dataset::new(records)
}

/// The ML-100K ratings file, from `FMBENCH_ML100K` or `data/ml-100k/u.data`
/// at the workspace root.
pub fn ml100k_path() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("FMBENCH_ML100K") {
        return Some(PathBuf::from(p));
    }
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data");
    p.exists().then_some(p)
}
