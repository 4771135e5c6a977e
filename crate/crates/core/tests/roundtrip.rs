mod common;

use common::synthetic_ratings;
use fmbench::checkpoint::{load_model, save_model};
use fmbench::featurize::{
    build_implicit_index, fit_vocabulary, FeatureBuilder, ImplicitWeighting, ModelVariant,
};
use fmbench::ingest::{parse_fm_text, parse_movielens, write_fm_text, write_movielens};
use fmbench::mcmc::{gibbs_train, McmcConfig};
use fmbench::model::init_model;
use fmbench::types::{Dataset, RatingRecord};
use proptest::prelude::*;

fn record() -> impl Strategy<Value = RatingRecord> {
    (1i64..500, 1i64..900, 1u8..=10, 0i64..2_000_000_000)
        .prop_map(|(u, i, r, t)| RatingRecord::new(u, i, r as f64 / 2.0, t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn movielens_files_round_trip(records in prop::collection::vec(record(), 1..60), delim in prop::sample::select(vec!["::", "\t", ","])) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ratings");
        let data = Dataset::new(records);
        write_movielens(&path, &data, delim).unwrap();
        prop_assert_eq!(parse_movielens(&path, delim).unwrap(), data);
    }
}

#[test]
fn exported_features_parse_back_exactly() {
    let data = synthetic_ratings(15, 12, 0.4, 2);
    let dir = tempfile::tempdir().unwrap();
    for variant in [ModelVariant::MF, ModelVariant::SVDPP, ModelVariant::TIME_SVDPP_FLIPPED] {
        let vocab = fit_vocabulary(&data, variant, &data);
        let n_cols = vocab.n_cols();
        let m = FeatureBuilder::new(vocab, &build_implicit_index(&data), ImplicitWeighting::InvSqrt)
            .unwrap()
            .build(&data)
            .unwrap();
        let rows: Vec<_> = m.rows().collect();
        let path = dir.path().join(format!("{variant}.txt"));
        write_fm_text(&path, &rows).unwrap();
        let back = parse_fm_text(&path).unwrap();
        assert!(back.warnings.is_empty(), "{:?}", back.warnings);
        assert_eq!(back.rows, rows);
        assert!(back.n_cols <= n_cols);
    }
}

#[test]
fn trained_model_checkpoint_round_trips() {
    let data = synthetic_ratings(10, 10, 0.5, 4);
    let vocab = fit_vocabulary(&data, ModelVariant::SVDPP, &data);
    let m = FeatureBuilder::new(vocab, &build_implicit_index(&data), ImplicitWeighting::InvSqrt)
        .unwrap()
        .build(&data)
        .unwrap();
    let model = init_model(m.n_cols(), 3, m.groups().to_vec(), 1, 0.1).unwrap();
    let out = gibbs_train(&m, &m, model, &McmcConfig { steps: 5, ..McmcConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.fmb");
    save_model(&path, &out.model).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, out.model);
    assert_eq!(back.predict_matrix(&m).unwrap(), out.model.predict_matrix(&m).unwrap());
}
