mod common;

use common::checks;
use morphoforge::data::Matrix;
use morphoforge::trees::*;
use proptest::prelude::*;

#[test]
fn root_split_matches_exhaustive_search() {
    checks::root_splits(50).unwrap();
}

#[test]
fn forest_probability_is_member_mean() {
    checks::forest_is_member_mean().unwrap();
}

#[test]
fn boosted_log_loss_never_increases() {
    checks::boosting_loss_monotone().unwrap();
}

#[test]
fn forest_is_deterministic_in_seed() {
    let (x, y) = checks::random_instance(21);
    let p = ForestParams {
        n_estimators: 15,
        seed: 8,
        ..ForestParams::default()
    };
    let a = fit_forest(&x, &y, &p).unwrap();
    let b = fit_forest(&x, &y, &p).unwrap();
    assert_eq!(a, b);
    let c = fit_forest(&x, &y, &ForestParams { seed: 9, ..p }).unwrap();
    assert_ne!(a.trees, c.trees);
}

#[test]
fn boosted_learns_xor() {
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|i| vec![(i % 2) as f64, ((i / 2) % 2) as f64])
        .collect();
    let y: Vec<bool> = rows.iter().map(|r| (r[0] > 0.5) != (r[1] > 0.5)).collect();
    let x = Matrix::from_rows(&rows);
    let m = fit_boosted(
        &x,
        &y,
        &BoostParams {
            n_estimators: 50,
            learning_rate: 0.3,
            max_depth: 2,
            ..BoostParams::default()
        },
    )
    .unwrap();
    assert_eq!(evaluate(&m, &x, &y).unwrap().accuracy, 1.0);
}

#[test]
fn model_json_round_trip() {
    let (x, y) = checks::random_instance(4);
    let m = fit_boosted(&x, &y, &BoostParams { n_estimators: 5, ..BoostParams::default() }).unwrap();
    let back = EnsembleModel::from_json(&m.to_json().unwrap()).unwrap();
    assert_eq!(m, back);
    for r in x.rows() {
        assert_eq!(m.predict(r).unwrap(), back.predict(r).unwrap());
    }
}

#[test]
fn malformed_tree_json_is_rejected() {
    // child index pointing back at the root
    let bad = r#"{"feature":[0,-1,-1],"threshold":[0.5,0,0],"left":[0,0,0],"right":[2,0,0],"value":[0,1,2],"cover":[2,1,1]}"#;
    assert!(serde_json::from_str::<Tree>(bad).is_err());
}

#[test]
fn shape_errors() {
    let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]);
    assert!(matches!(
        fit_tree(&x, &[true], &TreeParams::default(), 0),
        Err(TreeError::LengthMismatch { .. })
    ));
    let m = fit_forest(&x, &[true, false], &ForestParams { n_estimators: 2, ..ForestParams::default() }).unwrap();
    assert!(matches!(m.predict(&[1.0, 2.0]), Err(TreeError::DimensionMismatch { .. })));
}

#[test]
fn threshold_balances_precision_and_recall() {
    let scores = [0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9];
    let labels = [false, false, true, false, true, false, true, true];
    let t = tune_threshold_scores(&scores, &labels).unwrap();
    let pred: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
    let m = Metrics::from_predictions(&pred, &labels);
    assert!((m.precision - m.recall).abs() < 1e-12, "{m:?} at {t}");
}

#[test]
fn grid_search_picks_informative_setting() {
    let (x, y) = checks::boosting_set();
    let grid = ParamGrid::Boosted(BoostGrid {
        n_estimators: vec![30],
        learning_rate: vec![0.3],
        max_depth: vec![1, 3],
        gamma: vec![0.0],
        colsample_bytree: vec![1.0],
        reg_lambda: 1.0,
        min_child_weight: 0.0,
    });
    let r = grid_search_cv(&x, &y, &grid, 3, 1).unwrap();
    assert_eq!(r.table.len(), 2);
    // xor needs depth >= 2
    match r.best {
        ModelParams::Boosted(p) => assert_eq!(p.max_depth, 3),
        other => panic!("{other:?}"),
    }
    let again = grid_search_cv(&x, &y, &grid, 3, 1).unwrap();
    assert_eq!(r, again);
}

#[test]
fn stratified_folds_balance_classes() {
    let y: Vec<bool> = (0..53).map(|i| i % 4 == 0).collect();
    let folds = stratified_folds(&y, 5, 3);
    for f in 0..5 {
        let pos = (0..y.len()).filter(|&i| folds[i] == f && y[i]).count();
        assert!((2..=3).contains(&pos), "fold {f} has {pos} positives");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_leaves_partition_training_rows(seed in 0u64..1000, depth in 1usize..6) {
        let (x, y) = checks::random_instance(seed);
        let t = fit_tree(&x, &y, &TreeParams { max_depth: Some(depth), ..TreeParams::default() }, seed).unwrap();
        prop_assert!(t.depth() <= depth);
        let root = t.nodes()[0].cover;
        prop_assert_eq!(root, y.len() as f64);
        for n in t.nodes() {
            if let Some(s) = n.split {
                prop_assert_eq!(t.nodes()[s.left].cover + t.nodes()[s.right].cover, n.cover);
            } else {
                prop_assert!((0.0..=1.0).contains(&n.value));
            }
        }
    }

    #[test]
    fn max_leaf_nodes_is_respected(seed in 0u64..1000, leaves in 2usize..12) {
        let (x, y) = checks::random_instance(seed);
        let t = fit_tree(&x, &y, &TreeParams { max_leaf_nodes: Some(leaves), ..TreeParams::default() }, 0).unwrap();
        prop_assert!(t.n_leaves() <= leaves);
    }

    #[test]
    fn probabilities_are_in_unit_interval(seed in 0u64..200) {
        let (x, y) = checks::random_instance(seed);
        let m = fit_boosted(&x, &y, &BoostParams { n_estimators: 10, seed, ..BoostParams::default() }).unwrap();
        for r in x.rows() {
            let p = m.predict_proba(r).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
