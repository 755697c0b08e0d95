mod common;

use common::checks;
use morphoforge::attribution::*;
use morphoforge::rng::rng_from_seed;
use morphoforge::trees::{fit_forest, ForestParams};

#[test]
fn local_accuracy_on_fitted_models() {
    checks::shap_local_accuracy().unwrap();
}

#[test]
fn tree_shap_matches_brute_force() {
    checks::shap_brute_force().unwrap();
}

#[test]
fn unused_features_get_zero() {
    let mut rng = rng_from_seed(3);
    for _ in 0..50 {
        let tree = common::random_tree(&mut rng, 3, 3);
        // features 3..6 never appear in the tree
        let row = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let e = tree_shap(&tree, &row).unwrap();
        assert!(e.values[3..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn ranking_orders_by_mean_abs() {
    let (x, y) = checks::random_instance(31);
    let m = fit_forest(&x, &y, &ForestParams { n_estimators: 10, ..ForestParams::default() }).unwrap();
    let ex = shap_matrix(&m, &x).unwrap();
    let names: Vec<String> = (0..x.n_cols()).map(|i| format!("f{i}")).collect();
    let r = importance_ranking(&ex, &names);
    assert_eq!(r.len(), x.n_cols());
    assert!(r.windows(2).all(|w| w[0].mean_abs_shap >= w[1].mean_abs_shap));
    let csv = ranking_csv(&r);
    assert!(csv.starts_with("feature,mean_abs_shap,rank\n"));
    assert!(csv.lines().nth(1).unwrap().ends_with(",1"));
}

#[test]
fn dimension_mismatch() {
    let (x, y) = checks::random_instance(2);
    let m = fit_forest(&x, &y, &ForestParams { n_estimators: 2, ..ForestParams::default() }).unwrap();
    assert!(matches!(
        shap_values(&m, &vec![0.0; x.n_cols() + 1]),
        Err(AttributionError::DimensionMismatch { .. })
    ));
}
