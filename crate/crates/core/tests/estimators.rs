mod common;

use proptest::prelude::*;
use treeimpute::dataset::{Column, Dataset};
use treeimpute::estimators::{
    completed_mean, estimate, estimate_cell_forest, estimate_cell_tree, estimate_reg_forest, estimate_sim, ipw_estimate, EstimatorConfig,
    Method,
};
use treeimpute::forest::ForestParams;
use treeimpute::split::Mode;
use treeimpute::tree::TreeParams;

fn observed_y(data: &Dataset) -> Vec<(usize, f64)> {
    let y = data.column_by_name("y").unwrap().ordinal_values().unwrap();
    y.iter().enumerate().filter_map(|(r, v)| v.map(|v| (r, v))).collect()
}

proptest! {
    #[test]
    fn ipw_is_a_weighted_mean(pairs in prop::collection::vec((-1e4f64..1e4, 0.01f64..=1.0), 1..100)) {
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let pi: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let w: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
        let expected = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
        let got = ipw_estimate(&y, &pi).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(got >= lo - 1e-9 && got <= hi + 1e-9);
    }

    #[test]
    fn equal_propensities_give_the_observed_mean(y in prop::collection::vec(-1e4f64..1e4, 1..100), p in 0.05f64..=1.0) {
        let got = ipw_estimate(&y, &vec![p; y.len()]).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        prop_assert!((got - mean).abs() <= 1e-9 * mean.abs().max(1.0));
    }

    #[test]
    fn completed_mean_pools_both_parts(a in prop::collection::vec(-1e4f64..1e4, 0..50), b in prop::collection::vec(-1e4f64..1e4, 0..50)) {
        prop_assume!(!a.is_empty() || !b.is_empty());
        let all: Vec<f64> = a.iter().chain(&b).copied().collect();
        let expected = all.iter().sum::<f64>() / all.len() as f64;
        prop_assert!((completed_mean(&a, &b).unwrap() - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Imputing leaf means and weighting by leaf response rates give the
    /// same estimate when every leaf has an observed row.
    #[test]
    fn cell_tree_imputation_equals_leaf_weighting(seed in any::<u64>(), n in 100usize..500, min_node in 5usize..60, mode in prop_oneof![Just(Mode::Guide), Just(Mode::Greedy)]) {
        let s = common::small_survey(n, seed);
        let params = TreeParams::default().with_min_node_size(min_node);
        let res = estimate_cell_tree(&s.data, "y", mode, &params, true).unwrap();
        prop_assume!(res.warnings.is_empty());
        let obs = observed_y(&s.data);
        prop_assert_eq!(res.propensities.len(), obs.len());
        let y: Vec<f64> = obs.iter().map(|o| o.1).collect();
        let pi: Vec<f64> = res.propensities.iter().map(|p| p.1).collect();
        let ipw = ipw_estimate(&y, &pi).unwrap();
        prop_assert!((ipw - res.estimate).abs() <= 1e-12 * res.estimate.abs());
    }
}

fn no_split_forest(bootstrap: bool) -> ForestParams {
    ForestParams {
        n_trees: 15,
        bootstrap,
        tree: TreeParams::default().with_min_node_size(100_000),
        seed: 3,
    }
}

#[test]
fn stumps_reduce_to_the_observed_mean() {
    let s = common::small_survey(300, 12);
    let sim = estimate_sim(&s.data, "y").unwrap().estimate;
    for out_of_bag in [false, true] {
        let gcf = estimate_cell_forest(&s.data, "y", &no_split_forest(false), 0.01, out_of_bag, false).unwrap();
        assert!((gcf.estimate - sim).abs() <= 1e-12 * sim.abs(), "{} vs {sim}", gcf.estimate);
    }
    let gcf = estimate_cell_forest(&s.data, "y", &no_split_forest(true), 0.01, false, false).unwrap();
    assert!((gcf.estimate - sim).abs() <= 1e-12 * sim.abs());
    let grf = estimate_reg_forest(&s.data, "y", &no_split_forest(false), false).unwrap();
    assert!((grf.estimate - sim).abs() <= 1e-12 * sim.abs());
}

#[test]
fn forest_propensities_are_floored() {
    // y is observed only where x > 0, except for a handful of rows.
    let x: Vec<Option<f64>> = (0..400).map(|i| Some(i as f64 - 200.0)).collect();
    let y: Vec<Option<f64>> = (0..400).map(|i| if i >= 200 || i % 40 == 0 { Some(i as f64) } else { None }).collect();
    let data = Dataset::new(vec![Column::ordinal("x", x), Column::ordinal("y", y)]).unwrap();
    let params = ForestParams::default().with_trees(20).with_seed(1);
    let floor = 0.3;
    let res = estimate_cell_forest(&data, "y", &params, floor, true, true).unwrap();
    let min = res.propensities.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    assert_eq!(min, floor);
    assert!(res.propensities.iter().all(|p| p.1 <= 1.0));
    assert!(estimate_cell_forest(&data, "y", &params, 0.0, true, false).is_err());
}

#[test]
fn every_method_runs_on_a_mixed_sample() {
    let s = common::small_survey(300, 21);
    let mut config = EstimatorConfig::default();
    config.forest.n_trees = 20;
    config.gmice.m = 2;
    config.gmice.iterations = 2;
    let lo = s.y_full.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.y_full.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for m in Method::ALL {
        let r = estimate(m, &s.data, "y", &config).unwrap();
        assert_eq!(r.method, m);
        assert!(r.estimate > lo && r.estimate < hi, "{m}: {}", r.estimate);
    }
    assert!(estimate(Method::Oracle, &s.data, "y", &config).is_err());
}

#[test]
fn missing_response_values_are_required_to_be_ordinal() {
    let data = Dataset::new(vec![Column::ordinal("x", vec![Some(1.0), Some(2.0)]), Column::categorical("y", &[Some("a"), None])]).unwrap();
    assert!(estimate_sim(&data, "y").is_err());
    let all_missing = Dataset::new(vec![Column::ordinal("x", vec![Some(1.0), Some(2.0)]), Column::ordinal("y", vec![None, None])]).unwrap();
    assert!(estimate_sim(&all_missing, "y").is_err());
}
