#![allow(dead_code)]

use treeimpute::sim::{synthetic_survey, SurveySpec, SyntheticSurvey};

/// Small mixed survey: 4 ordinal and 3 categorical X plus `y`.
pub fn small_spec(n: usize) -> SurveySpec {
    SurveySpec {
        n,
        p_ordinal: 4,
        p_categorical: 3,
        levels: vec![3, 6, 12],
        y_vars: vec![0, 1, 4],
        y_coef: vec![500.0, 300.0, 200.0],
        propensity_vars: vec![0, 4],
        propensity_coef: vec![1.0, 0.7],
        y_missing_rate: 0.3,
        ..SurveySpec::default()
    }
}

pub fn small_survey(n: usize, seed: u64) -> SyntheticSurvey {
    synthetic_survey(&small_spec(n), seed).unwrap()
}

/// Node impurity as a total: n * gini.
pub fn gini_total(counts: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    if n <= 0.0 {
        return 0.0;
    }
    (n - counts.iter().map(|c| c * c).sum::<f64>() / n).max(0.0)
}

pub fn class_counts(y: &[u32], rows: impl Iterator<Item = usize>, q: usize) -> Vec<f64> {
    let mut c = vec![0.0; q];
    for r in rows {
        c[y[r] as usize] += 1.0;
    }
    c
}

/// Every threshold between distinct observed values with the missing block on
/// either side, plus observed-vs-missing.
pub fn naive_ordinal(x: &[Option<f64>], y: &[u32], q: usize, min_child: usize) -> Option<f64> {
    let n = x.len();
    let parent = gini_total(&class_counts(y, 0..n, q));
    let mut vals: Vec<f64> = x.iter().flatten().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let any_missing = x.iter().any(Option::is_none);
    let mut best: Option<f64> = None;
    let mut try_split = |goes_left: &dyn Fn(usize) -> bool| {
        let left: Vec<usize> = (0..n).filter(|&r| goes_left(r)).collect();
        let right: Vec<usize> = (0..n).filter(|&r| !goes_left(r)).collect();
        if left.len() < min_child || right.len() < min_child || left.is_empty() || right.is_empty() {
            return;
        }
        let red = parent - gini_total(&class_counts(y, left.into_iter(), q)) - gini_total(&class_counts(y, right.into_iter(), q));
        if best.is_none_or(|b| red > b) {
            best = Some(red);
        }
    };
    for &v in vals.iter().take(vals.len().saturating_sub(1)) {
        try_split(&|r| x[r].is_some_and(|a| a <= v));
        if any_missing {
            try_split(&|r| x[r].is_none_or(|a| a <= v));
        }
    }
    if any_missing && !vals.is_empty() {
        try_split(&|r| x[r].is_some());
    }
    best
}

/// Equal up to the rounding of differently ordered sums.
pub fn same_reduction(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0),
        (None, None) => true,
        _ => false,
    }
}
