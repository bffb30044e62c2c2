//! Estimate the mean of an incomplete variable with every method and compare
//! with the mean of the complete values, which the synthetic survey keeps.
//!
//! cargo run --release --example estimate_mean

use treeimpute::estimators::{estimate, EstimatorConfig, Method};
use treeimpute::sim::{synthetic_survey, SurveySpec};

pub fn main() -> treeimpute::Result<()> {
    let spec = SurveySpec {
        n: 1200,
        ..SurveySpec::default()
    };
    let survey = synthetic_survey(&spec, 11)?;
    let truth = survey.y_full.iter().sum::<f64>() / survey.y_full.len() as f64;
    let missing = survey.data.column_by_name("y")?.missing_count();
    println!("n = {}, y missing in {missing} rows, complete-data mean {truth:.1}", spec.n);

    let mut config = EstimatorConfig::default();
    config.forest.n_trees = 200;
    config.gmice.m = 2;
    config.gmice.iterations = 3;
    println!("{:<7}{:>10}{:>10}{:>9}", "method", "estimate", "error", "seconds");
    for method in Method::ALL {
        let r = estimate(method, &survey.data, "y", &config)?;
        println!("{:<7}{:>10.1}{:>10.1}{:>9.2}", method.name(), r.estimate, r.estimate - truth, r.seconds);
    }
    Ok(())
}
