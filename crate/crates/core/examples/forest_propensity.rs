//! Response propensities from a classification forest of the missing flag,
//! scored in-sample and out-of-bag, and the weighting estimates they give.
//!
//! cargo run --release --example forest_propensity

use treeimpute::dataset::derive_flag;
use treeimpute::estimators::{estimate_cell_forest, estimate_sim};
use treeimpute::forest::{fit_forest, ForestParams};
use treeimpute::sim::{synthetic_survey, SurveySpec};
use treeimpute::TrainingSet;

fn summary(p: &[f64]) -> String {
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!("mean {mean:.3}, range [{min:.3}, {max:.3}]")
}

pub fn main() -> treeimpute::Result<()> {
    let spec = SurveySpec {
        n: 1000,
        ..SurveySpec::default()
    };
    let survey = synthetic_survey(&spec, 5)?;
    let data = &survey.data;
    let params = ForestParams::default().with_trees(200).with_seed(9);

    let flag = derive_flag(data, "y")?;
    let set = TrainingSet::for_flag(data, &flag)?;
    let forest = fit_forest(&set, &params)?;
    let observed: Vec<usize> = (0..data.n_rows()).filter(|&r| !flag.flags[r].eq(&treeimpute::dataset::Flag::Missing)).collect();
    let in_sample: Vec<f64> = forest.predict_proba_rows(data, &observed).iter().map(|p| p[0]).collect();
    let oob: Vec<f64> = forest.oob_predict_proba(&set, &observed).iter().map(|p| p[0]).collect();
    let actual: Vec<f64> = observed.iter().map(|&r| 1.0 - survey.y_missing_prob[r]).collect();
    println!("true response probability  {}", summary(&actual));
    println!("in-sample forest estimate  {}", summary(&in_sample));
    println!("out-of-bag forest estimate {}", summary(&oob));

    let truth = survey.y_full.iter().sum::<f64>() / survey.y_full.len() as f64;
    let sim = estimate_sim(data, "y")?.estimate;
    let a = estimate_cell_forest(data, "y", &params, 0.01, false, false)?.estimate;
    let b = estimate_cell_forest(data, "y", &params, 0.01, true, false)?.estimate;
    println!("complete-data mean {truth:.1}; observed mean {sim:.1}; weighted in-sample {a:.1}; weighted out-of-bag {b:.1}");
    Ok(())
}
