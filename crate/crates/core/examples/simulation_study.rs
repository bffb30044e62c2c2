//! A small simulation study: complete the response with a regression forest,
//! re-mask it with a classification forest, then sample and estimate in each
//! trial.
//!
//! cargo run --release --example simulation_study

use treeimpute::estimators::Method;
use treeimpute::forest::ForestParams;
use treeimpute::sim::{synthetic_survey, Experiment, ExperimentConfig, SurveySpec};

pub fn main() -> treeimpute::Result<()> {
    let spec = SurveySpec {
        n: 1500,
        ..SurveySpec::default()
    };
    let survey = synthetic_survey(&spec, 8)?;
    let mut config = ExperimentConfig {
        fractions: vec![0.1, 0.25],
        methods: vec![Method::Oracle, Method::Sim, Method::Gct, Method::Grt, Method::Gcf, Method::Grf],
        trials: 8,
        seed: 99,
        population_forest: ForestParams::default().with_trees(100),
        ..ExperimentConfig::default()
    };
    config.estimators.forest.n_trees = 100;

    let experiment = Experiment::prepare(&survey.data, config)?;
    println!("residual sd of the completion forest: {:.1}", experiment.step_one().sigma());
    let report = experiment.run()?;
    print!("{}", report.render());

    let reversed: Vec<usize> = (0..report.trials).rev().collect();
    let again = experiment.run_with_order(&reversed)?;
    assert_eq!(report.canonical_json()?, again.canonical_json()?);
    println!("rerun in reverse trial order gives the same report");
    Ok(())
}
