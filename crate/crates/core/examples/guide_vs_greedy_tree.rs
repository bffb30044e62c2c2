//! Fit the classification tree of a response's missing flag in both split
//! modes and print the two trees.
//!
//! cargo run --example guide_vs_greedy_tree

use treeimpute::dataset::derive_flag;
use treeimpute::sim::{synthetic_survey, SurveySpec};
use treeimpute::split::Mode;
use treeimpute::tree::{fit, Tree, TreeParams};
use treeimpute::TrainingSet;

pub fn main() -> treeimpute::Result<()> {
    let spec = SurveySpec {
        n: 1500,
        ..SurveySpec::default().with_shape(6, 4)
    };
    let survey = synthetic_survey(&spec, 3)?;
    let flag = derive_flag(&survey.data, "y")?;
    let set = TrainingSet::for_flag(&survey.data, &flag)?;

    for mode in [Mode::Guide, Mode::Greedy] {
        let tree = fit(&set, &TreeParams { mode, ..TreeParams::default() })?;
        let names: Vec<&str> = tree.split_variables().iter().map(|&v| survey.data.column(v).name()).collect();
        println!("{mode:?}: {} leaves, depth {}, splits on {names:?}", tree.n_leaves(), tree.depth());
        print!("{}", tree.render());

        let back = Tree::from_json(&tree.to_json()?)?;
        assert_eq!(back.render(), tree.render());
        println!();
    }
    println!("`<=*` and `in*` mark the branch that also takes missing values.");
    Ok(())
}
