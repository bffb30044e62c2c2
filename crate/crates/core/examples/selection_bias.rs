//! Which variable does the root split use when nothing predicts the
//! response? Exhaustive search favors the 20-level categorical; the
//! chi-squared screen spreads its choices evenly.
//!
//! cargo run --release --example selection_bias

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treeimpute::dataset::{Column, Dataset};
use treeimpute::split::{select_variable, Mode};
use treeimpute::TrainingSet;

fn null_data(rng: &mut impl Rng, n: usize) -> treeimpute::Result<Dataset> {
    let ordinal = |rng: &mut dyn rand::RngCore| (0..n).map(|_| Some(rng.random::<f64>())).collect::<Vec<_>>();
    let levels = |rng: &mut dyn rand::RngCore, k: u32| (0..n).map(|_| Some(format!("v{}", rng.random_range(0..k)))).collect::<Vec<_>>();
    Dataset::new(vec![
        Column::ordinal("u1", ordinal(rng)),
        Column::ordinal("u2", ordinal(rng)),
        Column::categorical("c3", &levels(rng, 3)),
        Column::categorical("c5", &levels(rng, 5)),
        Column::categorical("c20", &levels(rng, 20)),
        Column::categorical("y", &levels(rng, 2)),
    ])
}

pub fn main() -> treeimpute::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut counts = [[0u32; 5]; 2];
    let trials = 400;
    for _ in 0..trials {
        let data = null_data(&mut rng, 200)?;
        let set = TrainingSet::for_column(&data, "y")?;
        for (i, mode) in [Mode::Guide, Mode::Greedy].into_iter().enumerate() {
            if let Some(v) = select_variable(&set, mode, 1)? {
                counts[i][v] += 1;
            }
        }
    }
    println!("{:<8}{:>6}{:>6}{:>6}{:>6}{:>6}", "mode", "u1", "u2", "c3", "c5", "c20");
    for (name, row) in ["guide", "greedy"].iter().zip(counts) {
        print!("{name:<8}");
        for c in row {
            print!("{:>6.2}", c as f64 / trials as f64);
        }
        println!();
    }
    Ok(())
}
