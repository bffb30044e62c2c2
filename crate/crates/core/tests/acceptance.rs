//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//! A failed criterion is reported, not fatal; set `ACCEPTANCE_STRICT=1` to
//! exit non-zero when any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,3` runs a subset; `ACCEPTANCE_TRIALS` shrinks the
//! simulation study (the default is the full 500 trials).

mod common;

use std::collections::HashSet;
use std::io::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
use treeimpute::dataset::{load_csv, Column, ColumnData, Dataset};
use treeimpute::estimators::{estimate, estimate_cell_tree, ipw_estimate, EstimatorConfig, Method};
use treeimpute::gmice::{gmice_cycle, gmice_impute, initialize, pool_mean, visit_order, GmiceParams, MissingMask};
use treeimpute::rng::stream;
use treeimpute::sim::{synthetic_survey, Experiment, ExperimentConfig, ExperimentReport, SurveySpec};
use treeimpute::split::{best_ordinal_split, categorical_split, exhaustive_subset_search, select_variable, Mode, Target};
use treeimpute::tree::TreeParams;
use treeimpute::TrainingSet;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn report(id: usize, title: &str, outcome: &Outcome) {
    let mut out = std::io::stdout().lock();
    let status = if outcome.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(out, "criterion {id} [{status}] {title}: {}", outcome.detail);
}

fn note(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "    {text}");
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Instances violating the estimator's precondition (a leaf whose rows all
/// miss y) or outside the 10-40% missing range are redrawn.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let (mut accepted, mut off_rate, mut empty_leaf) = (0, 0, 0);
    let mut seed = 0u64;
    while accepted < 200 {
        seed += 1;
        let n = rng.random_range(100..=1000);
        let spec = SurveySpec {
            n,
            y_missing_rate: rng.random_range(0.08..0.32),
            ..SurveySpec::default().with_shape(rng.random_range(2..=8), rng.random_range(1..=5))
        };
        let mode = if seed % 2 == 0 { Mode::Guide } else { Mode::Greedy };
        let params = TreeParams::default().with_min_node_size(rng.random_range(5..=50));
        let survey = synthetic_survey(&spec, seed).unwrap();
        let data = &survey.data;
        let rate = data.column_by_name("y").unwrap().missing_count() as f64 / n as f64;
        if !(0.10..=0.40).contains(&rate) {
            off_rate += 1;
            continue;
        }
        let res = estimate_cell_tree(data, "y", mode, &params, true).unwrap();
        if !res.warnings.is_empty() {
            empty_leaf += 1;
            continue;
        }
        accepted += 1;
        let y = data.column_by_name("y").unwrap().ordinal_values().unwrap();
        let y_obs: Vec<f64> = res.propensities.iter().map(|&(r, _)| y[r].unwrap()).collect();
        let pi: Vec<f64> = res.propensities.iter().map(|p| p.1).collect();
        worst = worst.max(rel_err(ipw_estimate(&y_obs, &pi).unwrap(), res.estimate));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst <= 1e-12 && secs < 60.0,
        format!(
            "max relative difference {worst:.2e} over 200 instances ({off_rate} redrawn for the missing rate, {empty_leaf} for a leaf without observed y); {secs:.1}s"
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut prefix_mismatch = 0;
    let mut evaluated_mismatch = 0;
    for _ in 0..200 {
        let p = rng.random_range(2..=8u32);
        let n = rng.random_range(10..=200);
        let x: Vec<Option<u32>> = (0..n).map(|_| if rng.random_bool(0.1) { None } else { Some(rng.random_range(0..p)) }).collect();
        let bias: Vec<f64> = (0..=p).map(|_| rng.random::<f64>()).collect();
        let y: Vec<u32> = x.iter().map(|c| rng.random_bool(bias[c.unwrap_or(p) as usize]) as u32).collect();
        let levels = x.iter().collect::<HashSet<_>>().len();
        let target = || Target::Class { codes: &y, n_classes: 2 };
        let prefix = categorical_split(&x, target(), 1).unwrap();
        let exhaustive = exhaustive_subset_search(&x, target(), 1).unwrap();
        if exhaustive.evaluated != (1usize << (levels - 1)) - 1 {
            evaluated_mismatch += 1;
        }
        if !common::same_reduction(prefix.candidate.map(|c| c.reduction), exhaustive.candidate.map(|c| c.reduction)) {
            prefix_mismatch += 1;
        }
    }
    let mut ordinal_mismatch = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let q = rng.random_range(2..=4u32);
        let distinct = rng.random_range(1..=20u32);
        let x: Vec<Option<f64>> = (0..n)
            .map(|_| if rng.random_bool(0.15) { None } else { Some(rng.random_range(0..distinct) as f64) })
            .collect();
        let y: Vec<u32> = (0..n).map(|_| rng.random_range(0..q)).collect();
        let min_child = rng.random_range(1..=5);
        let found = best_ordinal_split(&x, Target::Class { codes: &y, n_classes: q as usize }, min_child).unwrap();
        let oracle = common::naive_ordinal(&x, &y, q as usize, min_child);
        if !common::same_reduction(found.map(|c| c.reduction), oracle) {
            ordinal_mismatch += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        prefix_mismatch + evaluated_mismatch + ordinal_mismatch == 0 && secs < 60.0,
        format!(
            "categorical prefix vs exhaustive: {prefix_mismatch}/200 mismatches ({evaluated_mismatch} subset-count errors); ordinal vs enumeration: {ordinal_mismatch}/200 mismatches; {secs:.2}s"
        ),
    )
}

/// Five X independent of a binary y; `c20` has 20 levels.
fn null_instance(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let cont = |rng: &mut ChaCha8Rng| (0..n).map(|_| Some(rng.random::<f64>())).collect::<Vec<_>>();
    let x1 = cont(rng);
    let x2: Vec<Option<f64>> = (0..n).map(|_| Some(rng.random_range(0..5) as f64)).collect();
    let x3: Vec<Option<f64>> = (0..n).map(|_| if rng.random_bool(0.1) { None } else { Some(rng.random::<f64>()) }).collect();
    let c2: Vec<Option<&str>> = (0..n).map(|_| Some(["a", "b"][rng.random_range(0..2)])).collect();
    let c20: Vec<Option<String>> = (0..n).map(|_| Some(format!("l{:02}", rng.random_range(0..20)))).collect();
    let y: Vec<Option<&str>> = (0..n).map(|_| Some(["no", "yes"][rng.random_range(0..2)])).collect();
    Dataset::new(vec![
        Column::ordinal("x1", x1),
        Column::ordinal("x2", x2),
        Column::ordinal("x3", x3),
        Column::categorical("c2", &c2),
        Column::categorical("c20", &c20),
        Column::categorical("y", &y),
    ])
    .unwrap()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let trials = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut guide = [0u64; 5];
    let mut greedy = [0u64; 5];
    for _ in 0..trials {
        let data = null_instance(&mut rng, 200);
        let set = TrainingSet::for_column(&data, "y").unwrap();
        if let Some(v) = select_variable(&set, Mode::Guide, 1).unwrap() {
            guide[v] += 1;
        }
        if let Some(v) = select_variable(&set, Mode::Greedy, 1).unwrap() {
            greedy[v] += 1;
        }
    }
    let total: u64 = guide.iter().sum();
    let expected = total as f64 / 5.0;
    let gof: f64 = guide.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let gof_p = ChiSquared::new(4.0).unwrap().sf(gof);
    let greedy_total: u64 = greedy.iter().sum();
    let k = greedy[4];
    // P(X >= k) under frequency 0.3.
    let binom_p = if k == 0 { 1.0 } else { Binomial::new(0.3, greedy_total).unwrap().sf(k - 1) };
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        gof_p > 0.001 && binom_p < 0.001 && secs < 300.0,
        format!(
            "guide picks {guide:?} (GOF p = {gof_p:.3}); greedy picks {greedy:?}, 20-level share {:.3} (one-sided p = {binom_p:.1e}); {secs:.1}s",
            k as f64 / greedy_total as f64
        ),
    )
}

fn criterion_6() -> Outcome {
    let spec = SurveySpec {
        n: 1152,
        ..SurveySpec::default().with_shape(420, 210)
    };
    let data = synthetic_survey(&spec, 606).unwrap().data;
    let config = EstimatorConfig::default();
    let time = |m: Method, reps: usize| -> f64 {
        let mut total = 0.0;
        for r in 0..reps {
            let mut c = config;
            c.forest.seed = r as u64;
            total += estimate(m, &data, "y", &c).unwrap().seconds;
        }
        total / reps as f64
    };
    let rrt = time(Method::Rrt, 3);
    let rct = time(Method::Rct, 3);
    let grt = time(Method::Grt, 3);
    let gct = time(Method::Gct, 3);
    let gcf = time(Method::Gcf, 1);
    let grf = time(Method::Grf, 1);
    // One chain, one cycle: a lower bound on the default m x iterations run.
    let params = GmiceParams { m: 1, iterations: 1, ..config.gmice };
    let start = Instant::now();
    let init = initialize(&data).unwrap();
    let order = visit_order(&init.mask, params.order);
    gmice_cycle(&init, &order, &params, &mut stream(0, &[0])).unwrap();
    let cycle = start.elapsed().as_secs_f64();
    let gmice_bound = cycle * (config.gmice.m * config.gmice.iterations) as f64;
    let close = |a: f64, b: f64| a.max(b) <= 3.0 * a.min(b);
    let checks = [
        ("RRT < RCT", rrt < rct),
        ("RCT <= GRT", rct <= grt),
        ("GRT ~ GCT", close(grt, gct)),
        ("GCT < GCF", gct < gcf),
        ("GCF ~ GRF", close(gcf, grf)),
        ("GRF < GMICE", grf.max(gcf) < cycle),
        ("single tree < 60 s", rrt.max(rct).max(grt).max(gct) < 60.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    note(&format!(
        "seconds: RRT {rrt:.2}, RCT {rct:.2}, GRT {grt:.2}, GCT {gct:.2}, GCF {gcf:.2}, GRF {grf:.2}, GMICE one cycle {cycle:.2} (x{} = {gmice_bound:.0} for the full run)",
        config.gmice.m * config.gmice.iterations
    ));
    Outcome::new(
        failed.is_empty(),
        if failed.is_empty() {
            "RRT < RCT <= GRT ~ GCT < GCF ~ GRF < GMICE (~ means within a factor of 3)".to_owned()
        } else {
            format!("violated: {}", failed.join(", "))
        },
    )
}

fn criterion_7() -> Outcome {
    let spec = SurveySpec {
        n: 1000,
        ..SurveySpec::default()
    };
    let data = synthetic_survey(&spec, 707).unwrap().data;
    let params = GmiceParams {
        m: 5,
        iterations: 10,
        seed: 7,
        ..GmiceParams::default()
    };
    let start = Instant::now();
    let chains = gmice_impute(&data, &params).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let mask = MissingMask::of(&data);
    let mut mask_ok = true;
    for chain in &chains {
        mask_ok &= chain.data.missing_cells() == 0 && *chain.mask == mask;
        for (orig, done) in data.columns().zip(chain.data.columns()) {
            mask_ok &= match (orig.data(), done.data()) {
                (ColumnData::Ordinal(a), ColumnData::Ordinal(b)) => {
                    a.iter().zip(b).all(|(x, y)| x.is_none() || x.map(f64::to_bits) == y.map(f64::to_bits))
                }
                (ColumnData::Categorical { codes: a, .. }, ColumnData::Categorical { codes: b, .. }) => {
                    a.iter().zip(b).all(|(x, y)| x.is_none() || x == y)
                }
                _ => false,
            };
        }
    }

    let complete = initialize(&data).unwrap().data;
    let again = gmice_impute(&complete, &GmiceParams { m: 2, iterations: 3, ..params }).unwrap();
    let fixed = again.iter().all(|c| c.data == complete);

    let pooled = pool_mean(&chains, "y").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let schema = data.schema();
    let mut means = Vec::new();
    for (k, chain) in chains.iter().enumerate() {
        let path = dir.path().join(format!("chain_{k}.csv"));
        chain.save(&path, dir.path().join(format!("mask_{k}.csv"))).unwrap();
        let back = load_csv(&path, &schema).unwrap();
        let y = back.column_by_name("y").unwrap().ordinal_values().unwrap().to_vec();
        means.push(y.iter().map(|v| v.unwrap()).sum::<f64>() / y.len() as f64);
    }
    let external = means.iter().sum::<f64>() / means.len() as f64;
    let pool_err = rel_err(external, pooled);
    Outcome::new(
        secs < 300.0 && mask_ok && fixed && pool_err <= 1e-12,
        format!(
            "5 chains x 10 cycles on {} rows x {} columns in {secs:.1}s; mask preserved: {mask_ok}; complete input fixed: {fixed}; pooled {pooled:.4} vs recomputed {external:.4} (rel. diff {pool_err:.1e})",
            data.n_rows(),
            data.n_cols()
        ),
    )
}

fn study_config(trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        methods: vec![Method::Sim, Method::Gct, Method::Grt, Method::Gcf, Method::Grf],
        fractions: vec![0.05, 0.10, 0.25],
        trials,
        seed: 4609,
        ..ExperimentConfig::default()
    }
}

fn criterion_9(exp: &Experiment) -> Outcome {
    let data = exp.data();
    let y_col = data.column_index("y").unwrap();
    // Truncation on the study population and on one built to hit zero often.
    let mut negatives = 0usize;
    let mut zeros = [0usize; 2];
    for t in 0..50u64 {
        let p1 = exp.step_one().generate(data, &mut stream(909, &[t])).unwrap();
        let y = p1.data.column(y_col).ordinal_values().unwrap();
        negatives += y.iter().filter(|v| v.is_none_or(|v| v < 0.0)).count();
        zeros[0] += y.iter().filter(|v| **v == Some(0.0)).count();
    }
    let low = {
        let x: Vec<Option<f64>> = (0..500).map(|i| Some((i % 10) as f64)).collect();
        let y: Vec<Option<f64>> = (0..500).map(|i| if i % 2 == 0 { None } else { Some(((i * 7) % 5) as f64) }).collect();
        Dataset::new(vec![Column::ordinal("x", x), Column::ordinal("y", y)]).unwrap()
    };
    let step = treeimpute::sim::StepOne::fit(&low, "y", &treeimpute::forest::ForestParams::default().with_trees(50), true).unwrap();
    for t in 0..50u64 {
        let p1 = step.generate(&low, &mut stream(910, &[t])).unwrap();
        let y = p1.data.column(1).ordinal_values().unwrap();
        negatives += y.iter().filter(|v| v.is_none_or(|v| v < 0.0)).count();
        zeros[1] += y.iter().filter(|v| **v == Some(0.0)).count();
    }

    // X cells of P2 against the source.
    let p1 = exp.step_one().generate(data, &mut stream(911, &[0])).unwrap();
    let mut x_identical = true;
    let mut p2 = exp.step_two().generate(&p1, &mut stream(911, &[1])).unwrap();
    for (c, col) in data.columns().enumerate() {
        if c == y_col {
            continue;
        }
        x_identical &= match (col.data(), p2.data.column(c).data()) {
            (ColumnData::Ordinal(a), ColumnData::Ordinal(b)) => a.iter().zip(b).all(|(x, y)| x.map(f64::to_bits) == y.map(f64::to_bits)),
            (a, b) => a == b,
        };
    }

    // Masking frequencies over redraws.
    let q = exp.step_two().probabilities();
    let draws = 10_000u32;
    let mut hits = vec![0u32; q.len()];
    let mut rng = stream(912, &[0]);
    for _ in 0..draws {
        p2 = exp.step_two().generate(&p1, &mut rng).unwrap();
        for (h, &m) in hits.iter_mut().zip(&p2.masked) {
            *h += m as u32;
        }
    }
    let mut beyond3 = 0usize;
    let mut worst: f64 = 0.0;
    for (&h, &qi) in hits.iter().zip(q) {
        let sd = (draws as f64 * qi * (1.0 - qi)).sqrt();
        let dev = (h as f64 - draws as f64 * qi).abs();
        if sd == 0.0 {
            if dev > 0.0 {
                beyond3 += 1;
                worst = f64::INFINITY;
            }
            continue;
        }
        worst = worst.max(dev / sd);
        if dev > 3.0 * sd {
            beyond3 += 1;
        }
    }
    // With many rows a few exceed 3 SE by chance (rate 0.27%); require the
    // count to be consistent with that rate.
    let rows = q.len() as u64;
    let allowed = (0..=rows).find(|&k| Binomial::new(0.0027, rows).unwrap().sf(k) < 0.001).unwrap();
    let masking_ok = beyond3 as u64 <= allowed;
    Outcome::new(
        negatives == 0 && x_identical && masking_ok,
        format!(
            "{negatives} negative values in 100 completed populations (zeros: {} study, {} low-mean); P2 X cells bit-identical: {x_identical}; {beyond3}/{rows} rows beyond 3 SE over {draws} redraws (allowed {allowed}, largest {worst:.2} SE)",
            zeros[0], zeros[1]
        ),
    )
}

fn bias_check(report: &ExperimentReport) -> (bool, Vec<String>) {
    let mut ok = true;
    let mut lines = Vec::new();
    for &f in &report.fractions {
        let sim = report.summary(Method::Sim, f).and_then(|s| s.stats.clone());
        let Some(sim) = sim else {
            return (false, vec![format!("no SIM results at {f}")]);
        };
        let sim_ok = sim.bias.abs() > 3.0 * sim.bias_se;
        ok &= sim_ok;
        let mut parts = vec![format!("SIM {:.1} ({:.1})", sim.bias, sim.bias_se)];
        for m in [Method::Gct, Method::Grt, Method::Gcf, Method::Grf] {
            let Some(s) = report.summary(m, f).and_then(|s| s.stats.clone()) else {
                ok = false;
                parts.push(format!("{m} missing"));
                continue;
            };
            let pass = s.bias.abs() <= 3.0 * s.bias_se || s.bias.abs() < sim.bias.abs();
            ok &= pass;
            parts.push(format!("{m} {:.1} ({:.1}){}", s.bias, s.bias_se, if pass { "" } else { " !" }));
        }
        lines.push(format!("fraction {f}: bias (se) {}", parts.join(", ")));
    }
    (ok, lines)
}

fn rmse_check(report: &ExperimentReport) -> Outcome {
    let rmse = |m| report.summary(m, 0.25).and_then(|s| s.stats.as_ref().map(|s| s.rmse)).unwrap_or(f64::NAN);
    let (grf, grt, gcf, gct) = (rmse(Method::Grf), rmse(Method::Grt), rmse(Method::Gcf), rmse(Method::Gct));
    Outcome::new(
        grf <= grt && gcf <= gct,
        format!("RMSE at 25%: GRF {grf:.1} vs GRT {grt:.1}; GCF {gcf:.1} vs GCT {gct:.1}"),
    )
}

fn main() {
    let only: Option<HashSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |id: usize| only.as_ref().is_none_or(|o| o.contains(&id));
    let trials: usize = std::env::var("ACCEPTANCE_TRIALS").ok().and_then(|s| s.parse().ok()).unwrap_or(500);
    let threads = rayon::current_num_threads();
    note(&format!("{threads} worker thread(s)"));

    let mut failed = Vec::new();
    let mut record = |id: usize, title: &str, o: Outcome| {
        report(id, title, &o);
        if !o.pass {
            failed.push(id);
        }
    };

    if wanted(1) {
        record(1, "GCT imputation equals leaf-propensity IPW", criterion_1());
    }
    if wanted(2) {
        record(2, "split searches match their oracles", criterion_2());
    }
    if wanted(3) {
        record(3, "variable selection bias under the null", criterion_3());
    }
    if wanted(7) {
        record(7, "chained imputation contract", criterion_7());
    }
    if wanted(6) {
        record(6, "timing order at n = 1152, p = 630", criterion_6());
    }

    let study = [4, 5, 8, 9].into_iter().any(wanted);
    if study {
        let survey = synthetic_survey(&SurveySpec::default(), 2024).unwrap();
        let start = Instant::now();
        let experiment = Experiment::prepare(&survey.data, study_config(trials)).unwrap();
        note(&format!(
            "study population: {} rows, {} X; generation forests fitted in {:.1}s",
            survey.data.n_rows(),
            survey.data.n_cols() - 1,
            start.elapsed().as_secs_f64()
        ));
        if wanted(9) {
            record(9, "population generation contracts", criterion_9(&experiment));
        }
        if [4, 5, 8].into_iter().any(wanted) {
            let start = Instant::now();
            let first = experiment.run().unwrap();
            let secs = start.elapsed().as_secs_f64();
            note(&format!("{trials} trials in {:.1} min on {threads} thread(s)", secs / 60.0));
            for line in first.render().lines() {
                note(line);
            }
            if wanted(4) {
                let (ok, lines) = bias_check(&first);
                for l in &lines {
                    note(l);
                }
                record(
                    4,
                    "bias of the tree and forest estimators",
                    Outcome::new(ok, format!("{trials} trials, {:.1} min; SIM biased, others unbiased or smaller than SIM", secs / 60.0)),
                );
            }
            if wanted(5) {
                record(5, "forests beat their single trees in RMSE", rmse_check(&first));
            }
            if wanted(8) {
                let mut order: Vec<usize> = (0..trials).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(808));
                let second = experiment.run_with_order(&order).unwrap();
                let a = first.canonical_json().unwrap();
                let b = second.canonical_json().unwrap();
                let same_records = first.records.len() == second.records.len()
                    && first.records.iter().zip(&second.records).all(|(x, y)| {
                        x.trial == y.trial && x.mu.to_bits() == y.mu.to_bits() && x.muhat.map(f64::to_bits) == y.muhat.map(f64::to_bits)
                    });
                record(
                    8,
                    "simulation reproducibility",
                    Outcome::new(
                        a == b && same_records,
                        format!("second run with shuffled trial order: reports byte-identical: {}, records identical: {same_records}", a == b),
                    ),
                );
            }
        }
    }

    if !failed.is_empty() {
        let _ = writeln!(std::io::stdout().lock(), "failed criteria: {failed:?}");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
