use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn treeimpute(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treeimpute"))
        .args(args)
        .env_remove("TREEIMPUTE_THREADS")
        .output()
        .expect("run treeimpute")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn data_args() -> Vec<String> {
    vec![
        "--data".into(),
        fixture("households.csv").display().to_string(),
        "--schema".into(),
        fixture("households.schema").display().to_string(),
    ]
}

fn run(args: Vec<String>) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    treeimpute(&refs)
}

#[test]
fn tree_rendering_matches_the_golden_file() {
    let mut args = vec!["inspect".to_owned()];
    args.extend(data_args());
    args.extend(["--y", "spend", "--min-node-size", "20"].map(String::from));
    let out = run(args);
    assert!(out.status.success());
    let golden = std::fs::read_to_string(fixture("households_tree.txt")).unwrap();
    assert_eq!(stdout(&out), golden);
}

#[test]
fn saved_trees_render_the_same() {
    let dir = tempfile::tempdir().unwrap();
    let saved = dir.path().join("tree.json");
    let mut args = vec!["inspect".to_owned()];
    args.extend(data_args());
    args.extend(["--y", "spend", "--min-node-size", "20", "--save"].map(String::from));
    args.push(saved.display().to_string());
    assert!(run(args).status.success());
    let out = treeimpute(&["inspect", saved.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), std::fs::read_to_string(fixture("households_tree.txt")).unwrap());
}

#[test]
fn estimate_writes_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["estimate".to_owned()];
    args.extend(data_args());
    args.extend(["--y", "spend", "--method", "sim,gct,rct,grt,rrt,gcf,grf", "--set", "forest.n_trees=20", "--out"].map(String::from));
    args.push(dir.path().display().to_string());
    let out = run(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.ends_with(",OK")));
    for m in ["sim", "gct", "rct", "grt", "rrt", "gcf", "grf"] {
        assert!(dir.path().join(format!("{m}.json")).exists());
    }
    assert_eq!(stdout(&out).lines().count(), 8);
}

#[test]
fn failures_become_fail_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["estimate".to_owned()];
    args.extend(data_args());
    args.extend(["--y", "tenure", "--method", "sim,gcf", "--out"].map(String::from));
    args.push(dir.path().display().to_string());
    let out = run(args);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
    assert!(csv.contains("SIM,,,FAIL") && csv.contains("GCF,,,FAIL"), "{csv}");
    assert!(std::fs::read_to_string(dir.path().join("gcf.json")).unwrap().contains("\"FAIL\""));
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    assert_eq!(treeimpute(&[]).status.code(), Some(2));
    assert_eq!(treeimpute(&["estimate", "--method", "bogus"]).status.code(), Some(2));
    assert_eq!(treeimpute(&["simulate", "/nonexistent/exp.conf"]).status.code(), Some(2));
    assert_eq!(treeimpute(&["estimate", "--set", "no.such.key=1"]).status.code(), Some(2));
    assert_eq!(treeimpute(&["estimate", "--data", fixture("households.csv").to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(treeimpute(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_one() {
    let mut args = vec!["estimate".to_owned()];
    args.extend(data_args());
    args.extend(["--y", "no_such_column"].map(String::from));
    assert_eq!(run(args).status.code(), Some(1));
}

#[test]
fn oracle_simulation_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("exp.conf");
    std::fs::write(
        &conf,
        format!(
            "data = {}\nschema = {}\ny = spend\nmethods = oracle,sim\nfractions = 0.5\ntrials = 3\nseed = 4\npopulation.n_trees = 10\n",
            fixture("households.csv").display(),
            fixture("households.schema").display()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = treeimpute(&["simulate", conf.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--canonical", "--plot-data"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let oracle = report["summaries"].as_array().unwrap().iter().find(|s| s["method"] == "ORACLE").unwrap().clone();
    assert_eq!(oracle["stats"]["bias"].as_f64(), Some(0.0));
    assert_eq!(oracle["stats"]["rmse"].as_f64(), Some(0.0));
    for f in ["records.csv", "config.txt", "plot_data.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let again_dir = dir.path().join("again");
    treeimpute(&["simulate", conf.to_str().unwrap(), "--out", again_dir.to_str().unwrap(), "--canonical"]);
    assert_eq!(std::fs::read(out_dir.join("report.json")).unwrap(), std::fs::read(again_dir.join("report.json")).unwrap());
}

#[test]
fn impute_and_synth_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["impute".to_owned()];
    args.extend(data_args());
    args.extend(["--y", "spend", "--m", "2", "--iterations", "2", "--out"].map(String::from));
    args.push(dir.path().display().to_string());
    let out = run(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("chain_1.csv").exists() && dir.path().join("chain_2.csv").exists());
    assert!(stdout(&out).contains("pooled mean of spend"));

    let csv = dir.path().join("synth/survey.csv");
    let out = treeimpute(&["synth", "--out", csv.to_str().unwrap(), "--n", "50", "--p-ordinal", "3", "--p-categorical", "2", "--truth"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let schema = std::fs::read_to_string(csv.with_extension("schema")).unwrap();
    assert_eq!(schema.lines().count(), 3 + 2 + 1 + 2);
    let out = treeimpute(&["inspect", "--data", csv.to_str().unwrap(), "--schema", csv.with_extension("schema").to_str().unwrap()]);
    assert!(stdout(&out).starts_with("50 rows, 8 columns"));
}

#[test]
fn config_keys_are_listed() {
    let out = treeimpute(&["inspect", "--config-keys"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("forest.n_trees") && text.contains("gcf.propensity_floor"));
}
