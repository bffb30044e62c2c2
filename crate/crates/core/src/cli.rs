//! Command-line front end.
//!
//! Exit status is 0 on success, 2 for usage and configuration errors and 1
//! for data or model errors. Per-method failures inside `estimate` and
//! `simulate` are reported as FAIL rows and do not change the status.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{keys_text, RunConfig};
use crate::dataset::{load_csv, save_csv, Dataset, Schema};
use crate::error::{Error, Result};
use crate::estimators::{estimate, Method};
use crate::forest::{Forest, FOREST_FORMAT};
use crate::gmice::{gmice_impute, pool_mean};
use crate::sim::{synthetic_survey, Experiment, SurveySpec};
use crate::split::Mode;
use crate::tree::{self, Tree, TREE_FORMAT};
use crate::TrainingSet;

#[derive(Debug, Parser)]
#[command(name = "treeimpute", version, about = "Tree and forest estimators for means of incomplete survey variables")]
struct Cli {
    /// Worker threads; all cores when unset.
    #[arg(long, global = true, env = "TREEIMPUTE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the mean of a variable with one or more methods.
    Estimate(EstimateArgs),
    /// Multiply impute every incomplete column with chained guide trees.
    Impute(ImputeArgs),
    /// Run a simulation experiment described by a config file.
    Simulate(SimulateArgs),
    /// Render a saved tree or forest, fit and render a tree, or summarize a dataset.
    Inspect(InspectArgs),
    /// Write a synthetic survey dataset and its schema.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV; the synthetic survey is used when neither this nor the config names one.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Schema file for the input CSV.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Response column.
    #[arg(long)]
    y: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config override as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated methods (sim, gct, rct, grt, rrt, gcf, grf, gmice).
    #[arg(long, value_parser = parse_methods)]
    method: Option<MethodList>,
    /// Keep per-row imputations and propensities in the JSON files.
    #[arg(long)]
    keep_artifacts: bool,
}

#[derive(Debug, Args)]
struct ImputeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of chains.
    #[arg(long)]
    m: Option<usize>,
    /// Cycles per chain.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Experiment config file.
    config: PathBuf,
    /// Trials, overriding the config.
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config override as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also write the aggregated bias and RMSE table for plotting.
    #[arg(long)]
    plot_data: bool,
    /// Write the JSON report with timings zeroed so reruns compare byte for byte.
    #[arg(long)]
    canonical: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TreeMode {
    Guide,
    Greedy,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Saved tree or forest JSON.
    model: Option<PathBuf>,
    /// Tree of a forest to render.
    #[arg(long, default_value_t = 0)]
    tree: usize,
    /// Dataset to summarize, or to fit a tree on when `--y` is given.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Response of the tree to fit.
    #[arg(long)]
    y: Option<String>,
    #[arg(long, value_enum, default_value_t = TreeMode::Guide)]
    mode: TreeMode,
    #[arg(long, default_value_t = 50)]
    min_node_size: usize,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Write the fitted tree as JSON.
    #[arg(long)]
    save: Option<PathBuf>,
    /// Print JSON instead of the text rendering.
    #[arg(long)]
    json: bool,
    /// Print the configuration keys and exit.
    #[arg(long)]
    config_keys: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Schema file; defaults to the CSV path with a `.schema` extension.
    #[arg(long)]
    schema_out: Option<PathBuf>,
    #[arg(long, default_value_t = SurveySpec::default().n)]
    n: usize,
    #[arg(long, default_value_t = SurveySpec::default().p_ordinal)]
    p_ordinal: usize,
    #[arg(long, default_value_t = SurveySpec::default().p_categorical)]
    p_categorical: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the full response and its missingness probability.
    #[arg(long)]
    truth: bool,
}

#[derive(Debug, Clone)]
struct MethodList(Vec<Method>);

fn parse_methods(s: &str) -> std::result::Result<MethodList, String> {
    Method::parse_list(s).map(MethodList).map_err(|e| e.to_string())
}

/// Runs the tool on `args` (program name first) and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Schema(_) => 2,
        _ => 1,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Impute(a) => cmd_impute(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn resolve_config(input: &InputArgs) -> Result<RunConfig> {
    let mut cfg = match &input.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&input.overrides)?;
    if let Some(d) = &input.data {
        cfg.data = Some(d.clone());
    }
    if let Some(s) = &input.schema {
        cfg.schema = Some(s.clone());
    }
    if let Some(y) = &input.y {
        cfg.y = y.clone();
    }
    if let Some(s) = input.seed {
        cfg.seed = s;
    }
    if let Some(o) = &input.out {
        cfg.output = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_schema(path: &Path) -> Result<Schema> {
    let text = fs::read_to_string(path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    Schema::parse(&text)
}

fn load_input(data: Option<&Path>, schema: Option<&Path>, tokens: Option<&[String]>) -> Result<Dataset> {
    let data = data.ok_or_else(|| Error::Config("no input data".into()))?;
    let schema = schema.ok_or_else(|| Error::Config(format!("{} needs a schema file (--schema)", data.display())))?;
    let mut schema = read_schema(schema)?;
    if let Some(t) = tokens {
        schema = schema.with_missing_tokens(t.to_vec());
    }
    load_csv(data, &schema)
}

/// The configured dataset, or the synthetic survey when none is named.
fn config_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        Some(d) => load_input(Some(d), cfg.schema.as_deref(), cfg.missing_tokens.as_deref()),
        None => Ok(synthetic_survey(&cfg.synth, cfg.synth_seed)?.data),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn note_identifiers(data: &Dataset) {
    let ids = data.identifier_like_columns();
    if !ids.is_empty() {
        eprintln!("note: identifier-like categorical columns: {}", ids.join(", "));
    }
}

#[derive(Serialize)]
struct FailedMethod<'a> {
    method: Method,
    status: &'static str,
    error: &'a str,
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let mut cfg = resolve_config(&args.input)?;
    if let Some(MethodList(m)) = args.method {
        cfg.methods = m;
    }
    let data = config_data(&cfg)?;
    data.column_index(&cfg.y)?;
    note_identifiers(&data);
    let mut est = cfg.estimators;
    est.keep_artifacts = args.keep_artifacts;
    est.forest.seed = cfg.seed;
    est.gmice.seed = cfg.seed;
    create_dir(&cfg.output)?;

    let mut csv = String::from("method,estimate,seconds,status\n");
    println!("{:<8}{:>14}{:>12}  status", "method", "estimate", "seconds");
    for &method in &cfg.methods {
        let file = cfg.output.join(format!("{}.json", method.name().to_ascii_lowercase()));
        match estimate(method, &data, &cfg.y, &est) {
            Ok(r) => {
                write_file(&file, &serde_json::to_string_pretty(&r)?)?;
                csv.push_str(&format!("{},{},{},OK\n", method, r.estimate, r.seconds));
                println!("{:<8}{:>14.2}{:>12.2}  OK", method.name(), r.estimate, r.seconds);
                for w in &r.warnings {
                    eprintln!("{method}: {w}");
                }
            }
            Err(e) => {
                let msg = e.to_string();
                let failed = FailedMethod {
                    method,
                    status: "FAIL",
                    error: &msg,
                };
                write_file(&file, &serde_json::to_string_pretty(&failed)?)?;
                csv.push_str(&format!("{method},,,FAIL\n"));
                println!("{:<8}{:>14}{:>12}  FAIL: {msg}", method.name(), "", "");
            }
        }
    }
    write_file(&cfg.output.join("estimates.csv"), &csv)
}

fn cmd_impute(args: ImputeArgs) -> Result<()> {
    let mut cfg = resolve_config(&args.input)?;
    if let Some(m) = args.m {
        cfg.estimators.gmice.m = m;
    }
    if let Some(it) = args.iterations {
        cfg.estimators.gmice.iterations = it;
    }
    let mut params = cfg.estimators.gmice;
    params.seed = cfg.seed;
    params.validate().map_err(|e| Error::Config(e.to_string()))?;
    let data = config_data(&cfg)?;
    note_identifiers(&data);
    let chains = gmice_impute(&data, &params)?;
    create_dir(&cfg.output)?;
    for (k, chain) in chains.iter().enumerate() {
        chain.save(cfg.output.join(format!("chain_{}.csv", k + 1)), cfg.output.join("mask.csv"))?;
    }
    println!("{} chains, {} cells imputed per chain", chains.len(), chains[0].mask.total());
    if data.column_index(&cfg.y).is_ok() {
        match pool_mean(&chains, &cfg.y) {
            Ok(mean) => println!("pooled mean of {}: {:.2}", cfg.y, mean),
            Err(e) => eprintln!("no pooled mean for {}: {e}", cfg.y),
        }
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    cfg.apply_overrides(&args.overrides)?;
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.out {
        cfg.output = o;
    }
    cfg.validate()?;
    let data = config_data(&cfg)?;
    note_identifiers(&data);
    let experiment = Experiment::prepare(&data, cfg.experiment())?;
    let report = experiment.run()?;
    create_dir(&cfg.output)?;
    let json = if args.canonical { report.canonical_json()? } else { report.to_json()? };
    write_file(&cfg.output.join("report.json"), &json)?;
    write_file(&cfg.output.join("records.csv"), &report.to_csv())?;
    write_file(&cfg.output.join("config.txt"), &cfg.to_text())?;
    if args.plot_data {
        write_file(&cfg.output.join("plot_data.csv"), &report.plot_data_csv())?;
    }
    print!("{}", report.render());
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    if args.config_keys {
        print!("{}", keys_text());
        return Ok(());
    }
    let mut out = std::io::stdout().lock();
    if let Some(path) = &args.model {
        let text = fs::read_to_string(path)?;
        let format = serde_json::from_str::<serde_json::Value>(&text)?
            .get("format")
            .and_then(|f| f.as_str().map(str::to_owned))
            .unwrap_or_default();
        if format == TREE_FORMAT {
            let tree = Tree::from_json(&text)?;
            if args.json {
                writeln!(out, "{}", tree.to_json()?)?;
            } else {
                write!(out, "{}", tree.render())?;
            }
        } else if format == FOREST_FORMAT {
            let forest = Forest::from_json(&text)?;
            let t = forest
                .trees()
                .get(args.tree)
                .ok_or_else(|| Error::InvalidArgument(format!("forest has {} trees", forest.trees().len())))?;
            writeln!(out, "forest of {} trees; tree {} (seed {}):", forest.trees().len(), args.tree, forest.seeds()[args.tree])?;
            write!(out, "{}", t.render())?;
        } else {
            return Err(Error::InvalidArgument(format!("{}: not a saved tree or forest", path.display())));
        }
        return Ok(());
    }
    let Some(data_path) = &args.data else {
        return Err(Error::Config("inspect needs a model file or --data".into()));
    };
    let data = load_input(Some(data_path), args.schema.as_deref(), None)?;
    let Some(y) = &args.y else {
        write!(out, "{}", summarize(&data))?;
        return Ok(());
    };
    let params = tree::TreeParams {
        mode: match args.mode {
            TreeMode::Guide => Mode::Guide,
            TreeMode::Greedy => Mode::Greedy,
        },
        min_node_size: args.min_node_size,
        max_depth: args.max_depth,
        ..tree::TreeParams::default()
    };
    params.validate().map_err(|e| Error::Config(e.to_string()))?;
    let set = TrainingSet::for_column(&data, y)?;
    let fitted = tree::fit(&set, &params)?;
    if let Some(p) = &args.save {
        write_file(p, &fitted.to_json()?)?;
    }
    if args.json {
        writeln!(out, "{}", fitted.to_json()?)?;
    } else {
        write!(out, "{}", fitted.render())?;
    }
    Ok(())
}

/// One line per column: kind, levels, missing cells, identifier flag.
fn summarize(data: &Dataset) -> String {
    let ids = data.identifier_like_columns();
    let width = data.columns().map(|c| c.name().len()).max().unwrap_or(0).max(6);
    let mut s = format!("{} rows, {} columns\n", data.n_rows(), data.n_cols());
    s.push_str(&format!("{:<width$}  {:<11}  {:>6}  {:>8}\n", "column", "kind", "levels", "missing"));
    for c in data.columns() {
        let levels = if c.levels().is_empty() { "-".to_owned() } else { c.levels().len().to_string() };
        let flag = if ids.contains(&c.name()) { "  identifier-like" } else { "" };
        s.push_str(&format!("{:<width$}  {:<11}  {:>6}  {:>8}{flag}\n", c.name(), c.kind().to_string(), levels, c.missing_count()));
    }
    s
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SurveySpec {
        n: args.n,
        ..SurveySpec::default().with_shape(args.p_ordinal, args.p_categorical)
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let survey = synthetic_survey(&spec, args.seed)?;
    let mut data = survey.data;
    if args.truth {
        data = data.with_column(crate::dataset::Column::ordinal(
            format!("{}_full", spec.y_name),
            survey.y_full.iter().map(|&v| Some(v)).collect(),
        ))?;
        data = data.with_column(crate::dataset::Column::ordinal(
            format!("{}_missing_prob", spec.y_name),
            survey.y_missing_prob.iter().map(|&v| Some(v)).collect(),
        ))?;
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_csv(&data, &args.out)?;
    let schema_path = args.schema_out.unwrap_or_else(|| args.out.with_extension("schema"));
    write_file(&schema_path, &data.schema().to_text())?;
    println!(
        "wrote {} rows x {} columns to {} (schema {})",
        data.n_rows(),
        data.n_cols(),
        args.out.display(),
        schema_path.display()
    );
    Ok(())
}
