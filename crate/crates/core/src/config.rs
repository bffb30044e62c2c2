//! Flat `key = value` run configuration shared by the command-line tools.
//!
//! One setting per line; `#` starts a comment. Lists are comma separated.
//! Every key must appear in [`KEYS`]; anything else is rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, Method};
use crate::forest::ForestParams;
use crate::gmice::{LeafFill, VisitOrder};
use crate::sim::{ExperimentConfig, SurveySpec};

/// Published keys with a one-line description each.
pub const KEYS: &[(&str, &str)] = &[
    ("data", "input CSV; the synthetic survey is used when unset"),
    ("schema", "schema file with one `column = ordinal|categorical` per line"),
    ("missing_tokens", "cell values read as missing (default: empty, NA)"),
    ("y", "response column"),
    ("variables", "X columns to use (default: all other columns)"),
    ("methods", "estimators, e.g. sim,gct,rct,grt,rrt,gcf,grf,gmice"),
    ("fractions", "sampling fractions of the simulation"),
    ("trials", "simulation trials"),
    ("seed", "master seed"),
    ("output", "output directory"),
    ("nonnegative", "truncate generated responses at zero"),
    ("tree.min_node_size", "single trees: smallest node that may be split is twice this"),
    ("tree.max_depth", "single trees: depth cap, `none` for no cap"),
    ("tree.max_surrogates", "greedy trees: surrogates kept per split"),
    ("tree.bins", "quantile bins for ordinal association tests"),
    ("forest.n_trees", "trees per estimation forest"),
    ("forest.min_node_size", "forest trees: minimum node size"),
    ("forest.bootstrap", "resample rows for each forest tree"),
    ("forest.features_per_node", "variables drawn per node, `none` for all"),
    ("gcf.propensity_floor", "lower clip of forest propensities"),
    ("gcf.out_of_bag", "score observed rows with out-of-bag trees only"),
    ("gmice.m", "imputation chains"),
    ("gmice.iterations", "cycles per chain"),
    ("gmice.min_node_size", "chained-imputation trees: minimum node size"),
    ("gmice.fill", "donor|mean"),
    ("gmice.order", "missing_descending|columns"),
    ("population.n_trees", "trees in the population-generation forests"),
    ("population.min_node_size", "population-generation forests: minimum node size"),
    ("synth.n", "rows of the synthetic survey"),
    ("synth.p_ordinal", "ordinal X variables of the synthetic survey"),
    ("synth.p_categorical", "categorical X variables of the synthetic survey"),
    ("synth.seed", "seed of the synthetic survey"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub missing_tokens: Option<Vec<String>>,
    pub y: String,
    pub variables: Option<Vec<String>>,
    pub methods: Vec<Method>,
    pub fractions: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub nonnegative: bool,
    pub estimators: EstimatorConfig,
    pub population: ForestParams,
    pub synth: SurveySpec,
    pub synth_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        RunConfig {
            data: None,
            schema: None,
            missing_tokens: None,
            y: exp.y,
            variables: None,
            methods: exp.methods,
            fractions: exp.fractions,
            trials: exp.trials,
            seed: exp.seed,
            output: PathBuf::from("out"),
            nonnegative: exp.nonnegative,
            estimators: exp.estimators,
            population: exp.population_forest,
            synth: SurveySpec::default(),
            synth_seed: 0,
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("`{key}`: cannot read `{value}` as {what}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, what))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "a boolean")),
    }
}

fn parse_opt(key: &str, value: &str) -> Result<Option<usize>> {
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse_num(key, value, "a count or `none`").map(Some)
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_text(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_owned(), |v| v.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative `data` and `schema` paths are taken
    /// relative to the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data, &mut cfg.schema].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let est = &mut self.estimators;
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "schema" => self.schema = Some(PathBuf::from(value)),
            "missing_tokens" => self.missing_tokens = Some(value.split(',').map(|s| s.trim().to_owned()).collect()),
            "y" => self.y = value.to_owned(),
            "variables" => self.variables = Some(parse_list(value)),
            "methods" => self.methods = Method::parse_list(value).map_err(|e| Error::Config(format!("`methods`: {e}")))?,
            "fractions" => {
                self.fractions = parse_list(value)
                    .iter()
                    .map(|v| parse_num(key, v, "a fraction"))
                    .collect::<Result<_>>()?
            }
            "trials" => self.trials = parse_num(key, value, "a count")?,
            "seed" => self.seed = parse_num(key, value, "an unsigned integer")?,
            "output" => self.output = PathBuf::from(value),
            "nonnegative" => self.nonnegative = parse_bool(key, value)?,
            "tree.min_node_size" => est.tree.min_node_size = parse_num(key, value, "a count")?,
            "tree.max_depth" => est.tree.max_depth = parse_opt(key, value)?,
            "tree.max_surrogates" => est.tree.max_surrogates = parse_num(key, value, "a count")?,
            "tree.bins" => est.tree.bins = parse_num(key, value, "a count")?,
            "forest.n_trees" => est.forest.n_trees = parse_num(key, value, "a count")?,
            "forest.min_node_size" => est.forest.tree.min_node_size = parse_num(key, value, "a count")?,
            "forest.bootstrap" => est.forest.bootstrap = parse_bool(key, value)?,
            "forest.features_per_node" => est.forest.tree.features_per_node = parse_opt(key, value)?,
            "gcf.propensity_floor" => est.propensity_floor = parse_num(key, value, "a number")?,
            "gcf.out_of_bag" => est.out_of_bag = parse_bool(key, value)?,
            "gmice.m" => est.gmice.m = parse_num(key, value, "a count")?,
            "gmice.iterations" => est.gmice.iterations = parse_num(key, value, "a count")?,
            "gmice.min_node_size" => est.gmice.tree.min_node_size = parse_num(key, value, "a count")?,
            "gmice.fill" => {
                est.gmice.fill = match value {
                    "donor" => LeafFill::Donor,
                    "mean" => LeafFill::Mean,
                    _ => return Err(bad(key, value, "donor|mean")),
                }
            }
            "gmice.order" => {
                est.gmice.order = match value {
                    "missing_descending" => VisitOrder::MissingDescending,
                    "columns" => VisitOrder::Columns,
                    _ => return Err(bad(key, value, "missing_descending|columns")),
                }
            }
            "population.n_trees" => self.population.n_trees = parse_num(key, value, "a count")?,
            "population.min_node_size" => self.population.tree.min_node_size = parse_num(key, value, "a count")?,
            "synth.n" => self.synth.n = parse_num(key, value, "a count")?,
            "synth.p_ordinal" => self.synth = self.synth.with_shape(parse_num(key, value, "a count")?, self.synth.p_categorical),
            "synth.p_categorical" => self.synth = self.synth.with_shape(self.synth.p_ordinal, parse_num(key, value, "a count")?),
            "synth.seed" => self.synth_seed = parse_num(key, value, "an unsigned integer")?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not `key=value`")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.experiment().validate().map_err(wrap)?;
        self.estimators.tree.validate().map_err(wrap)?;
        self.estimators.forest.validate().map_err(wrap)?;
        self.estimators.gmice.validate().map_err(wrap)?;
        if !(self.estimators.propensity_floor > 0.0 && self.estimators.propensity_floor <= 1.0) {
            return Err(Error::Config("`gcf.propensity_floor` must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            y: self.y.clone(),
            variables: self.variables.clone(),
            fractions: self.fractions.clone(),
            methods: self.methods.clone(),
            trials: self.trials,
            seed: self.seed,
            population_forest: self.population,
            nonnegative: self.nonnegative,
            estimators: self.estimators,
        }
    }

    /// Every key with its effective value, in [`KEYS`] order; parsing the
    /// text gives back the same configuration.
    pub fn to_text(&self) -> String {
        let est = &self.estimators;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut out = String::new();
        for &(key, _) in KEYS {
            let value = match key {
                "data" => path(&self.data),
                "schema" => path(&self.schema),
                "missing_tokens" => self.missing_tokens.as_ref().map(|t| t.join(",")),
                "y" => Some(self.y.clone()),
                "variables" => self.variables.as_ref().map(|v| v.join(",")),
                "methods" => Some(join(&self.methods)),
                "fractions" => Some(join(&self.fractions)),
                "trials" => Some(self.trials.to_string()),
                "seed" => Some(self.seed.to_string()),
                "output" => Some(self.output.display().to_string()),
                "nonnegative" => Some(self.nonnegative.to_string()),
                "tree.min_node_size" => Some(est.tree.min_node_size.to_string()),
                "tree.max_depth" => Some(opt_text(est.tree.max_depth)),
                "tree.max_surrogates" => Some(est.tree.max_surrogates.to_string()),
                "tree.bins" => Some(est.tree.bins.to_string()),
                "forest.n_trees" => Some(est.forest.n_trees.to_string()),
                "forest.min_node_size" => Some(est.forest.tree.min_node_size.to_string()),
                "forest.bootstrap" => Some(est.forest.bootstrap.to_string()),
                "forest.features_per_node" => Some(opt_text(est.forest.tree.features_per_node)),
                "gcf.propensity_floor" => Some(est.propensity_floor.to_string()),
                "gcf.out_of_bag" => Some(est.out_of_bag.to_string()),
                "gmice.m" => Some(est.gmice.m.to_string()),
                "gmice.iterations" => Some(est.gmice.iterations.to_string()),
                "gmice.min_node_size" => Some(est.gmice.tree.min_node_size.to_string()),
                "gmice.fill" => Some(match est.gmice.fill {
                    LeafFill::Donor => "donor".to_owned(),
                    LeafFill::Mean => "mean".to_owned(),
                }),
                "gmice.order" => Some(match est.gmice.order {
                    VisitOrder::MissingDescending => "missing_descending".to_owned(),
                    VisitOrder::Columns => "columns".to_owned(),
                }),
                "population.n_trees" => Some(self.population.n_trees.to_string()),
                "population.min_node_size" => Some(self.population.tree.min_node_size.to_string()),
                "synth.n" => Some(self.synth.n.to_string()),
                "synth.p_ordinal" => Some(self.synth.p_ordinal.to_string()),
                "synth.p_categorical" => Some(self.synth.p_categorical.to_string()),
                "synth.seed" => Some(self.synth_seed.to_string()),
                _ => unreachable!("key table and writer out of step"),
            };
            match value {
                Some(v) => writeln!(out, "{key} = {v}").expect("write to string"),
                None => writeln!(out, "# {key} =").expect("write to string"),
            }
        }
        out
    }
}

/// The key table as text, one `key  description` line each.
pub fn keys_text() -> String {
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    KEYS.iter().map(|(k, d)| format!("{k:<width$}  {d}\n")).collect()
}
