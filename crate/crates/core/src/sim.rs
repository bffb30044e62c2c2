//! Simulation harness: synthetic surveys, population generation and
//! repeated-sampling evaluation of the estimators.
//!
//! An experiment fits two forests to a source dataset once:
//!
//! 1. a regression forest of `y` on the rows where `y` is observed, used to
//!    fill every missing `y` with `max(yhat + e, 0)`, `e ~ N(0, sigma^2)`,
//!    which gives a fully observed population `P1` and its mean `mu`;
//! 2. a classification forest of the missing flag of `y` on all rows, whose
//!    probabilities re-mask `y` in `P1` independently row by row, giving `P2`.
//!
//! Every trial redraws `e` and the mask, takes a simple random sample without
//! replacement from `P2` at each fraction, and runs each method on it.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_flag, srswor_indices, Column, ColumnData, Dataset, Flag};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorConfig, Method};
use crate::forest::{fit_forest, residual_sigma, Forest, ForestParams};
use crate::frame::TrainingSet;
use crate::rng::{derive_seed, stream, StreamRng};

/// Shape and generating model of a synthetic survey.
///
/// Each variable `j` has a latent standard normal score `z_j` sharing a
/// common factor with loading `sqrt(correlation)`. Ordinal variables report
/// `z_j` rounded to `resolution`; categorical variables cut `Phi(z_j)` into
/// equal-probability levels. A cell of variable `j` is missing with
/// probability `logistic(logit(rate_j) + x_missing_slope * z_j)`, so
/// missingness depends on the unseen value itself.
///
/// The response is `y = intercept + sum_k y_coef[k] * s(z_{y_vars[k]}) + noise`
/// (truncated at zero when `nonnegative`), where `s` is the identity for an
/// ordinal variable and the centered level index for a categorical one. `y`
/// is missing with probability
/// `logistic(logit(y_missing_rate) + sum_k propensity_coef[k] * z_{propensity_vars[k]})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveySpec {
    pub n: usize,
    pub p_ordinal: usize,
    pub p_categorical: usize,
    /// Level counts for the categorical variables, reused cyclically.
    pub levels: Vec<usize>,
    /// Missing rates for the variables, reused cyclically.
    pub x_missing_rates: Vec<f64>,
    pub x_missing_slope: f64,
    pub correlation: f64,
    pub resolution: f64,
    pub y_name: String,
    pub y_vars: Vec<usize>,
    pub y_coef: Vec<f64>,
    pub intercept: f64,
    pub noise_sd: f64,
    pub nonnegative: bool,
    pub y_missing_rate: f64,
    pub propensity_vars: Vec<usize>,
    pub propensity_coef: Vec<f64>,
}

impl Default for SurveySpec {
    fn default() -> Self {
        SurveySpec {
            n: 4609,
            p_ordinal: 20,
            p_categorical: 10,
            levels: vec![3, 5, 8, 12, 20],
            x_missing_rates: vec![0.0, 0.05, 0.15, 0.3],
            x_missing_slope: 1.0,
            correlation: 0.2,
            resolution: 0.01,
            y_name: "y".to_owned(),
            y_vars: vec![0, 1, 2, 20, 21],
            y_coef: vec![600.0, 400.0, 300.0, 250.0, 150.0],
            intercept: 2000.0,
            noise_sd: 400.0,
            nonnegative: true,
            y_missing_rate: 0.38,
            propensity_vars: vec![0, 1, 20],
            propensity_coef: vec![1.0, 0.8, 0.6],
        }
    }
}

impl SurveySpec {
    pub fn p(&self) -> usize {
        self.p_ordinal + self.p_categorical
    }

    /// The same model on `p_ordinal` ordinal and `p_categorical` categorical
    /// variables. Model variables keep their kind and position within it;
    /// those that no longer exist are dropped with their coefficients.
    pub fn with_shape(&self, p_ordinal: usize, p_categorical: usize) -> SurveySpec {
        let remap = |j: usize| {
            if j < self.p_ordinal {
                (j < p_ordinal).then_some(j)
            } else {
                let k = j - self.p_ordinal;
                (k < p_categorical).then_some(p_ordinal + k)
            }
        };
        let keep = |vars: &[usize], coef: &[f64]| -> (Vec<usize>, Vec<f64>) {
            vars.iter().zip(coef).filter_map(|(&j, &c)| remap(j).map(|j| (j, c))).unzip()
        };
        let (y_vars, y_coef) = keep(&self.y_vars, &self.y_coef);
        let (propensity_vars, propensity_coef) = keep(&self.propensity_vars, &self.propensity_coef);
        SurveySpec {
            p_ordinal,
            p_categorical,
            y_vars,
            y_coef,
            propensity_vars,
            propensity_coef,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("survey spec: {m}")));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if self.p_categorical > 0 && (self.levels.is_empty() || self.levels.iter().any(|&l| l < 2)) {
            return bad("categorical variables need level counts of at least 2");
        }
        if self.x_missing_rates.iter().any(|&r| !(0.0..1.0).contains(&r)) {
            return bad("x missing rates must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.y_missing_rate) {
            return bad("y missing rate must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return bad("correlation must lie in [0, 1)");
        }
        if !(self.resolution >= 0.0) || !(self.noise_sd >= 0.0) {
            return bad("resolution and noise_sd must be nonnegative");
        }
        if self.y_vars.len() != self.y_coef.len() || self.propensity_vars.len() != self.propensity_coef.len() {
            return bad("coefficient lists must match their variable lists");
        }
        if self.y_vars.iter().chain(&self.propensity_vars).any(|&v| v >= self.p()) {
            return bad("model variable index out of range");
        }
        if self.y_name.is_empty() {
            return bad("y_name must not be empty");
        }
        Ok(())
    }

    /// Name of variable `j`.
    pub fn variable_name(&self, j: usize) -> String {
        if j < self.p_ordinal {
            format!("x{:02}", j + 1)
        } else {
            format!("c{:02}", j - self.p_ordinal + 1)
        }
    }
}

/// A generated survey together with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticSurvey {
    pub data: Dataset,
    /// `y` before masking.
    pub y_full: Vec<f64>,
    /// Probability that `y` is missing, per row.
    pub y_missing_prob: Vec<f64>,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else {
        (p / (1.0 - p)).ln()
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Generates a survey from `spec`.
pub fn synthetic_survey(spec: &SurveySpec, seed: u64) -> Result<SyntheticSurvey> {
    spec.validate()?;
    let mut rng = stream(seed, &[0x5EED]);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let p = spec.p();
    let load = spec.correlation.sqrt();
    let rest = (1.0 - spec.correlation).sqrt();
    let mut z = vec![vec![0.0; spec.n]; p];
    for i in 0..spec.n {
        let f: f64 = std.sample(&mut rng);
        for zj in z.iter_mut() {
            zj[i] = load * f + rest * std.sample(&mut rng);
        }
    }
    let level_count = |j: usize| spec.levels[(j - spec.p_ordinal) % spec.levels.len()];
    let signal = |j: usize, i: usize| -> f64 {
        if j < spec.p_ordinal {
            z[j][i]
        } else {
            let l = level_count(j);
            let k = ((normal_cdf(z[j][i]) * l as f64) as usize).min(l - 1);
            (k as f64 - (l as f64 - 1.0) / 2.0) / ((l as f64 - 1.0) / 2.0).max(1.0) * 1.5
        }
    };
    let mut columns = Vec::with_capacity(p + 1);
    for j in 0..p {
        let rate = if spec.x_missing_rates.is_empty() {
            0.0
        } else {
            spec.x_missing_rates[j % spec.x_missing_rates.len()]
        };
        let base = logit(rate);
        let missing: Vec<bool> = (0..spec.n)
            .map(|i| rate > 0.0 && rng.random::<f64>() < logistic(base + spec.x_missing_slope * z[j][i]))
            .collect();
        let name = spec.variable_name(j);
        if j < spec.p_ordinal {
            let vals = (0..spec.n)
                .map(|i| {
                    (!missing[i]).then(|| {
                        if spec.resolution > 0.0 {
                            (z[j][i] / spec.resolution).round() * spec.resolution
                        } else {
                            z[j][i]
                        }
                    })
                })
                .collect();
            columns.push(Column::ordinal(name, vals));
        } else {
            let l = level_count(j);
            let levels: Vec<String> = (0..l).map(|k| format!("L{k:02}")).collect();
            let codes = (0..spec.n)
                .map(|i| (!missing[i]).then(|| ((normal_cdf(z[j][i]) * l as f64) as u32).min(l as u32 - 1)))
                .collect();
            columns.push(Column::new(name, ColumnData::Categorical { codes, levels }));
        }
    }
    let noise = Normal::new(0.0, spec.noise_sd.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut y_full = Vec::with_capacity(spec.n);
    let mut y_missing_prob = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n);
    let base = logit(spec.y_missing_rate);
    for i in 0..spec.n {
        let mut v = spec.intercept + spec.y_vars.iter().zip(&spec.y_coef).map(|(&j, c)| c * signal(j, i)).sum::<f64>();
        if spec.noise_sd > 0.0 {
            v += noise.sample(&mut rng);
        }
        if spec.nonnegative {
            v = v.max(0.0);
        }
        let q = if spec.y_missing_rate > 0.0 {
            logistic(base + spec.propensity_vars.iter().zip(&spec.propensity_coef).map(|(&j, c)| c * z[j][i]).sum::<f64>())
        } else {
            0.0
        };
        let masked = rng.random::<f64>() < q;
        y_full.push(v);
        y_missing_prob.push(q);
        y.push((!masked).then_some(v));
    }
    columns.push(Column::ordinal(spec.y_name.clone(), y));
    Ok(SyntheticSurvey {
        data: Dataset::new(columns)?,
        y_full,
        y_missing_prob,
    })
}

/// Population with `y` fully observed.
#[derive(Debug, Clone)]
pub struct PopulationP1 {
    pub data: Dataset,
    pub mu: f64,
}

/// `P1` with `y` re-masked.
#[derive(Debug, Clone)]
pub struct PopulationP2 {
    pub data: Dataset,
    pub mu: f64,
    /// Rows whose `y` was masked.
    pub masked: Vec<bool>,
}

/// Fitted model for completing `y`.
#[derive(Debug, Clone)]
pub struct StepOne {
    y_col: usize,
    sigma: f64,
    missing: Vec<usize>,
    yhat: Vec<f64>,
    nonnegative: bool,
    forest: Forest,
}

impl StepOne {
    pub fn fit(data: &Dataset, y: &str, params: &ForestParams, nonnegative: bool) -> Result<StepOne> {
        let y_col = data.column_index(y)?;
        let set = TrainingSet::for_column(data, y)?;
        if set.rows().is_empty() {
            return Err(Error::AllMissing(y.to_owned()));
        }
        let forest = fit_forest(&set, params)?;
        let sigma = residual_sigma(&forest, &set)?;
        let missing: Vec<usize> = (0..data.n_rows()).filter(|&r| data.column(y_col).data().is_missing(r)).collect();
        let yhat = forest.predict_mean_rows(data, &missing);
        Ok(StepOne {
            y_col,
            sigma,
            missing,
            yhat,
            nonnegative,
            forest,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    /// Forest predictions for the rows with missing `y`, as `(row, yhat)`.
    pub fn predictions(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.missing.iter().copied().zip(self.yhat.iter().copied())
    }

    /// Completes `y` with fresh noise.
    pub fn generate<R: Rng + ?Sized>(&self, data: &Dataset, rng: &mut R) -> Result<PopulationP1> {
        let mut values = data
            .column(self.y_col)
            .ordinal_values()
            .ok_or_else(|| Error::InvalidArgument("y must be ordinal".into()))?
            .to_vec();
        let noise = Normal::new(0.0, self.sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for (r, yhat) in self.predictions() {
            let e = if self.sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            let v = yhat + e;
            values[r] = Some(if self.nonnegative { v.max(0.0) } else { v });
        }
        let mu = values.iter().map(|v| v.expect("completed")).sum::<f64>() / values.len() as f64;
        Ok(PopulationP1 {
            data: data.with_column_data(self.y_col, ColumnData::Ordinal(values))?,
            mu,
        })
    }
}

/// Fitted model for re-masking `y`.
#[derive(Debug, Clone)]
pub struct StepTwo {
    y_col: usize,
    q: Vec<f64>,
    forest: Forest,
}

impl StepTwo {
    pub fn fit(data: &Dataset, y: &str, params: &ForestParams) -> Result<StepTwo> {
        let y_col = data.column_index(y)?;
        let flag = derive_flag(data, y)?;
        let set = TrainingSet::for_flag(data, &flag)?;
        let forest = fit_forest(&set, params)?;
        let rows: Vec<usize> = (0..data.n_rows()).collect();
        let q = forest
            .predict_proba_rows(data, &rows)
            .into_iter()
            .map(|p| p[Flag::Missing as usize])
            .collect();
        Ok(StepTwo { y_col, q, forest })
    }

    /// Uses given per-row missing probabilities instead of a forest.
    pub fn from_probabilities(data: &Dataset, y: &str, q: Vec<f64>, forest: Forest) -> Result<StepTwo> {
        if q.len() != data.n_rows() || q.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("one probability in [0, 1] per row is required".into()));
        }
        Ok(StepTwo {
            y_col: data.column_index(y)?,
            q,
            forest,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.q
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    /// Masks `y` in `p1`, row `i` with probability `q_i`.
    pub fn generate<R: Rng + ?Sized>(&self, p1: &PopulationP1, rng: &mut R) -> Result<PopulationP2> {
        let masked: Vec<bool> = self.q.iter().map(|&q| rng.random::<f64>() < q).collect();
        let values = p1
            .data
            .column(self.y_col)
            .ordinal_values()
            .ok_or_else(|| Error::InvalidArgument("y must be ordinal".into()))?;
        let new: Vec<Option<f64>> = values.iter().zip(&masked).map(|(v, &m)| if m { None } else { *v }).collect();
        Ok(PopulationP2 {
            data: p1.data.with_column_data(self.y_col, ColumnData::Ordinal(new))?,
            mu: p1.mu,
            masked,
        })
    }
}

/// Fits step one and draws one `P1`.
pub fn generate_p1<R: Rng + ?Sized>(data: &Dataset, y: &str, params: &ForestParams, nonnegative: bool, rng: &mut R) -> Result<PopulationP1> {
    StepOne::fit(data, y, params, nonnegative)?.generate(data, rng)
}

/// Fits step two on `data` and masks `p1`.
pub fn generate_p2<R: Rng + ?Sized>(p1: &PopulationP1, data: &Dataset, y: &str, params: &ForestParams, rng: &mut R) -> Result<PopulationP2> {
    StepTwo::fit(data, y, params)?.generate(p1, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub y: String,
    /// Restrict the X variables to these columns (all when `None`).
    pub variables: Option<Vec<String>>,
    pub fractions: Vec<f64>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub seed: u64,
    /// Forests of the two population-generation steps.
    pub population_forest: ForestParams,
    pub nonnegative: bool,
    pub estimators: EstimatorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            y: "y".to_owned(),
            variables: None,
            fractions: vec![0.05, 0.10, 0.25],
            methods: vec![
                Method::Sim,
                Method::Gct,
                Method::Rct,
                Method::Grt,
                Method::Rrt,
                Method::Gcf,
                Method::Grf,
            ],
            trials: 500,
            seed: 0,
            population_forest: ForestParams::default(),
            nonnegative: true,
            estimators: EstimatorConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods".into()));
        }
        if self.fractions.is_empty() || self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config("fractions must lie in (0, 1]".into()));
        }
        self.population_forest.validate()
    }
}

/// One method on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: Method,
    pub fraction: f64,
    pub trial: usize,
    pub mu: f64,
    pub muhat: Option<f64>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub bias: f64,
    pub bias_se: f64,
    pub bias_ci: [f64; 2],
    pub rmse: f64,
    pub rmse_se: f64,
    pub rmse_ci: [f64; 2],
}

impl ErrorStats {
    /// Bias and root mean squared error of `errors` (`muhat - mu`) with
    /// normal-approximation 95% intervals; the RMSE interval maps the MSE
    /// standard error through the square root.
    pub fn from_errors(errors: &[f64]) -> Option<ErrorStats> {
        let m = errors.len();
        if m == 0 {
            return None;
        }
        let mf = m as f64;
        let bias = errors.iter().sum::<f64>() / mf;
        let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
        let mse = sq.iter().sum::<f64>() / mf;
        let sd = |xs: &[f64], mean: f64| {
            if m < 2 {
                0.0
            } else {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (mf - 1.0)).sqrt()
            }
        };
        let bias_se = sd(errors, bias) / mf.sqrt();
        let mse_se = sd(&sq, mse) / mf.sqrt();
        let rmse = mse.sqrt().max(bias.abs());
        let rmse_se = if rmse > 0.0 { mse_se / (2.0 * rmse) } else { 0.0 };
        const Z: f64 = 1.959_963_984_540_054;
        Some(ErrorStats {
            bias,
            bias_se,
            bias_ci: [bias - Z * bias_se, bias + Z * bias_se],
            rmse,
            rmse_se,
            rmse_ci: [(rmse - Z * rmse_se).max(0.0), rmse + Z * rmse_se],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub fraction: f64,
    pub sample_size: usize,
    pub trials: usize,
    pub failures: usize,
    /// `OK`, or `FAIL` when any trial failed.
    pub status: String,
    pub stats: Option<ErrorStats>,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub y: String,
    pub n_population: usize,
    pub n_variables: usize,
    pub trials: usize,
    pub seed: u64,
    pub fractions: Vec<f64>,
    pub methods: Vec<Method>,
    pub step_one_sigma: f64,
    pub summaries: Vec<MethodSummary>,
    pub records: Vec<TrialRecord>,
}

impl ExperimentReport {
    pub fn summary(&self, method: Method, fraction: f64) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method && s.fraction == fraction)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with wall times zeroed, for comparing runs.
    pub fn canonical_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.records.iter_mut().for_each(|r| r.seconds = 0.0);
        copy.summaries.iter_mut().for_each(|s| s.mean_seconds = 0.0);
        copy.to_json()
    }

    /// One row per (method, fraction, trial).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,fraction,trial,mu,muhat,seconds\n");
        for r in &self.records {
            let muhat = r.muhat.map_or_else(|| "FAIL".to_owned(), |v| format!("{v:?}"));
            let _ = writeln!(out, "{},{:?},{},{:?},{},{:?}", r.method, r.fraction, r.trial, r.mu, muhat, r.seconds);
        }
        out
    }

    /// One row per (method, fraction) with bias, RMSE and their intervals.
    pub fn plot_data_csv(&self) -> String {
        let mut out = String::from("method,fraction,n,trials,failures,status,bias,bias_lo,bias_hi,rmse,rmse_lo,rmse_hi,mean_seconds\n");
        for s in &self.summaries {
            let stats = match &s.stats {
                Some(e) => format!(
                    "{:?},{:?},{:?},{:?},{:?},{:?}",
                    e.bias, e.bias_ci[0], e.bias_ci[1], e.rmse, e.rmse_ci[0], e.rmse_ci[1]
                ),
                None => ",,,,,".to_owned(),
            };
            let _ = writeln!(
                out,
                "{},{:?},{},{},{},{},{stats},{:?}",
                s.method, s.fraction, s.sample_size, s.trials, s.failures, s.status, s.mean_seconds
            );
        }
        out
    }

    /// Console table with two decimals.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<7} {:>8} {:>6} {:>10} {:>10} {:>10} {:>10} {:>9}  status\n",
            "method", "fraction", "n", "bias", "bias se", "rmse", "rmse se", "seconds"
        );
        for s in &self.summaries {
            let (b, bs, r, rs) = s
                .stats
                .as_ref()
                .map_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN), |e| (e.bias, e.bias_se, e.rmse, e.rmse_se));
            let _ = writeln!(
                out,
                "{:<7} {:>8.2} {:>6} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>9.2}  {}",
                s.method.name(),
                s.fraction,
                s.sample_size,
                b,
                bs,
                r,
                rs,
                s.mean_seconds,
                s.status
            );
        }
        out
    }
}

/// A prepared experiment: the source data and the two fitted generation
/// steps.
pub struct Experiment {
    data: Dataset,
    config: ExperimentConfig,
    step_one: StepOne,
    step_two: StepTwo,
}

impl Experiment {
    pub fn prepare(data: &Dataset, config: ExperimentConfig) -> Result<Experiment> {
        config.validate()?;
        let data = match &config.variables {
            Some(vars) => {
                let mut names: Vec<String> = vars.iter().filter(|v| **v != config.y).cloned().collect();
                names.push(config.y.clone());
                data.select_columns(&names)?
            }
            None => data.clone(),
        };
        data.column_index(&config.y)?;
        let step_one = StepOne::fit(&data, &config.y, &config.population_forest.with_seed(derive_seed(config.seed, &[1])), config.nonnegative)?;
        let step_two = StepTwo::fit(&data, &config.y, &config.population_forest.with_seed(derive_seed(config.seed, &[2])))?;
        Ok(Experiment {
            data,
            config,
            step_one,
            step_two,
        })
    }

    /// Builds an experiment from already fitted steps.
    pub fn from_steps(data: Dataset, config: ExperimentConfig, step_one: StepOne, step_two: StepTwo) -> Result<Experiment> {
        config.validate()?;
        Ok(Experiment {
            data,
            config,
            step_one,
            step_two,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn step_one(&self) -> &StepOne {
        &self.step_one
    }

    pub fn step_two(&self) -> &StepTwo {
        &self.step_two
    }

    /// Runs trial `m`, which depends only on the master seed and `m`.
    pub fn run_trial(&self, m: usize) -> Result<Vec<TrialRecord>> {
        let cfg = &self.config;
        let seed = cfg.seed;
        let t = m as u64;
        let p1 = self.step_one.generate(&self.data, &mut stream(seed, &[10, t]))?;
        let p2 = self.step_two.generate(&p1, &mut stream(seed, &[11, t]))?;
        let mut out = Vec::with_capacity(cfg.fractions.len() * cfg.methods.len());
        for (fi, &fraction) in cfg.fractions.iter().enumerate() {
            let mut rng: StreamRng = stream(seed, &[12, t, fi as u64]);
            let rows = srswor_indices(p2.data.n_rows(), fraction, &mut rng)?;
            let sample = p2.data.select_rows(&rows);
            for &method in &cfg.methods {
                let mut est = cfg.estimators;
                let mseed = derive_seed(seed, &[13, t, fi as u64, method as u64]);
                est.forest.seed = mseed;
                est.gmice.seed = mseed;
                est.keep_artifacts = false;
                let start = Instant::now();
                let result = match method {
                    Method::Oracle => Ok(p2.mu),
                    _ => estimate(method, &sample, &cfg.y, &est).map(|r| r.estimate),
                };
                let seconds = start.elapsed().as_secs_f64();
                let (muhat, error) = match result {
                    Ok(v) if v.is_finite() => (Some(v), None),
                    Ok(v) => (None, Some(format!("non-finite estimate {v}"))),
                    Err(e) => (None, Some(e.to_string())),
                };
                out.push(TrialRecord {
                    method,
                    fraction,
                    trial: m,
                    mu: p2.mu,
                    muhat,
                    seconds,
                    error,
                });
            }
        }
        Ok(out)
    }

    pub fn run(&self) -> Result<ExperimentReport> {
        let order: Vec<usize> = (0..self.config.trials).collect();
        self.run_with_order(&order)
    }

    /// Runs the trials in the given order (a permutation of `0..trials`);
    /// the report does not depend on it.
    pub fn run_with_order(&self, order: &[usize]) -> Result<ExperimentReport> {
        let mut seen = vec![false; self.config.trials];
        for &m in order {
            if m >= seen.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidArgument("trial order must be a permutation".into()));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("trial order must be a permutation".into()));
        }
        let batches: Vec<Vec<TrialRecord>> = order.par_iter().map(|&m| self.run_trial(m)).collect::<Result<_>>()?;
        let mut records: Vec<TrialRecord> = batches.into_iter().flatten().collect();
        let cfg = &self.config;
        let f_index = |f: f64| cfg.fractions.iter().position(|&x| x == f).unwrap_or(usize::MAX);
        let m_index = |m: Method| cfg.methods.iter().position(|&x| x == m).unwrap_or(usize::MAX);
        records.sort_by_key(|r| (r.trial, f_index(r.fraction), m_index(r.method)));
        Ok(self.summarize(records))
    }

    fn summarize(&self, records: Vec<TrialRecord>) -> ExperimentReport {
        let cfg = &self.config;
        let n = self.data.n_rows();
        let mut summaries = Vec::new();
        for &fraction in &cfg.fractions {
            for &method in &cfg.methods {
                let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.method == method && r.fraction == fraction).collect();
                let ok: Vec<&&TrialRecord> = rs.iter().filter(|r| r.muhat.is_some()).collect();
                let errors: Vec<f64> = ok.iter().map(|r| r.muhat.expect("ok") - r.mu).collect();
                let failures = rs.len() - ok.len();
                let mean_seconds = if ok.is_empty() {
                    0.0
                } else {
                    ok.iter().map(|r| r.seconds).sum::<f64>() / ok.len() as f64
                };
                summaries.push(MethodSummary {
                    method,
                    fraction,
                    sample_size: crate::dataset::sample_size(n, fraction).unwrap_or(0),
                    trials: ok.len(),
                    failures,
                    status: if failures == 0 { "OK" } else { "FAIL" }.to_owned(),
                    stats: ErrorStats::from_errors(&errors),
                    mean_seconds,
                });
            }
        }
        ExperimentReport {
            y: cfg.y.clone(),
            n_population: n,
            n_variables: self.data.n_cols() - 1,
            trials: cfg.trials,
            seed: cfg.seed,
            fractions: cfg.fractions.clone(),
            methods: cfg.methods.clone(),
            step_one_sigma: self.step_one.sigma(),
            summaries,
            records,
        }
    }
}

/// Prepares and runs an experiment.
pub fn run_experiment(data: &Dataset, config: ExperimentConfig) -> Result<ExperimentReport> {
    Experiment::prepare(data, config)?.run()
}
