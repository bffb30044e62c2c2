//! Population-mean estimators for a variable with missing values.
//!
//! Two base forms are shared by every method:
//!
//! * inverse probability weighting over the observed rows,
//!   `sum(y_i / p_i) / sum(1 / p_i)`;
//! * the completed-sample mean, with imputations `yhat_j` for missing rows,
//!   `(sum y_i + sum yhat_j) / n`.
//!
//! | method | model | form |
//! |--------|-------|------|
//! | SIM    | none | mean of observed values |
//! | GCT / RCT | guide / greedy classification tree of the missing flag | leaf-mean imputation |
//! | GRT / RRT | guide / greedy regression tree on observed rows | leaf-mean imputation |
//! | GCF    | guide classification forest of the missing flag | IPW |
//! | GRF    | guide regression forest | forest-mean imputation |
//! | GMICE  | chained guide trees | pooled completed mean |

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{derive_flag, Dataset, Flag};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestParams};
use crate::frame::TrainingSet;
use crate::gmice::{gmice_impute, pool_mean, GmiceParams};
use crate::split::Mode;
use crate::tree::{self, NodeStats, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Sim,
    Gct,
    Rct,
    Grt,
    Rrt,
    Gcf,
    Grf,
    Gmice,
    /// Returns the true population mean; only meaningful inside a simulation.
    Oracle,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Sim,
        Method::Gct,
        Method::Rct,
        Method::Grt,
        Method::Rrt,
        Method::Gcf,
        Method::Grf,
        Method::Gmice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sim => "SIM",
            Method::Gct => "GCT",
            Method::Rct => "RCT",
            Method::Grt => "GRT",
            Method::Rrt => "RRT",
            Method::Gcf => "GCF",
            Method::Grf => "GRF",
            Method::Gmice => "GMICE",
            Method::Oracle => "ORACLE",
        }
    }

    /// Parses a comma-separated list such as `sim,gct,grf`.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("no methods given".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = s.trim().to_ascii_uppercase();
        Method::ALL
            .into_iter()
            .chain([Method::Oracle])
            .find(|x| x.name() == m)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// Outcome of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub method: Method,
    pub estimate: f64,
    pub seconds: f64,
    /// `(row, value)` for each imputed row.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub imputed: Vec<(usize, f64)>,
    /// `(row, propensity)` for each observed row of a weighting method.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub propensities: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EstimatorResult {
    fn new(method: Method, estimate: f64) -> Self {
        EstimatorResult {
            method,
            estimate,
            seconds: 0.0,
            imputed: Vec::new(),
            propensities: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// Model settings for every method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Single trees (GCT, RCT, GRT, RRT); the mode is set per method.
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub gmice: GmiceParams,
    /// Lower clip for forest propensities.
    pub propensity_floor: f64,
    /// Score each observed row with the trees that did not train on it.
    pub out_of_bag: bool,
    /// Keep per-row imputations and propensities in results.
    pub keep_artifacts: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            tree: TreeParams::default(),
            forest: ForestParams::default(),
            gmice: GmiceParams::default(),
            propensity_floor: 0.01,
            out_of_bag: true,
            keep_artifacts: false,
        }
    }
}

/// Ratio-form IPW mean of the observed values.
pub fn ipw_estimate(y_obs: &[f64], pi_hat: &[f64]) -> Result<f64> {
    if y_obs.len() != pi_hat.len() {
        return Err(Error::InvalidArgument(format!(
            "{} values but {} propensities",
            y_obs.len(),
            pi_hat.len()
        )));
    }
    if y_obs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if let Some(p) = pi_hat.iter().find(|&&p| !(p > 0.0)) {
        return Err(Error::InvalidArgument(format!("propensity {p} is not positive")));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (y, p) in y_obs.iter().zip(pi_hat) {
        num += y / p;
        den += 1.0 / p;
    }
    Ok(num / den)
}

/// Mean of observed and imputed values together.
pub fn completed_mean(y_obs: &[f64], y_imp: &[f64]) -> Result<f64> {
    let n = y_obs.len() + y_imp.len();
    if n == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    Ok((y_obs.iter().sum::<f64>() + y_imp.iter().sum::<f64>()) / n as f64)
}

fn ordinal_y<'a>(data: &'a Dataset, y: &str) -> Result<&'a [Option<f64>]> {
    let values = data
        .column_by_name(y)?
        .ordinal_values()
        .ok_or_else(|| Error::InvalidArgument(format!("`{y}` must be ordinal")))?;
    if values.iter().all(Option::is_none) {
        return Err(Error::AllMissing(y.to_owned()));
    }
    Ok(values)
}

fn split_rows(values: &[Option<f64>]) -> (Vec<usize>, Vec<usize>) {
    (0..values.len()).partition(|&r| values[r].is_some())
}

fn finish_imputation(method: Method, values: &[Option<f64>], imputed: Vec<(usize, f64)>, keep: bool) -> Result<EstimatorResult> {
    let obs: Vec<f64> = values.iter().flatten().copied().collect();
    let imp: Vec<f64> = imputed.iter().map(|&(_, v)| v).collect();
    let mut res = EstimatorResult::new(method, completed_mean(&obs, &imp)?);
    if keep {
        res.imputed = imputed;
    }
    Ok(res)
}

/// Mean of the observed values.
pub fn estimate_sim(data: &Dataset, y: &str) -> Result<EstimatorResult> {
    let values = ordinal_y(data, y)?;
    let obs: Vec<f64> = values.iter().flatten().copied().collect();
    Ok(EstimatorResult::new(Method::Sim, obs.iter().sum::<f64>() / obs.len() as f64))
}

/// Classification tree of the missing flag of `y`; missing values are
/// imputed with the observed mean of their leaf. A leaf without observed
/// values borrows the observed mean of its nearest ancestor that has some.
/// The observed-row proportions `p(t)` of the leaves are reported as
/// propensities.
pub fn estimate_cell_tree(data: &Dataset, y: &str, mode: Mode, params: &TreeParams, keep: bool) -> Result<EstimatorResult> {
    let values = ordinal_y(data, y)?;
    let flag = derive_flag(data, y)?;
    let set = TrainingSet::for_flag(data, &flag)?;
    let params = TreeParams { mode, ..*params };
    let fitted = tree::fit(&set, &params)?;
    let nodes = fitted.nodes();
    let mut obs_n = vec![0usize; nodes.len()];
    let mut obs_sum = vec![0.0; nodes.len()];
    let mut leaf_of = vec![0usize; data.n_rows()];
    for (r, v) in values.iter().enumerate() {
        let path = fitted.path(data, r);
        leaf_of[r] = *path.last().expect("nonempty path");
        if let Some(v) = v {
            for &id in &path {
                obs_n[id] += 1;
                obs_sum[id] += v;
            }
        }
    }
    let mut warnings = Vec::new();
    let mut imputed = Vec::new();
    for (r, v) in values.iter().enumerate() {
        if v.is_some() {
            continue;
        }
        let mut id = leaf_of[r];
        if obs_n[id] == 0 && !warnings.iter().any(|w: &String| w.contains(&format!("leaf {id} "))) {
            warnings.push(format!("leaf {id} has no observed values; using an ancestor mean"));
        }
        while obs_n[id] == 0 {
            id = nodes[id].parent.expect("root has observed values");
        }
        imputed.push((r, obs_sum[id] / obs_n[id] as f64));
    }
    let method = if mode == Mode::Guide { Method::Gct } else { Method::Rct };
    let mut res = finish_imputation(method, values, imputed, keep)?;
    if keep {
        res.propensities = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_some())
            .map(|(r, _)| {
                let leaf = &nodes[leaf_of[r]];
                let p = match &leaf.stats {
                    NodeStats::Class { counts } => counts[Flag::Observed as usize] as f64 / leaf.n as f64,
                    NodeStats::Mean { .. } => unreachable!(),
                };
                (r, p)
            })
            .collect();
    }
    res.warnings = warnings;
    Ok(res)
}

/// Regression tree of `y` on the observed rows; missing values are imputed
/// with their leaf mean.
pub fn estimate_reg_tree(data: &Dataset, y: &str, mode: Mode, params: &TreeParams, keep: bool) -> Result<EstimatorResult> {
    let values = ordinal_y(data, y)?;
    let set = TrainingSet::for_column(data, y)?;
    let params = TreeParams { mode, ..*params };
    let fitted = tree::fit(&set, &params)?;
    let (_, missing) = split_rows(values);
    let imputed = missing.iter().map(|&r| (r, fitted.predict_mean(data, r))).collect();
    let method = if mode == Mode::Guide { Method::Grt } else { Method::Rrt };
    finish_imputation(method, values, imputed, keep)
}

/// IPW with observed-value propensities from a classification forest of the
/// missing flag, clipped below at `floor`. With `out_of_bag` each row is
/// scored only by trees whose bootstrap sample left it out; in-sample scores
/// sit near 1 because unpruned leaves are nearly pure.
pub fn estimate_cell_forest(
    data: &Dataset,
    y: &str,
    params: &ForestParams,
    floor: f64,
    out_of_bag: bool,
    keep: bool,
) -> Result<EstimatorResult> {
    if !(floor > 0.0 && floor <= 1.0) {
        return Err(Error::InvalidArgument(format!("propensity floor {floor} outside (0, 1]")));
    }
    let values = ordinal_y(data, y)?;
    let flag = derive_flag(data, y)?;
    let set = TrainingSet::for_flag(data, &flag)?;
    let forest = fit_forest(&set, params)?;
    let (observed, _) = split_rows(values);
    let probs = if out_of_bag {
        forest.oob_predict_proba(&set, &observed)
    } else {
        forest.predict_proba_rows(data, &observed)
    };
    let pi: Vec<f64> = probs.iter().map(|p| p[Flag::Observed as usize].clamp(floor, 1.0)).collect();
    let y_obs: Vec<f64> = observed.iter().map(|&r| values[r].expect("observed")).collect();
    let mut res = EstimatorResult::new(Method::Gcf, ipw_estimate(&y_obs, &pi)?);
    if keep {
        res.propensities = observed.into_iter().zip(pi).collect();
    }
    Ok(res)
}

/// Regression forest of `y` on the observed rows; missing values are imputed
/// with the forest mean.
pub fn estimate_reg_forest(data: &Dataset, y: &str, params: &ForestParams, keep: bool) -> Result<EstimatorResult> {
    let values = ordinal_y(data, y)?;
    let set = TrainingSet::for_column(data, y)?;
    let forest = fit_forest(&set, params)?;
    let (_, missing) = split_rows(values);
    let preds = forest.predict_mean_rows(data, &missing);
    finish_imputation(Method::Grf, values, missing.into_iter().zip(preds).collect(), keep)
}

/// Chained imputation of every incomplete column, pooled over chains.
/// Columns with no observed values carry no information and are dropped
/// first (the response itself must have observed values).
pub fn estimate_gmice(data: &Dataset, y: &str, params: &GmiceParams) -> Result<EstimatorResult> {
    ordinal_y(data, y)?;
    let keep: Vec<&str> = data
        .columns()
        .filter(|c| c.missing_count() < c.len())
        .map(|c| c.name())
        .collect();
    let mut res_warnings = Vec::new();
    let reduced;
    let data = if keep.len() < data.n_cols() {
        res_warnings.push(format!("dropped {} columns with no observed values", data.n_cols() - keep.len()));
        reduced = data.select_columns(&keep)?;
        &reduced
    } else {
        data
    };
    let chains = gmice_impute(data, params)?;
    let mut res = EstimatorResult::new(Method::Gmice, pool_mean(&chains, y)?);
    res.warnings = res_warnings;
    Ok(res)
}

/// Runs one method and records its wall time.
pub fn estimate(method: Method, data: &Dataset, y: &str, config: &EstimatorConfig) -> Result<EstimatorResult> {
    let start = Instant::now();
    let keep = config.keep_artifacts;
    let mut res = match method {
        Method::Sim => estimate_sim(data, y),
        Method::Gct => estimate_cell_tree(data, y, Mode::Guide, &config.tree, keep),
        Method::Rct => estimate_cell_tree(data, y, Mode::Greedy, &config.tree, keep),
        Method::Grt => estimate_reg_tree(data, y, Mode::Guide, &config.tree, keep),
        Method::Rrt => estimate_reg_tree(data, y, Mode::Greedy, &config.tree, keep),
        Method::Gcf => estimate_cell_forest(data, y, &config.forest, config.propensity_floor, config.out_of_bag, keep),
        Method::Grf => estimate_reg_forest(data, y, &config.forest, keep),
        Method::Gmice => estimate_gmice(data, y, &config.gmice),
        Method::Oracle => Err(Error::Refused("the oracle method needs a known population mean".into())),
    }?;
    res.seconds = start.elapsed().as_secs_f64();
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Column;

    #[test]
    fn ipw_hand_values() {
        assert_eq!(ipw_estimate(&[2.0, 4.0], &[0.5, 0.5]).unwrap(), 3.0);
        let v = ipw_estimate(&[2.0, 4.0], &[0.25, 0.5]).unwrap();
        assert!((v - 16.0 / 6.0).abs() < 1e-15);
        assert!(ipw_estimate(&[1.0], &[0.0]).is_err());
        assert!(ipw_estimate(&[], &[]).is_err());
    }

    #[test]
    fn completed_mean_hand_values() {
        assert_eq!(completed_mean(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 2.0);
        assert!(completed_mean(&[], &[]).is_err());
    }

    #[test]
    fn method_names_parse() {
        assert_eq!(Method::parse_list("sim, GCT,grf").unwrap(), vec![Method::Sim, Method::Gct, Method::Grf]);
        assert!(Method::parse_list("sim,foo").is_err());
        assert_eq!(Method::Gmice.to_string(), "GMICE");
    }

    #[test]
    fn uninformative_data_reduces_to_sim() {
        let d = Dataset::new(vec![
            Column::ordinal("x", vec![Some(1.0); 40]),
            Column::ordinal("y", (0..40).map(|i| if i % 4 == 0 { None } else { Some(i as f64) }).collect()),
        ])
        .unwrap();
        let sim = estimate_sim(&d, "y").unwrap().estimate;
        let config = EstimatorConfig::default();
        for m in [Method::Gct, Method::Rct, Method::Grt, Method::Rrt] {
            let e = estimate(m, &d, "y", &config).unwrap().estimate;
            assert!((e - sim).abs() < 1e-12, "{m}: {e} vs {sim}");
        }
    }
}
