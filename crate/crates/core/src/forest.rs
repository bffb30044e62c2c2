//! Bagged ensembles of unpruned guide trees.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::frame::{Response, TrainingSet};
use crate::rng::{derive_seed, StreamRng};
use crate::tree::{self, column_infos, ColumnInfo, NodeDoc, NodeStats, ResponseInfo, Tree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    /// Fit each tree on an n-out-of-n bootstrap resample; `false` reuses the
    /// training rows as they are.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            tree: TreeParams {
                min_node_size: 5,
                max_depth: None,
                max_surrogates: 0,
                ..TreeParams::guide()
            },
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_trees(mut self, n: usize) -> Self {
        self.n_trees = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
        }
        self.tree.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    seeds: Vec<u64>,
    params: ForestParams,
    columns: Arc<Vec<ColumnInfo>>,
    response: ResponseInfo,
}

/// Training rows of one tree, drawn first from the tree's stream.
fn draw_rows(base: &[usize], bootstrap: bool, rng: &mut StreamRng) -> Vec<usize> {
    if bootstrap {
        (0..base.len()).map(|_| base[rng.random_range(0..base.len())]).collect()
    } else {
        base.to_vec()
    }
}

fn grow_one(set: &TrainingSet<'_>, params: &ForestParams, seed: u64, columns: &Arc<Vec<ColumnInfo>>) -> Result<Tree> {
    let mut rng = StreamRng::seed_from_u64(seed);
    let rows = draw_rows(set.rows(), params.bootstrap, &mut rng);
    tree::fit_rows(set, rows, &params.tree, Some(&mut rng), Arc::clone(columns))
}

/// Fits `params.n_trees` trees in parallel; tree `t` uses a seed derived from
/// the master seed and `t` only.
pub fn fit_forest(set: &TrainingSet<'_>, params: &ForestParams) -> Result<Forest> {
    params.validate()?;
    if set.rows().is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let columns = Arc::new(column_infos(set.data()));
    // Build the shared sort orders once, before the workers start.
    let _ = set.orders();
    let seeds: Vec<u64> = (0..params.n_trees as u64).map(|t| derive_seed(params.seed, &[t])).collect();
    let trees = seeds
        .par_iter()
        .map(|&s| grow_one(set, params, s, &columns))
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        trees,
        seeds,
        params: *params,
        columns,
        response: match set.response() {
            Response::Class { labels, .. } => ResponseInfo::Class {
                name: set.response_name().to_owned(),
                labels: labels.clone(),
            },
            Response::Numeric(_) => ResponseInfo::Numeric {
                name: set.response_name().to_owned(),
            },
        },
    })
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn response(&self) -> &ResponseInfo {
        &self.response
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.response, ResponseInfo::Class { .. })
    }

    /// Refits tree `t` from the training set alone.
    pub fn refit_tree(&self, set: &TrainingSet<'_>, t: usize) -> Result<Tree> {
        let seed = *self
            .seeds
            .get(t)
            .ok_or_else(|| Error::InvalidArgument(format!("forest has no tree {t}")))?;
        grow_one(set, &self.params, seed, &self.columns)
    }

    /// Multiplicity of each dataset row in tree `t`'s training sample, given
    /// the base rows the forest was fit on.
    pub fn in_bag_counts(&self, t: usize, base: &[usize], n_rows: usize) -> Vec<u32> {
        let mut rng = StreamRng::seed_from_u64(self.seeds[t]);
        let mut counts = vec![0u32; n_rows];
        for r in draw_rows(base, self.params.bootstrap, &mut rng) {
            counts[r] += 1;
        }
        counts
    }

    /// Out-of-bag class probabilities for training rows of `set`: each row
    /// averages only the trees whose sample left it out. Rows that every
    /// tree saw fall back to the full forest.
    pub fn oob_predict_proba(&self, set: &TrainingSet<'_>, rows: &[usize]) -> Vec<Vec<f64>> {
        let data = set.data();
        let k = self.n_classes();
        let mut sums = vec![vec![0.0; k]; rows.len()];
        let mut used = vec![0usize; rows.len()];
        for (t, tree) in self.trees.iter().enumerate() {
            let counts = self.in_bag_counts(t, set.rows(), data.n_rows());
            for (i, &r) in rows.iter().enumerate() {
                if counts[r] == 0 {
                    add_leaf_proportions(tree, data, r, &mut sums[i]);
                    used[i] += 1;
                }
            }
        }
        sums.into_iter()
            .zip(used)
            .zip(rows)
            .map(|((mut s, u), &r)| {
                if u == 0 {
                    return self.predict_proba(data, r);
                }
                s.iter_mut().for_each(|p| *p /= u as f64);
                s
            })
            .collect()
    }

    fn n_classes(&self) -> usize {
        match &self.response {
            ResponseInfo::Class { labels, .. } => labels.len(),
            ResponseInfo::Numeric { .. } => 0,
        }
    }

    /// Average of the trees' leaf class proportions.
    pub fn predict_proba(&self, data: &Dataset, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_classes()];
        for t in &self.trees {
            add_leaf_proportions(t, data, row, &mut out);
        }
        let m = self.trees.len() as f64;
        out.iter_mut().for_each(|p| *p /= m);
        out
    }

    /// Average of the trees' leaf means.
    pub fn predict_mean(&self, data: &Dataset, row: usize) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_mean(data, row)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict_proba_rows(&self, data: &Dataset, rows: &[usize]) -> Vec<Vec<f64>> {
        rows.par_iter().map(|&r| self.predict_proba(data, r)).collect()
    }

    pub fn predict_mean_rows(&self, data: &Dataset, rows: &[usize]) -> Vec<f64> {
        rows.par_iter().map(|&r| self.predict_mean(data, r)).collect()
    }

    /// Serialized form: the tree node lists plus shared column metadata.
    pub fn to_document(&self) -> ForestDocument {
        ForestDocument {
            format: FOREST_FORMAT.to_owned(),
            response: self.response.clone(),
            params: self.params,
            columns: (*self.columns).clone(),
            trees: self
                .trees
                .iter()
                .zip(&self.seeds)
                .map(|(t, &seed)| TreeBody {
                    seed,
                    nodes: t.node_docs(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        let doc: ForestDocument = serde_json::from_str(text)?;
        if doc.format != FOREST_FORMAT {
            return Err(Error::InvalidArgument(format!("unsupported forest format `{}`", doc.format)));
        }
        let columns = Arc::new(doc.columns);
        let mut trees = Vec::with_capacity(doc.trees.len());
        let mut seeds = Vec::with_capacity(doc.trees.len());
        for body in doc.trees {
            seeds.push(body.seed);
            trees.push(Tree::from_parts(
                body.nodes,
                doc.params.tree,
                Arc::clone(&columns),
                doc.response.clone(),
            )?);
        }
        if trees.is_empty() {
            return Err(Error::InvalidArgument("forest has no trees".into()));
        }
        Ok(Forest {
            trees,
            seeds,
            params: doc.params,
            columns,
            response: doc.response,
        })
    }

    /// Re-targets every tree to the column layout of `data`.
    pub fn align(&self, data: &Dataset) -> Result<Forest> {
        let trees = self.trees.iter().map(|t| t.align(data)).collect::<Result<Vec<_>>>()?;
        Ok(Forest {
            trees,
            seeds: self.seeds.clone(),
            params: self.params,
            columns: Arc::new(column_infos(data)),
            response: self.response.clone(),
        })
    }
}

fn add_leaf_proportions(tree: &Tree, data: &Dataset, row: usize, out: &mut [f64]) {
    let leaf = tree.node(tree.route(data, row));
    if let NodeStats::Class { counts } = &leaf.stats {
        for (o, &c) in out.iter_mut().zip(counts) {
            *o += c as f64 / leaf.n as f64;
        }
    }
}

/// In-sample root mean squared residual of a regression forest over the
/// training rows of `set`.
pub fn residual_sigma(forest: &Forest, set: &TrainingSet<'_>) -> Result<f64> {
    let Response::Numeric(y) = set.response() else {
        return Err(Error::InvalidArgument("residual_sigma needs a numeric response".into()));
    };
    let rows = set.rows();
    if rows.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let pred = forest.predict_mean_rows(set.data(), rows);
    let sse: f64 = rows
        .iter()
        .zip(&pred)
        .map(|(&r, p)| {
            let e = y[r].expect("training row has a response") - p;
            e * e
        })
        .sum();
    Ok((sse / rows.len() as f64).sqrt())
}

pub const FOREST_FORMAT: &str = "treeimpute-forest/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestDocument {
    pub format: String,
    pub response: ResponseInfo,
    pub params: ForestParams,
    pub columns: Vec<ColumnInfo>,
    pub trees: Vec<TreeBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeBody {
    pub seed: u64,
    pub nodes: Vec<NodeDoc>,
}
