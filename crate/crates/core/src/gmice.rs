//! Chained-equations multiple imputation with guide trees as the
//! per-variable conditional models.
//!
//! Each chain starts from mean/mode imputation and then repeatedly visits
//! every incomplete column: a tree of that column on all other (currently
//! completed) columns is fitted on the rows where the column was originally
//! observed, and every originally missing cell is replaced by a donor drawn
//! from its leaf.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{save_csv, ColumnData, Dataset};
use crate::error::{Error, Result};
use crate::frame::{Response, TrainingSet};
use crate::rng::{stream, StreamRng};
use crate::tree::{self, NodeStats, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitOrder {
    /// Most missing cells first, ties by column position.
    #[default]
    MissingDescending,
    /// Dataset column order.
    Columns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafFill {
    /// A random training value from the leaf.
    #[default]
    Donor,
    /// The leaf mean (ordinal) or majority level (categorical).
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmiceParams {
    pub m: usize,
    pub iterations: usize,
    pub tree: TreeParams,
    pub seed: u64,
    pub fill: LeafFill,
    pub order: VisitOrder,
}

impl Default for GmiceParams {
    fn default() -> Self {
        GmiceParams {
            m: 5,
            iterations: 10,
            tree: TreeParams::guide().with_min_node_size(5),
            seed: 0,
            fill: LeafFill::Donor,
            order: VisitOrder::MissingDescending,
        }
    }
}

impl GmiceParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.iterations == 0 {
            return Err(Error::InvalidArgument("m and iterations must be at least 1".into()));
        }
        self.tree.validate()
    }
}

/// Rows originally missing in each column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingMask {
    pub columns: Vec<Vec<usize>>,
}

impl MissingMask {
    pub fn of(data: &Dataset) -> MissingMask {
        MissingMask {
            columns: data
                .columns()
                .map(|c| (0..c.len()).filter(|&r| c.data().is_missing(r)).collect())
                .collect(),
        }
    }

    pub fn is_missing(&self, col: usize, row: usize) -> bool {
        self.columns[col].binary_search(&row).is_ok()
    }

    pub fn total(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }
}

/// A dataset without missing cells plus the mask of cells that were filled.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedDataset {
    pub data: Dataset,
    pub mask: Arc<MissingMask>,
}

impl CompletedDataset {
    /// Writes the data as CSV and the filled cells as a `row,column` CSV.
    pub fn save(&self, data_path: impl AsRef<Path>, mask_path: impl AsRef<Path>) -> Result<()> {
        save_csv(&self.data, data_path)?;
        let mut out = std::io::BufWriter::new(fs::File::create(mask_path)?);
        writeln!(out, "row,column")?;
        let names = self.data.names();
        let mut cells: Vec<(usize, usize)> = self
            .mask
            .columns
            .iter()
            .enumerate()
            .flat_map(|(c, rows)| rows.iter().map(move |&r| (r, c)))
            .collect();
        cells.sort_unstable();
        for (r, c) in cells {
            writeln!(out, "{r},{}", csv_field(names[c]))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Mean imputation for ordinal columns and modal level (ties to the first
/// level) for categorical columns.
pub fn initialize(data: &Dataset) -> Result<CompletedDataset> {
    let mask = Arc::new(MissingMask::of(data));
    let mut out = data.clone();
    for (i, col) in data.columns().enumerate() {
        if mask.columns[i].is_empty() {
            continue;
        }
        if mask.columns[i].len() == col.len() {
            return Err(Error::AllMissing(col.name().to_owned()));
        }
        let filled = match col.data() {
            ColumnData::Ordinal(v) => {
                let obs: Vec<f64> = v.iter().flatten().copied().collect();
                let mean = obs.iter().sum::<f64>() / obs.len() as f64;
                ColumnData::Ordinal(v.iter().map(|x| Some(x.unwrap_or(mean))).collect())
            }
            ColumnData::Categorical { codes, levels } => {
                let mut counts = vec![0usize; levels.len()];
                codes.iter().flatten().for_each(|&c| counts[c as usize] += 1);
                let mut mode = 0;
                for (c, &k) in counts.iter().enumerate() {
                    if k > counts[mode] {
                        mode = c;
                    }
                }
                ColumnData::Categorical {
                    codes: codes.iter().map(|c| Some(c.unwrap_or(mode as u32))).collect(),
                    levels: levels.clone(),
                }
            }
        };
        out = out.with_column_data(i, filled)?;
    }
    Ok(CompletedDataset { data: out, mask })
}

/// Visit order of the incomplete columns.
pub fn visit_order(mask: &MissingMask, order: VisitOrder) -> Vec<usize> {
    let mut cols: Vec<usize> = (0..mask.columns.len()).filter(|&c| !mask.columns[c].is_empty()).collect();
    if order == VisitOrder::MissingDescending {
        cols.sort_by(|&a, &b| mask.columns[b].len().cmp(&mask.columns[a].len()).then(a.cmp(&b)));
    }
    cols
}

/// One pass over `order`, refitting each column's tree and refilling its
/// masked cells.
pub fn gmice_cycle(
    completed: &CompletedDataset,
    order: &[usize],
    params: &GmiceParams,
    rng: &mut StreamRng,
) -> Result<CompletedDataset> {
    let mask = &completed.mask;
    let mut data = completed.data.clone();
    for &col in order {
        let missing = &mask.columns[col];
        if missing.is_empty() {
            continue;
        }
        let column = data.column(col);
        let response = match column.data() {
            ColumnData::Ordinal(v) => {
                let mut v = v.clone();
                missing.iter().for_each(|&r| v[r] = None);
                Response::Numeric(v)
            }
            ColumnData::Categorical { codes, levels } => {
                let mut codes = codes.clone();
                missing.iter().for_each(|&r| codes[r] = None);
                Response::Class {
                    codes,
                    labels: levels.clone(),
                }
            }
        };
        let set = TrainingSet::new(&data, column.name(), response, &[col])?;
        let fitted = tree::fit(&set, &params.tree)?;
        // Training rows per leaf form the donor pools.
        let mut pools: Vec<Vec<usize>> = vec![Vec::new(); fitted.nodes().len()];
        for &r in set.rows() {
            pools[fitted.route(&data, r)].push(r);
        }
        let filled = match column.data() {
            ColumnData::Ordinal(v) => {
                let mut v = v.clone();
                for &r in missing {
                    let leaf = fitted.route(&data, r);
                    v[r] = Some(match params.fill {
                        LeafFill::Donor => {
                            let pool = &pools[leaf];
                            v[pool[rng.random_range(0..pool.len())]].expect("donor observed")
                        }
                        LeafFill::Mean => fitted.node(leaf).mean(),
                    });
                }
                ColumnData::Ordinal(v)
            }
            ColumnData::Categorical { codes, levels } => {
                let mut codes = codes.clone();
                for &r in missing {
                    let leaf = fitted.route(&data, r);
                    codes[r] = Some(match params.fill {
                        LeafFill::Donor => {
                            let pool = &pools[leaf];
                            codes[pool[rng.random_range(0..pool.len())]].expect("donor observed")
                        }
                        LeafFill::Mean => match &fitted.node(leaf).stats {
                            NodeStats::Class { counts } => {
                                let mut best = 0;
                                for (c, &k) in counts.iter().enumerate() {
                                    if k > counts[best] {
                                        best = c;
                                    }
                                }
                                best as u32
                            }
                            NodeStats::Mean { .. } => unreachable!(),
                        },
                    });
                }
                ColumnData::Categorical {
                    codes,
                    levels: levels.clone(),
                }
            }
        };
        data = data.with_column_data(col, filled)?;
    }
    Ok(CompletedDataset {
        data,
        mask: Arc::clone(mask),
    })
}

/// Runs `params.m` independent chains; chain `k` is seeded from
/// `(params.seed, k)`.
pub fn gmice_impute(data: &Dataset, params: &GmiceParams) -> Result<Vec<CompletedDataset>> {
    params.validate()?;
    let start = initialize(data)?;
    let order = visit_order(&start.mask, params.order);
    (0..params.m as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(params.seed, &[k]);
            let mut cur = start.clone();
            for _ in 0..params.iterations {
                cur = gmice_cycle(&cur, &order, params, &mut rng)?;
            }
            Ok(cur)
        })
        .collect()
}

/// Average over chains of the completed-sample mean of ordinal column `y`.
pub fn pool_mean(chains: &[CompletedDataset], y: &str) -> Result<f64> {
    if chains.is_empty() {
        return Err(Error::InvalidArgument("no completed datasets to pool".into()));
    }
    let mut total = 0.0;
    for c in chains {
        let values = c
            .data
            .column_by_name(y)?
            .ordinal_values()
            .ok_or_else(|| Error::InvalidArgument(format!("`{y}` is not ordinal")))?;
        let n = values.len();
        if n == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        total += values.iter().map(|v| v.expect("completed")).sum::<f64>() / n as f64;
    }
    Ok(total / chains.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Column;

    #[test]
    fn initialization_uses_mean_and_mode() {
        let d = Dataset::new(vec![
            Column::ordinal("x", vec![Some(1.0), None, Some(3.0), Some(2.0)]),
            Column::categorical("c", &[Some("a"), Some("a"), None, Some("b")]),
        ])
        .unwrap();
        let c = initialize(&d).unwrap();
        assert_eq!(c.data.column(0).ordinal_values().unwrap()[1], Some(2.0));
        assert_eq!(c.data.column(1).cell_text(2).as_deref(), Some("a"));
    }

    #[test]
    fn all_missing_column_is_named() {
        let d = Dataset::new(vec![
            Column::ordinal("x", vec![Some(1.0), Some(2.0)]),
            Column::ordinal("gone", vec![None, None]),
        ])
        .unwrap();
        match initialize(&d) {
            Err(Error::AllMissing(name)) => assert_eq!(name, "gone"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn complete_data_is_a_fixed_point() {
        let d = Dataset::new(vec![
            Column::ordinal("x", (0..30).map(|i| Some(i as f64)).collect()),
            Column::categorical("c", &(0..30).map(|i| Some(["a", "b"][i % 2])).collect::<Vec<_>>()),
        ])
        .unwrap();
        let params = GmiceParams {
            m: 2,
            iterations: 3,
            ..GmiceParams::default()
        };
        for chain in gmice_impute(&d, &params).unwrap() {
            assert_eq!(chain.data, d);
        }
    }

    #[test]
    fn donors_come_from_observed_values() {
        let x: Vec<Option<f64>> = (0..60).map(|i| if i % 7 == 0 { None } else { Some((i % 5) as f64) }).collect();
        let d = Dataset::new(vec![
            Column::ordinal("x", x.clone()),
            Column::ordinal("z", (0..60).map(|i| Some(i as f64)).collect()),
        ])
        .unwrap();
        let chains = gmice_impute(
            &d,
            &GmiceParams {
                m: 2,
                iterations: 2,
                ..GmiceParams::default()
            },
        )
        .unwrap();
        let support: Vec<f64> = x.iter().flatten().copied().collect();
        for c in &chains {
            let v = c.data.column(0).ordinal_values().unwrap();
            for r in 0..60 {
                match x[r] {
                    Some(orig) => assert_eq!(v[r], Some(orig)),
                    None => assert!(support.contains(&v[r].unwrap())),
                }
            }
        }
    }

    #[test]
    fn pooled_mean_averages_chains() {
        let a = Dataset::new(vec![Column::ordinal("y", vec![Some(4.0), Some(4.0)])]).unwrap();
        let b = Dataset::new(vec![Column::ordinal("y", vec![Some(5.0), Some(7.0)])]).unwrap();
        let mask = Arc::new(MissingMask::of(&a));
        let chains = vec![
            CompletedDataset {
                data: a,
                mask: Arc::clone(&mask),
            },
            CompletedDataset { data: b, mask },
        ];
        assert_eq!(pool_mean(&chains, "y").unwrap(), 5.0);
    }
}
