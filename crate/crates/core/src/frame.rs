//! Training sets and the per-fit working frame shared by tree construction
//! and split search.
//!
//! A fit works on *positions* `0..N`, one per distinct training row, each
//! weighted by how often the row was drawn. Node membership is a contiguous segment of the
//! position array; every ordinal feature keeps its own copy of the segment
//! sorted by value with missing cells last, and splits stably partition all of
//! them, so no node ever re-sorts.

use std::sync::OnceLock;

use crate::dataset::{ColumnData, Dataset, FlagColumn, VariableKind};
use crate::error::{Error, Result};

/// Response values indexed by dataset row.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Class {
        codes: Vec<Option<u32>>,
        labels: Vec<String>,
    },
    Numeric(Vec<Option<f64>>),
}

impl Response {
    pub fn is_observed(&self, row: usize) -> bool {
        match self {
            Response::Class { codes, .. } => codes[row].is_some(),
            Response::Numeric(v) => v[row].is_some(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Response::Class { codes, .. } => codes.len(),
            Response::Numeric(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Response::Class { labels, .. } => labels.len(),
            Response::Numeric(_) => 0,
        }
    }

    pub fn from_column(data: &ColumnData) -> Response {
        match data {
            ColumnData::Ordinal(v) => Response::Numeric(v.clone()),
            ColumnData::Categorical { codes, levels } => Response::Class {
                codes: codes.clone(),
                labels: levels.clone(),
            },
        }
    }
}

/// A response, the rows it is fitted on, and the candidate split variables.
#[derive(Debug)]
pub struct TrainingSet<'a> {
    data: &'a Dataset,
    response_name: String,
    response: Response,
    rows: Vec<usize>,
    features: Vec<usize>,
    orders: OnceLock<Vec<Option<Vec<u32>>>>,
}

impl<'a> TrainingSet<'a> {
    /// Response taken from a dataset column; all other columns are features
    /// and the rows are those where the response is observed.
    pub fn for_column(data: &'a Dataset, name: &str) -> Result<Self> {
        let idx = data.column_index(name)?;
        let response = Response::from_column(data.column(idx).data());
        Self::new(data, name, response, &[idx])
    }

    /// Missing-value flag of `flag.target` as a two-class response, with the
    /// target column itself excluded from the features.
    pub fn for_flag(data: &'a Dataset, flag: &FlagColumn) -> Result<Self> {
        let idx = data.column_index(&flag.target)?;
        let response = Response::Class {
            codes: flag.codes(),
            labels: FlagColumn::labels(),
        };
        Self::new(data, &format!("{}_", flag.target), response, &[idx])
    }

    pub fn new(data: &'a Dataset, name: &str, response: Response, exclude: &[usize]) -> Result<Self> {
        if response.len() != data.n_rows() {
            return Err(Error::InvalidArgument(format!(
                "response has {} values for {} rows",
                response.len(),
                data.n_rows()
            )));
        }
        let rows: Vec<usize> = (0..data.n_rows()).filter(|&r| response.is_observed(r)).collect();
        let features = (0..data.n_cols()).filter(|c| !exclude.contains(c)).collect();
        Ok(TrainingSet {
            data,
            response_name: name.to_owned(),
            response,
            rows,
            features,
            orders: OnceLock::new(),
        })
    }

    /// Restricts training to `rows`; rows with a missing response are dropped.
    pub fn with_rows(mut self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.data.n_rows()) {
            return Err(Error::InvalidArgument(format!("row {bad} out of range")));
        }
        self.rows = rows.iter().copied().filter(|&r| self.response.is_observed(r)).collect();
        Ok(self)
    }

    /// Uses exactly the named columns as features.
    pub fn with_features<S: AsRef<str>>(mut self, names: &[S]) -> Result<Self> {
        self.features = names
            .iter()
            .map(|n| self.data.column_index(n.as_ref()))
            .collect::<Result<_>>()?;
        self.orders = OnceLock::new();
        Ok(self)
    }

    pub fn excluding<S: AsRef<str>>(mut self, names: &[S]) -> Result<Self> {
        let drop = names
            .iter()
            .map(|n| self.data.column_index(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        self.features.retain(|f| !drop.contains(f));
        self.orders = OnceLock::new();
        Ok(self)
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn response(&self) -> &Response {
        &self.response
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn features(&self) -> &[usize] {
        &self.features
    }

    /// Dataset rows of each ordinal feature sorted by value, missing last.
    pub(crate) fn orders(&self) -> &[Option<Vec<u32>>] {
        self.orders.get_or_init(|| {
            self.features
                .iter()
                .map(|&f| {
                    self.data.column(f).ordinal_values().map(|vals| {
                        let mut order: Vec<u32> = (0..vals.len() as u32).collect();
                        order.sort_by(|&a, &b| match (vals[a as usize], vals[b as usize]) {
                            (Some(x), Some(y)) => x.total_cmp(&y),
                            (Some(_), None) => std::cmp::Ordering::Less,
                            (None, Some(_)) => std::cmp::Ordering::Greater,
                            (None, None) => std::cmp::Ordering::Equal,
                        });
                        order
                    })
                })
                .collect()
        })
    }
}

/// Response values and multiplicity weights indexed by position.
#[derive(Debug, Clone)]
pub(crate) enum YData {
    Class {
        codes: Vec<u32>,
        n_classes: usize,
        weights: Vec<f64>,
    },
    /// Values centered on `offset` to keep sums of squares well conditioned.
    Numeric {
        values: Vec<f64>,
        offset: f64,
        weights: Vec<f64>,
    },
}

impl YData {
    pub(crate) fn zero(&self) -> Acc {
        match self {
            YData::Class { n_classes, .. } => Acc::Class {
                counts: vec![0.0; *n_classes],
                n: 0.0,
            },
            YData::Numeric { .. } => Acc::Moments {
                n: 0.0,
                sum: 0.0,
                sumsq: 0.0,
            },
        }
    }

    #[inline]
    pub(crate) fn weights(&self) -> &[f64] {
        match self {
            YData::Class { weights, .. } | YData::Numeric { weights, .. } => weights,
        }
    }

    #[inline]
    pub(crate) fn weight(&self, pos: u32) -> f64 {
        match self {
            YData::Class { weights, .. } | YData::Numeric { weights, .. } => weights[pos as usize],
        }
    }

    #[inline]
    pub(crate) fn push(&self, acc: &mut Acc, pos: u32) {
        match (self, acc) {
            (YData::Class { codes, weights, .. }, Acc::Class { counts, n }) => {
                let w = weights[pos as usize];
                counts[codes[pos as usize] as usize] += w;
                *n += w;
            }
            (YData::Numeric { values, weights, .. }, Acc::Moments { n, sum, sumsq }) => {
                let w = weights[pos as usize];
                let v = values[pos as usize];
                *n += w;
                *sum += w * v;
                *sumsq += w * v * v;
            }
            _ => unreachable!("accumulator kind does not match response"),
        }
    }

    pub(crate) fn acc_of(&self, positions: &[u32]) -> Acc {
        let mut acc = self.zero();
        for &p in positions {
            self.push(&mut acc, p);
        }
        acc
    }
}

/// Sufficient statistics of a set of responses: class counts, or moments.
/// Impurities are totals (n-weighted Gini, sum of squared errors), so a
/// split reduces impurity by `parent - left - right`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Acc {
    Class { counts: Vec<f64>, n: f64 },
    Moments { n: f64, sum: f64, sumsq: f64 },
}

impl Acc {
    #[inline]
    pub(crate) fn n(&self) -> f64 {
        match self {
            Acc::Class { n, .. } | Acc::Moments { n, .. } => *n,
        }
    }

    pub(crate) fn impurity(&self) -> f64 {
        match self {
            Acc::Class { counts, n } => {
                if *n <= 0.0 {
                    return 0.0;
                }
                let sq: f64 = counts.iter().map(|c| c * c).sum();
                (n - sq / n).max(0.0)
            }
            Acc::Moments { n, sum, sumsq } => {
                if *n <= 0.0 {
                    return 0.0;
                }
                (sumsq - sum * sum / n).max(0.0)
            }
        }
    }

    /// Impurity of `self - part`.
    #[inline]
    pub(crate) fn impurity_minus(&self, part: &Acc) -> f64 {
        match (self, part) {
            (Acc::Class { counts, n }, Acc::Class { counts: pc, n: pn }) => {
                let m = n - pn;
                if m <= 0.0 {
                    return 0.0;
                }
                let sq: f64 = counts.iter().zip(pc).map(|(a, b)| (a - b) * (a - b)).sum();
                (m - sq / m).max(0.0)
            }
            (Acc::Moments { n, sum, sumsq }, Acc::Moments { n: pn, sum: ps, sumsq: pq }) => {
                let m = n - pn;
                if m <= 0.0 {
                    return 0.0;
                }
                let s = sum - ps;
                ((sumsq - pq) - s * s / m).max(0.0)
            }
            _ => unreachable!("accumulator kinds differ"),
        }
    }

    pub(crate) fn add(&mut self, other: &Acc) {
        match (self, other) {
            (Acc::Class { counts, n }, Acc::Class { counts: oc, n: on }) => {
                for (a, b) in counts.iter_mut().zip(oc) {
                    *a += b;
                }
                *n += on;
            }
            (Acc::Moments { n, sum, sumsq }, Acc::Moments { n: on, sum: os, sumsq: oq }) => {
                *n += on;
                *sum += os;
                *sumsq += oq;
            }
            _ => unreachable!("accumulator kinds differ"),
        }
    }

    pub(crate) fn minus(&self, other: &Acc) -> Acc {
        match (self, other) {
            (Acc::Class { counts, n }, Acc::Class { counts: oc, n: on }) => Acc::Class {
                counts: counts.iter().zip(oc).map(|(a, b)| a - b).collect(),
                n: n - on,
            },
            (Acc::Moments { n, sum, sumsq }, Acc::Moments { n: on, sum: os, sumsq: oq }) => Acc::Moments {
                n: n - on,
                sum: sum - os,
                sumsq: sumsq - oq,
            },
            _ => unreachable!("accumulator kinds differ"),
        }
    }

    pub(crate) fn mean(&self) -> f64 {
        match self {
            Acc::Moments { n, sum, .. } if *n > 0.0 => sum / n,
            _ => 0.0,
        }
    }

    pub(crate) fn present_classes(&self) -> usize {
        match self {
            Acc::Class { counts, .. } => counts.iter().filter(|&&c| c > 0.0).count(),
            Acc::Moments { .. } => 0,
        }
    }
}

/// Code marking a missing categorical cell in [`FeatureCol`].
pub(crate) const NA_CODE: u32 = u32::MAX;

/// Feature cells copied by position; missing ordinal cells are NaN.
#[derive(Debug, Clone)]
pub(crate) enum FeatureCol {
    Ordinal(Vec<f64>),
    Categorical { codes: Vec<u32>, n_levels: usize },
}

/// Working state of one fit.
///
/// Repeated dataset rows (bootstrap draws) are collapsed into one position
/// carrying the repeat count as its weight.
pub(crate) struct Frame<'a> {
    pub(crate) data: &'a Dataset,
    /// Dataset column index per feature slot.
    pub(crate) features: Vec<usize>,
    pub(crate) cols: Vec<FeatureCol>,
    /// Position to dataset row.
    pub(crate) rows: Vec<usize>,
    pub(crate) y: YData,
    /// Node segments of positions.
    pub(crate) pos: Vec<u32>,
    /// Per ordinal feature slot: positions sorted by value, missing last.
    pub(crate) sorted: Vec<Option<Vec<u32>>>,
    pub(crate) go_left: Vec<bool>,
    pub(crate) scratch: Vec<u32>,
    /// Class per position used by the association tests.
    pub(crate) test_class: Vec<u32>,
    /// Primary-split direction per position (0 none, 1 left, 2 right).
    pub(crate) direction: Vec<u8>,
    pub(crate) table: Vec<f64>,
    pub(crate) totals: Vec<f64>,
    pub(crate) cuts: Vec<f64>,
    /// Weight of the node whose test classes are prepared.
    pub(crate) node_weight: f64,
}

impl<'a> Frame<'a> {
    /// `rows` are dataset rows; repeats become weights.
    pub(crate) fn new(set: &TrainingSet<'a>, rows: Vec<usize>) -> Result<Frame<'a>> {
        if rows.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let data = set.data;
        let mut mult = vec![0u32; data.n_rows()];
        for &r in &rows {
            *mult.get_mut(r).ok_or_else(|| Error::InvalidArgument(format!("row {r} out of range")))? += 1;
        }
        const NONE: u32 = u32::MAX;
        let mut pos_of = vec![NONE; data.n_rows()];
        let mut unique = Vec::new();
        let mut weights = Vec::new();
        for (r, &m) in mult.iter().enumerate() {
            if m > 0 {
                pos_of[r] = unique.len() as u32;
                unique.push(r);
                weights.push(f64::from(m));
            }
        }
        let rows = unique;
        let n_pos = rows.len();
        let missing_y = |r: usize| Error::InvalidArgument(format!("row {r} has no response"));
        let y = match &set.response {
            Response::Class { codes, labels } => YData::Class {
                codes: rows.iter().map(|&r| codes[r].ok_or_else(|| missing_y(r))).collect::<Result<_>>()?,
                n_classes: labels.len().max(1),
                weights,
            },
            Response::Numeric(v) => {
                let vals: Vec<f64> = rows.iter().map(|&r| v[r].ok_or_else(|| missing_y(r))).collect::<Result<_>>()?;
                let total: f64 = weights.iter().sum();
                let offset = vals.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / total;
                YData::Numeric {
                    values: vals.into_iter().map(|x| x - offset).collect(),
                    offset,
                    weights,
                }
            }
        };

        let cols: Vec<FeatureCol> = set
            .features
            .iter()
            .map(|&f| match data.column(f).data() {
                ColumnData::Ordinal(v) => FeatureCol::Ordinal(rows.iter().map(|&r| v[r].unwrap_or(f64::NAN)).collect()),
                ColumnData::Categorical { codes, levels } => FeatureCol::Categorical {
                    codes: rows.iter().map(|&r| codes[r].unwrap_or(NA_CODE)).collect(),
                    n_levels: levels.len(),
                },
            })
            .collect();

        let orders = set.orders();
        let sorted = orders
            .iter()
            .map(|order| {
                order.as_ref().map(|order| {
                    let mut out = Vec::with_capacity(n_pos);
                    out.extend(order.iter().map(|&r| pos_of[r as usize]).filter(|&p| p != NONE));
                    out
                })
            })
            .collect();

        Ok(Frame {
            data,
            features: set.features.clone(),
            cols,
            rows,
            y,
            pos: (0..n_pos as u32).collect(),
            sorted,
            go_left: vec![false; n_pos],
            scratch: Vec::with_capacity(n_pos),
            test_class: vec![0; n_pos],
            direction: vec![0; n_pos],
            table: Vec::new(),
            totals: Vec::new(),
            cuts: Vec::new(),
            node_weight: 0.0,
        })
    }

    #[cfg(test)]
    pub(crate) fn ordinal_value(&self, slot: usize, pos: u32) -> Option<f64> {
        match &self.cols[slot] {
            FeatureCol::Ordinal(v) => {
                let x = v[pos as usize];
                (!x.is_nan()).then_some(x)
            }
            FeatureCol::Categorical { .. } => None,
        }
    }

    pub(crate) fn kind(&self, slot: usize) -> VariableKind {
        match self.cols[slot] {
            FeatureCol::Ordinal(_) => VariableKind::Ordinal,
            FeatureCol::Categorical { .. } => VariableKind::Categorical,
        }
    }

    /// Number of observed cells at the start of the sorted segment.
    pub(crate) fn observed_prefix(&self, slot: usize, start: usize, end: usize) -> usize {
        let seg = &self.sorted[slot].as_ref().expect("ordinal slot")[start..end];
        match &self.cols[slot] {
            FeatureCol::Ordinal(v) => seg.partition_point(|&p| !v[p as usize].is_nan()),
            FeatureCol::Categorical { .. } => 0,
        }
    }

    /// Total weight of a segment.
    #[cfg(test)]
    pub(crate) fn weight_of(&self, start: usize, end: usize) -> f64 {
        self.pos[start..end].iter().map(|&p| self.y.weight(p)).sum()
    }

    pub(crate) fn node_acc(&self, start: usize, end: usize) -> Acc {
        self.y.acc_of(&self.pos[start..end])
    }

    /// Stable partition of the node segment in every position array according
    /// to `go_left`. Returns the number of left positions.
    pub(crate) fn partition(&mut self, start: usize, end: usize) -> usize {
        let go_left = &self.go_left;
        let scratch = &mut self.scratch;
        let n_left = stable_partition(&mut self.pos[start..end], go_left, scratch);
        for sorted in self.sorted.iter_mut().flatten() {
            let k = stable_partition(&mut sorted[start..end], go_left, scratch);
            debug_assert_eq!(k, n_left);
        }
        n_left
    }
}

fn stable_partition(seg: &mut [u32], go_left: &[bool], scratch: &mut Vec<u32>) -> usize {
    scratch.clear();
    let mut w = 0;
    for i in 0..seg.len() {
        let p = seg[i];
        if go_left[p as usize] {
            seg[w] = p;
            w += 1;
        } else {
            scratch.push(p);
        }
    }
    seg[w..].copy_from_slice(scratch);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Column;

    #[test]
    fn repeated_rows_become_weights() {
        let d = Dataset::new(vec![
            Column::ordinal("x", vec![Some(3.0), None, Some(1.0), Some(2.0)]),
            Column::ordinal("y", vec![Some(1.0); 4]),
        ])
        .unwrap();
        let set = TrainingSet::for_column(&d, "y").unwrap();
        let frame = Frame::new(&set, vec![0, 1, 2, 0, 3]).unwrap();
        let sorted = frame.sorted[0].as_ref().unwrap();
        let values: Vec<Option<f64>> = sorted.iter().map(|&p| frame.ordinal_value(0, p)).collect();
        assert_eq!(values, vec![Some(1.0), Some(2.0), Some(3.0), None]);
        assert_eq!(frame.observed_prefix(0, 0, 4), 3);
        let w: Vec<f64> = sorted.iter().map(|&p| frame.y.weight(p)).collect();
        assert_eq!(w, vec![1.0, 1.0, 2.0, 1.0]);
        assert_eq!(frame.weight_of(0, 4), 5.0);
    }

    #[test]
    fn gini_and_sse_totals() {
        let acc = Acc::Class {
            counts: vec![10.0, 10.0],
            n: 20.0,
        };
        assert_eq!(acc.impurity(), 10.0);
        let part = Acc::Class {
            counts: vec![10.0, 0.0],
            n: 10.0,
        };
        assert_eq!(acc.impurity_minus(&part), 0.0);
        let m = Acc::Moments {
            n: 2.0,
            sum: 2.0,
            sumsq: 4.0,
        };
        assert_eq!(m.impurity(), 2.0);
    }
}
