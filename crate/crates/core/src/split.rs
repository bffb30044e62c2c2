//! Variable selection and split search.
//!
//! Two strategies share the same split types:
//!
//! * **Guide**: pick the variable with the most significant chi-squared test
//!   of association with the response (missing cells form their own level),
//!   then search splits on that variable only. Missing values are sent as a
//!   block to whichever side gives lower impurity.
//! * **Greedy**: search the best split on every variable using observed cells
//!   only, keep the one with the largest impurity reduction, and route
//!   missing cells through surrogate splits.
//!
//! Categorical variables in guide mode are split by a staged procedure that
//! bounds the search: binary responses order the levels by class proportion
//! and scan prefixes; up to 11 levels are searched exhaustively; many-level
//! variables with few classes are first merged by majority class; anything
//! else is ordered by its leading discriminant coordinate.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::dataset::{Column, ColumnData, Dataset, VariableKind};
use crate::error::{Error, Result};
use crate::frame::{Acc, FeatureCol, Frame, Response, TrainingSet, YData, NA_CODE};
use crate::rng::StreamRng;

/// Largest level count searched exhaustively (`2^(p-1) - 1 <= 1023` subsets).
pub const MAX_EXHAUSTIVE_LEVELS: usize = 11;
/// Default number of quantile bins for ordinal variables in association tests.
pub const DEFAULT_BINS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Guide,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImpurityMeasure {
    Gini,
    Sse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Routing rule on one variable.
///
/// `Threshold` sends observed values `<= value` left. `Subset` sends levels in
/// `left` left and levels in `right` right; a level in neither (never seen at
/// the node) is treated like a missing cell. A threshold of `+inf` separates
/// observed from missing cells.
#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    Threshold { value: f64, missing: Side },
    Subset { left: Vec<u32>, right: Vec<u32>, missing: Side },
}

impl Rule {
    pub fn missing_side(&self) -> Side {
        match self {
            Rule::Threshold { missing, .. } | Rule::Subset { missing, .. } => *missing,
        }
    }

    fn set_missing_side(&mut self, side: Side) {
        match self {
            Rule::Threshold { missing, .. } | Rule::Subset { missing, .. } => *missing = side,
        }
    }

    /// Side for an observed cell; `None` for a missing cell or unseen level.
    #[inline]
    pub fn observed_side(&self, col: &ColumnData, row: usize) -> Option<Side> {
        match (self, col) {
            (Rule::Threshold { value, .. }, ColumnData::Ordinal(v)) => {
                v[row].map(|x| if x <= *value { Side::Left } else { Side::Right })
            }
            (Rule::Subset { left, right, .. }, ColumnData::Categorical { codes, .. }) => codes[row].and_then(|c| {
                if left.binary_search(&c).is_ok() {
                    Some(Side::Left)
                } else if right.binary_search(&c).is_ok() {
                    Some(Side::Right)
                } else {
                    None
                }
            }),
            _ => None,
        }
    }

    pub fn side(&self, col: &ColumnData, row: usize) -> Side {
        self.observed_side(col, row).unwrap_or_else(|| self.missing_side())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub variable: usize,
    pub rule: Rule,
    /// The surrogate predicts the opposite side of its rule.
    pub flipped: bool,
    /// Fraction of rows (observed on both variables) routed like the primary.
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// Dataset column index.
    pub variable: usize,
    pub rule: Rule,
    pub surrogates: Vec<Surrogate>,
}

impl Split {
    /// Total routing: the primary rule, then surrogates in order, then the
    /// rule's missing side.
    pub fn route(&self, data: &Dataset, row: usize) -> Side {
        if let Some(side) = self.rule.observed_side(data.column(self.variable).data(), row) {
            return side;
        }
        for s in &self.surrogates {
            if let Some(side) = s.rule.observed_side(data.column(s.variable).data(), row) {
                return if s.flipped { side.flip() } else { side };
            }
        }
        self.rule.missing_side()
    }
}

/// A scored split on one variable before it is attached to a node.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub rule: Rule,
    /// Parent impurity minus the two child impurities (totals, not averages).
    pub reduction: f64,
    pub n_left: usize,
    pub n_right: usize,
}

/// Pearson chi-squared test of association between a variable and the response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChisqResult {
    pub variable: usize,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

impl ChisqResult {
    /// Wilson-Hilferty normal score; orders results whose p-values underflow.
    pub fn z_score(&self) -> f64 {
        if self.df == 0 {
            return f64::NEG_INFINITY;
        }
        let k = self.df as f64;
        let s = 2.0 / (9.0 * k);
        ((self.statistic / k).cbrt() - (1.0 - s)) / s.sqrt()
    }

    /// Most significant first; ties go to the smaller variable index.
    pub fn significance_order(a: &ChisqResult, b: &ChisqResult) -> Ordering {
        a.p_value
            .total_cmp(&b.p_value)
            .then_with(|| b.z_score().total_cmp(&a.z_score()))
            .then_with(|| a.variable.cmp(&b.variable))
    }
}

/// Upper tail probability of the chi-squared distribution.
pub fn chi2_upper_tail(x: f64, df: usize) -> f64 {
    if df == 0 || x <= 0.0 || x.is_nan() {
        return 1.0;
    }
    if df > 60 {
        return ChiSquared::new(df as f64).map(|d| d.sf(x)).unwrap_or(0.0);
    }
    let h = x / 2.0;
    let decay = (-h).exp();
    if df % 2 == 0 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for i in 1..df / 2 {
            term *= h / i as f64;
            sum += term;
        }
        (decay * sum).min(1.0)
    } else {
        let mut term = h.sqrt() / (std::f64::consts::PI.sqrt() / 2.0);
        let mut sum = 0.0;
        for i in 1..=(df - 1) / 2 {
            if i > 1 {
                term *= h / (i as f64 - 0.5);
            }
            sum += term;
        }
        (erfc(h.sqrt()) + decay * sum).min(1.0)
    }
}

/// Pearson statistic of an `r x c` table (row-major), ignoring empty rows and
/// columns. Returns `(statistic, df)`; degenerate tables give `(0, 0)`.
pub(crate) fn pearson(table: &[f64], r: usize, c: usize, totals: &mut Vec<f64>) -> (f64, usize) {
    totals.clear();
    totals.resize(r + c, 0.0);
    let (row_tot, col_tot) = totals.split_at_mut(r);
    for i in 0..r {
        for j in 0..c {
            let v = table[i * c + j];
            row_tot[i] += v;
            col_tot[j] += v;
        }
    }
    let n: f64 = row_tot.iter().sum();
    let rows = row_tot.iter().filter(|&&v| v > 0.0).count();
    let cols = col_tot.iter().filter(|&&v| v > 0.0).count();
    if rows < 2 || cols < 2 {
        return (0.0, 0);
    }
    let mut stat = 0.0;
    for i in 0..r {
        if row_tot[i] == 0.0 {
            continue;
        }
        for j in 0..c {
            if col_tot[j] == 0.0 {
                continue;
            }
            let e = row_tot[i] * col_tot[j] / n;
            let d = table[i * c + j] - e;
            stat += d * d / e;
        }
    }
    (stat, (rows - 1) * (cols - 1))
}

/// A level of a categorical variable at a node; `Missing` is the extra level
/// formed by missing cells and sorts after every observed level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LevelKey {
    Level(u32),
    Missing,
}

#[derive(Debug, Clone)]
pub(crate) struct Group {
    pub(crate) key: LevelKey,
    pub(crate) acc: Acc,
}

/// Which stage of the categorical procedure produced a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CategoricalCase {
    /// Two classes: prefixes of levels ordered by class proportion.
    BinaryOrdering,
    /// At most 11 levels: every subset.
    Exhaustive,
    /// Many levels, few classes: levels merged by majority class.
    Merged,
    /// Levels ordered by the leading discriminant coordinate.
    Discriminant,
    /// Numeric response: levels ordered by mean.
    MeanOrdering,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalSearch {
    pub case: CategoricalCase,
    pub candidate: Option<SplitCandidate>,
    /// Number of candidate subsets examined.
    pub evaluated: usize,
}

#[inline]
fn evaluate(total: &Acc, left: &Acc, parent: f64, min_child: f64) -> Option<f64> {
    let nl = left.n();
    let nr = total.n() - nl;
    if nl <= 0.0 || nr <= 0.0 || nl < min_child || nr < min_child {
        return None;
    }
    Some(parent - left.impurity() - total.impurity_minus(left))
}

/// Best cut of an ordering of groups into a prefix and the rest.
fn prefix_search(groups: &[Group], order: &[usize], total: &Acc, min_child: f64) -> (Option<(usize, f64)>, usize) {
    let parent = total.impurity();
    let mut left = match total {
        Acc::Class { counts, .. } => Acc::Class {
            counts: vec![0.0; counts.len()],
            n: 0.0,
        },
        Acc::Moments { .. } => Acc::Moments {
            n: 0.0,
            sum: 0.0,
            sumsq: 0.0,
        },
    };
    let mut best: Option<(usize, f64)> = None;
    let cuts = order.len().saturating_sub(1);
    for (i, &g) in order.iter().take(cuts).enumerate() {
        left.add(&groups[g].acc);
        if let Some(red) = evaluate(total, &left, parent, min_child) {
            if best.is_none_or(|(_, b)| red > b) {
                best = Some((i, red));
            }
        }
    }
    (best, cuts)
}

/// Every split of the groups into two nonempty sets; the last group is held
/// on the right so each partition is visited once.
fn exhaustive_search(groups: &[Group], total: &Acc, min_child: f64) -> (Option<(u64, f64)>, usize) {
    let p = groups.len();
    if p < 2 {
        return (None, 0);
    }
    let parent = total.impurity();
    let count = (1u64 << (p - 1)) - 1;
    let mut best: Option<(u64, f64)> = None;
    for mask in 1..=count {
        let mut left = total.minus(total);
        for (i, g) in groups.iter().enumerate().take(p - 1) {
            if mask & (1 << i) != 0 {
                left.add(&g.acc);
            }
        }
        if let Some(red) = evaluate(total, &left, parent, min_child) {
            if best.is_none_or(|(_, b)| red > b) {
                best = Some((mask, red));
            }
        }
    }
    (best, count as usize)
}

/// Converts a group partition into a subset rule. With no missing group the
/// missing side is the larger child. A left side holding only the missing
/// level is mirrored so that observed levels always appear on the left.
fn subset_candidate(groups: &[Group], in_left: &[bool], reduction: f64) -> SplitCandidate {
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut missing = None;
    let (mut nl, mut nr) = (0.0, 0.0);
    for (g, &l) in groups.iter().zip(in_left) {
        if l {
            nl += g.acc.n();
        } else {
            nr += g.acc.n();
        }
        match g.key {
            LevelKey::Level(c) => {
                if l {
                    left.push(c)
                } else {
                    right.push(c)
                }
            }
            LevelKey::Missing => missing = Some(if l { Side::Left } else { Side::Right }),
        }
    }
    left.sort_unstable();
    right.sort_unstable();
    let mut missing = missing.unwrap_or(if nl >= nr { Side::Left } else { Side::Right });
    if left.is_empty() {
        std::mem::swap(&mut left, &mut right);
        std::mem::swap(&mut nl, &mut nr);
        missing = missing.flip();
    }
    SplitCandidate {
        rule: Rule::Subset { left, right, missing },
        reduction,
        n_left: nl as usize,
        n_right: nr as usize,
    }
}

fn prefix_candidate(groups: &[Group], order: &[usize], cut: usize, reduction: f64) -> SplitCandidate {
    let mut in_left = vec![false; groups.len()];
    for &g in &order[..=cut] {
        in_left[g] = true;
    }
    subset_candidate(groups, &in_left, reduction)
}

fn first_present_class(total: &Acc) -> usize {
    match total {
        Acc::Class { counts, .. } => counts.iter().position(|&c| c > 0.0).unwrap_or(0),
        Acc::Moments { .. } => 0,
    }
}

/// Group indices ordered by the proportion of the first present class,
/// ties by level order.
fn binary_order(groups: &[Group], total: &Acc) -> Vec<usize> {
    let j = first_present_class(total);
    let share = |g: &Group| match &g.acc {
        Acc::Class { counts, n } => counts[j] / n,
        Acc::Moments { .. } => 0.0,
    };
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| share(&groups[a]).total_cmp(&share(&groups[b])).then(groups[a].key.cmp(&groups[b].key)));
    order
}

/// Group indices ordered by mean response (class index for classes).
fn mean_order(groups: &[Group]) -> Vec<usize> {
    let mean = |g: &Group| match &g.acc {
        Acc::Class { counts, n } => counts.iter().enumerate().map(|(c, k)| c as f64 * k).sum::<f64>() / n,
        m @ Acc::Moments { .. } => m.mean(),
    };
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| mean(&groups[a]).total_cmp(&mean(&groups[b])).then(groups[a].key.cmp(&groups[b].key)));
    order
}

fn ordered_search(groups: &[Group], order: &[usize], total: &Acc, min_child: f64, case: CategoricalCase) -> CategoricalSearch {
    let (best, evaluated) = prefix_search(groups, order, total, min_child);
    CategoricalSearch {
        case,
        candidate: best.map(|(cut, red)| prefix_candidate(groups, order, cut, red)),
        evaluated,
    }
}

fn exhaustive_candidates(groups: &[Group], total: &Acc, min_child: f64) -> CategoricalSearch {
    let (best, evaluated) = exhaustive_search(groups, total, min_child);
    let candidate = best.map(|(mask, red)| {
        let in_left: Vec<bool> = (0..groups.len()).map(|i| mask & (1 << i) != 0).collect();
        subset_candidate(groups, &in_left, red)
    });
    CategoricalSearch {
        case: CategoricalCase::Exhaustive,
        candidate,
        evaluated,
    }
}

/// Majority class of each group (ties to the smaller class index).
fn majority_classes(groups: &[Group]) -> Vec<usize> {
    groups
        .iter()
        .map(|g| match &g.acc {
            Acc::Class { counts, .. } => {
                let mut best = 0;
                for (c, &k) in counts.iter().enumerate() {
                    if k > counts[best] {
                        best = c;
                    }
                }
                best
            }
            Acc::Moments { .. } => 0,
        })
        .collect()
}

fn merged_search(groups: &[Group], total: &Acc, min_child: f64) -> (Vec<usize>, CategoricalSearch) {
    let majority = majority_classes(groups);
    let mut classes: Vec<usize> = majority.clone();
    classes.sort_unstable();
    classes.dedup();
    let merged: Vec<Group> = classes
        .iter()
        .map(|&c| {
            let mut acc = total.minus(total);
            for (g, &m) in groups.iter().zip(&majority) {
                if m == c {
                    acc.add(&g.acc);
                }
            }
            Group {
                key: LevelKey::Level(c as u32),
                acc,
            }
        })
        .collect();
    let (best, evaluated) = exhaustive_search(&merged, total, min_child);
    let candidate = best.map(|(mask, red)| {
        let in_left: Vec<bool> = majority
            .iter()
            .map(|c| {
                let k = classes.binary_search(c).expect("merged class");
                mask & (1 << k) != 0
            })
            .collect();
        subset_candidate(groups, &in_left, red)
    });
    (
        majority,
        CategoricalSearch {
            case: CategoricalCase::Merged,
            candidate,
            evaluated,
        },
    )
}

/// Leading discriminant coordinate of the level indicators with respect to
/// the response classes, or `None` when the problem is degenerate.
///
/// With indicators `D_k` the between-class and total scatter of
/// `sum_k a_k D_k` are quadratic forms in `a`. The last indicator is dropped
/// (the indicators sum to one) and `B a = lambda T a` is solved through the
/// Cholesky factor of `T`; maximizing `B/T` is the same as maximizing `B/W`.
fn discriminant_coefficients(groups: &[Group], total: &Acc) -> Option<Vec<f64>> {
    let Acc::Class { counts: class_tot, n } = total else {
        return None;
    };
    let p = groups.len();
    if p < 2 {
        return None;
    }
    let d = p - 1;
    let sizes: Vec<f64> = groups.iter().map(|g| g.acc.n()).collect();
    let counts: Vec<&[f64]> = groups
        .iter()
        .map(|g| match &g.acc {
            Acc::Class { counts, .. } => counts.as_slice(),
            Acc::Moments { .. } => &[][..],
        })
        .collect();
    let t = DMatrix::from_fn(d, d, |a, b| {
        let diag = if a == b { sizes[a] } else { 0.0 };
        diag - sizes[a] * sizes[b] / n
    });
    let b = DMatrix::from_fn(d, d, |a, c| {
        let mut s = 0.0;
        for (j, &nj) in class_tot.iter().enumerate() {
            if nj > 0.0 {
                s += counts[a][j] * counts[c][j] / nj;
            }
        }
        s - sizes[a] * sizes[c] / n
    });
    let chol = t.cholesky()?;
    let l = chol.l();
    let m = l.solve_lower_triangular(&b)?;
    let c = l.solve_lower_triangular(&m.transpose())?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let (imax, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
    // No association, or a within-class scatter that vanishes along the
    // leading direction.
    if !(lambda > 1e-12 && lambda < 1.0 - 1e-10) {
        return None;
    }
    let v: DVector<f64> = eig.eigenvectors.column(imax).into_owned();
    let a = l.tr_solve_lower_triangular(&v)?;
    let mut coef: Vec<f64> = a.iter().copied().chain(std::iter::once(0.0)).collect();
    let norm = coef.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    // Sign convention: the first nonzero coefficient is positive.
    let sign = coef.iter().find(|x| x.abs() > 1e-12).map_or(1.0, |x| x.signum());
    for x in &mut coef {
        *x *= sign / norm;
    }
    Some(coef)
}

/// Result of ordering levels by a discriminant coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminantOrdering {
    /// Levels in induced order.
    pub levels: Vec<LevelKey>,
    /// Normalized coefficient per level, aligned with `levels`.
    pub coefficients: Vec<f64>,
    /// The ordering came from within-level means instead of the eigenproblem.
    pub fallback: bool,
    pub search: CategoricalSearch,
}

fn discriminant_search(groups: &[Group], total: &Acc, min_child: f64) -> DiscriminantOrdering {
    let by_mean = mean_order(groups);
    let (order, coef, fallback) = match total {
        Acc::Moments { .. } => {
            let means: Vec<f64> = groups.iter().map(|g| g.acc.mean()).collect();
            let grand = total.mean();
            let mut coef: Vec<f64> = means.iter().map(|m| m - grand).collect();
            let norm = coef.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                coef.iter_mut().for_each(|x| *x /= norm);
            }
            (by_mean.clone(), coef, false)
        }
        Acc::Class { .. } => match discriminant_coefficients(groups, total) {
            Some(coef) => {
                let mut order: Vec<usize> = (0..groups.len()).collect();
                order.sort_by(|&a, &b| coef[a].total_cmp(&coef[b]).then(groups[a].key.cmp(&groups[b].key)));
                (order, coef, false)
            }
            None => (by_mean.clone(), vec![0.0; groups.len()], true),
        },
    };
    let case = match total {
        Acc::Moments { .. } => CategoricalCase::MeanOrdering,
        Acc::Class { .. } => CategoricalCase::Discriminant,
    };
    let mut search = ordered_search(groups, &order, total, min_child, case);
    if !fallback && order != by_mean {
        // The mean ordering is a floor: keep whichever prefix split is better.
        let alt = ordered_search(groups, &by_mean, total, min_child, case);
        search.evaluated += alt.evaluated;
        let better = match (&search.candidate, &alt.candidate) {
            (None, Some(_)) => true,
            (Some(a), Some(b)) => b.reduction > a.reduction,
            _ => false,
        };
        if better {
            search.candidate = alt.candidate;
        }
    }
    DiscriminantOrdering {
        levels: order.iter().map(|&i| groups[i].key).collect(),
        coefficients: order.iter().map(|&i| coef[i]).collect(),
        fallback,
        search,
    }
}

/// The staged categorical procedure.
pub(crate) fn categorical_search(groups: &[Group], total: &Acc, min_child: f64) -> CategoricalSearch {
    let p = groups.len();
    let none = |case| CategoricalSearch {
        case,
        candidate: None,
        evaluated: 0,
    };
    match total {
        Acc::Moments { .. } => {
            if p < 2 {
                return none(CategoricalCase::MeanOrdering);
            }
            discriminant_search(groups, total, min_child).search
        }
        Acc::Class { .. } => {
            let q = total.present_classes();
            if p < 2 || q < 2 {
                return none(CategoricalCase::BinaryOrdering);
            }
            if q == 2 {
                let order = binary_order(groups, total);
                ordered_search(groups, &order, total, min_child, CategoricalCase::BinaryOrdering)
            } else if p <= MAX_EXHAUSTIVE_LEVELS {
                exhaustive_candidates(groups, total, min_child)
            } else if q <= MAX_EXHAUSTIVE_LEVELS && p > 20 {
                merged_search(groups, total, min_child).1
            } else {
                discriminant_search(groups, total, min_child).search
            }
        }
    }
}

/// Best threshold split along positions sorted by value.
///
/// `total` covers every row considered; `missing` the subset whose cell is
/// missing (zero in greedy mode). With missing rows each threshold is tried
/// with the missing block on either side, and the observed-versus-missing
/// split is tried last.
pub(crate) fn scan_ordinal<V: Fn(u32) -> f64>(
    sorted_observed: &[u32],
    value: V,
    y: &YData,
    total: &Acc,
    missing: &Acc,
    min_child: f64,
) -> Option<SplitCandidate> {
    let k = sorted_observed.len();
    if k == 0 {
        return None;
    }
    let parent = total.impurity();
    let has_missing = missing.n() > 0.0;
    let mut left = y.zero();
    let mut with_missing = missing.clone();
    let mut best: Option<(f64, Side, f64, f64)> = None;
    let consider = |thr: f64, side: Side, acc: &Acc, best: &mut Option<(f64, Side, f64, f64)>| {
        if let Some(red) = evaluate(total, acc, parent, min_child) {
            if best.is_none_or(|b| red > b.2) {
                *best = Some((thr, side, red, acc.n()));
            }
        }
    };
    for i in 0..k {
        let p = sorted_observed[i];
        y.push(&mut left, p);
        if has_missing {
            y.push(&mut with_missing, p);
        }
        if i + 1 < k {
            let v = value(p);
            let w = value(sorted_observed[i + 1]);
            if w > v {
                let mut thr = v + (w - v) / 2.0;
                if !(thr < w) || !(thr >= v) {
                    thr = v;
                }
                if has_missing {
                    consider(thr, Side::Left, &with_missing, &mut best);
                }
                consider(thr, Side::Right, &left, &mut best);
            }
        }
    }
    if has_missing {
        consider(f64::INFINITY, Side::Right, &left, &mut best);
    }
    best.map(|(thr, side, red, nl)| {
        let nr = total.n() - nl;
        let side = if has_missing {
            side
        } else if nl >= nr {
            Side::Left
        } else {
            Side::Right
        };
        SplitCandidate {
            rule: Rule::Threshold {
                value: thr,
                missing: side,
            },
            reduction: red,
            n_left: nl as usize,
            n_right: nr as usize,
        }
    })
}

/// Node-level search settings.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NodeSearch {
    pub(crate) mode: Mode,
    pub(crate) min_child: usize,
    pub(crate) max_surrogates: usize,
    pub(crate) features_per_node: Option<usize>,
    pub(crate) bins: usize,
}

pub(crate) struct Chosen {
    pub(crate) split: Split,
}

impl Frame<'_> {
    /// Fills `test_class` for the node: response classes, or for a numeric
    /// response the sign of the deviation from the node mean.
    pub(crate) fn prepare_test_classes(&mut self, start: usize, end: usize, node: &Acc) -> usize {
        self.node_weight = node.n();
        match &self.y {
            YData::Class { codes, n_classes, .. } => {
                for &p in &self.pos[start..end] {
                    self.test_class[p as usize] = codes[p as usize];
                }
                *n_classes
            }
            YData::Numeric { values, .. } => {
                let mean = node.mean();
                for &p in &self.pos[start..end] {
                    self.test_class[p as usize] = u32::from(values[p as usize] > mean);
                }
                2
            }
        }
    }

    /// Association test for one feature slot; `prepare_test_classes` must
    /// have been called for the node. Ordinal values are cut at the
    /// `j / bins` quantiles of the node's observed values.
    pub(crate) fn chisq(&mut self, slot: usize, start: usize, end: usize, q: usize, bins: usize) -> ChisqResult {
        let variable = self.features[slot];
        let k = match self.cols[slot] {
            FeatureCol::Ordinal(_) => self.observed_prefix(slot, start, end),
            FeatureCol::Categorical { .. } => 0,
        };
        let Frame {
            cols,
            sorted,
            table,
            totals,
            cuts,
            node_weight,
            test_class,
            y,
            pos,
            ..
        } = self;
        let (stat, df) = match &cols[slot] {
            FeatureCol::Categorical { codes, n_levels } => {
                let n_levels = *n_levels;
                let r = n_levels + 1;
                table.clear();
                table.resize(r * q, 0.0);
                let w = y.weights();
                for &p in &pos[start..end] {
                    let c = codes[p as usize];
                    let lvl = if c == NA_CODE { n_levels } else { c as usize };
                    table[lvl * q + test_class[p as usize] as usize] += w[p as usize];
                }
                pearson(table, r, q, totals)
            }
            FeatureCol::Ordinal(vals) => {
                let bins = bins.max(1);
                let r = bins + 1;
                table.clear();
                table.resize(r * q, 0.0);
                let seg = &sorted[slot].as_ref().expect("ordinal slot")[start..end];
                let w = y.weights();
                let mut missing = 0.0;
                for &p in &seg[k..] {
                    table[bins * q + test_class[p as usize] as usize] += w[p as usize];
                    missing += w[p as usize];
                }
                // Cut j is the value at expanded index floor((K - 1) j / bins),
                // K the total observed weight. Values sort ascending, so each
                // cut is known before any value above it is binned.
                let total = (*node_weight - missing).round() as u64;
                cuts.clear();
                let mut b = 0;
                let mut j = 1;
                let mut target = total.saturating_sub(1) / bins as u64;
                let mut cum = 0u64;
                for &p in &seg[..k] {
                    let v = vals[p as usize];
                    while b < cuts.len() && v > cuts[b] {
                        b += 1;
                    }
                    let wp = w[p as usize];
                    table[b * q + test_class[p as usize] as usize] += wp;
                    cum += wp as u64;
                    while j < bins && cum > target {
                        cuts.push(v);
                        j += 1;
                        target = (total - 1) * j as u64 / bins as u64;
                    }
                }
                pearson(table, r, q, totals)
            }
        };
        ChisqResult {
            variable,
            statistic: stat,
            df,
            p_value: chi2_upper_tail(stat, df),
        }
    }

    /// Per-level response statistics of a categorical slot.
    fn level_groups(&self, slot: usize, start: usize, end: usize, include_missing: bool) -> Vec<Group> {
        let FeatureCol::Categorical { codes, n_levels } = &self.cols[slot] else {
            return Vec::new();
        };
        let n_levels = *n_levels;
        let mut accs: Vec<Option<Acc>> = vec![None; n_levels + 1];
        for &p in &self.pos[start..end] {
            let c = codes[p as usize];
            let lvl = if c != NA_CODE {
                c as usize
            } else if include_missing {
                n_levels
            } else {
                continue;
            };
            let acc = accs[lvl].get_or_insert_with(|| self.y.zero());
            self.y.push(acc, p);
        }
        accs.into_iter()
            .enumerate()
            .filter_map(|(i, a)| {
                a.map(|acc| Group {
                    key: if i == n_levels {
                        LevelKey::Missing
                    } else {
                        LevelKey::Level(i as u32)
                    },
                    acc,
                })
            })
            .collect()
    }

    /// Best split on one feature slot. Guide mode uses every row of the
    /// node; greedy mode only rows observed on the feature.
    pub(crate) fn search(&mut self, slot: usize, start: usize, end: usize, mode: Mode, node: &Acc, min_child: usize) -> Option<SplitCandidate> {
        let min_child = min_child as f64;
        match self.kind(slot) {
            VariableKind::Ordinal => {
                let k = self.observed_prefix(slot, start, end);
                let seg = &self.sorted[slot].as_ref().expect("ordinal slot")[start..end];
                let FeatureCol::Ordinal(vals) = &self.cols[slot] else {
                    unreachable!()
                };
                let value = |p: u32| vals[p as usize];
                match mode {
                    Mode::Guide => {
                        let missing = self.y.acc_of(&seg[k..]);
                        scan_ordinal(&seg[..k], value, &self.y, node, &missing, min_child)
                    }
                    Mode::Greedy => {
                        let observed = self.y.acc_of(&seg[..k]);
                        let none = self.y.zero();
                        scan_ordinal(&seg[..k], value, &self.y, &observed, &none, min_child)
                    }
                }
            }
            VariableKind::Categorical => {
                let groups = self.level_groups(slot, start, end, mode == Mode::Guide);
                let total = match mode {
                    Mode::Guide => node.clone(),
                    Mode::Greedy => {
                        let mut t = self.y.zero();
                        groups.iter().for_each(|g| t.add(&g.acc));
                        t
                    }
                };
                categorical_search(&groups, &total, min_child).candidate
            }
        }
    }

    fn candidate_slots(&self, features_per_node: Option<usize>, rng: Option<&mut StreamRng>) -> Vec<usize> {
        let n = self.features.len();
        match (features_per_node, rng) {
            (Some(k), Some(rng)) if k < n => {
                let mut slots = index::sample(rng, n, k.max(1)).into_vec();
                slots.sort_unstable();
                slots
            }
            _ => (0..n).collect(),
        }
    }

    /// Association tests for the candidate slots, most significant first.
    pub(crate) fn ranked_tests(&mut self, start: usize, end: usize, node: &Acc, slots: &[usize], bins: usize) -> Vec<(usize, ChisqResult)> {
        let q = self.prepare_test_classes(start, end, node);
        let mut tests: Vec<(usize, ChisqResult)> = slots
            .iter()
            .map(|&s| (s, self.chisq(s, start, end, q, bins)))
            .filter(|(_, t)| t.df > 0)
            .collect();
        tests.sort_by(|a, b| ChisqResult::significance_order(&a.1, &b.1));
        tests
    }

    /// Best greedy split over the slots, ties to the earlier slot.
    fn best_greedy(&mut self, start: usize, end: usize, node: &Acc, slots: &[usize], min_child: usize) -> Option<(usize, SplitCandidate)> {
        let mut best: Option<(usize, SplitCandidate)> = None;
        for &s in slots {
            if let Some(c) = self.search(s, start, end, Mode::Greedy, node, min_child) {
                if best.as_ref().is_none_or(|(_, b)| c.reduction > b.reduction) {
                    best = Some((s, c));
                }
            }
        }
        best
    }

    pub(crate) fn choose(&mut self, start: usize, end: usize, node: &Acc, params: &NodeSearch, rng: Option<&mut StreamRng>) -> Option<Chosen> {
        let slots = self.candidate_slots(params.features_per_node, rng);
        let tol = node.impurity() * 1e-12;
        match params.mode {
            Mode::Guide => {
                let ranked = self.ranked_tests(start, end, node, &slots, params.bins);
                for (slot, _) in ranked {
                    if let Some(c) = self.search(slot, start, end, Mode::Guide, node, params.min_child) {
                        if c.reduction > tol {
                            return Some(Chosen {
                                split: Split {
                                    variable: self.features[slot],
                                    rule: c.rule,
                                    surrogates: Vec::new(),
                                },
                            });
                        }
                    }
                }
                None
            }
            Mode::Greedy => {
                let (slot, c) = self.best_greedy(start, end, node, &slots, params.min_child)?;
                if c.reduction <= tol {
                    return None;
                }
                let mut rule = c.rule;
                rule.set_missing_side(if c.n_left >= c.n_right { Side::Left } else { Side::Right });
                let surrogates = if params.max_surrogates > 0 {
                    self.surrogates(slot, &rule, start, end, params.max_surrogates)
                } else {
                    Vec::new()
                };
                Some(Chosen {
                    split: Split {
                        variable: self.features[slot],
                        rule,
                        surrogates,
                    },
                })
            }
        }
    }

    /// Surrogate splits mimicking `rule` on slot `primary`, best first.
    pub(crate) fn surrogates(&mut self, primary: usize, rule: &Rule, start: usize, end: usize, max: usize) -> Vec<Surrogate> {
        let col = self.data.column(self.features[primary]).data();
        for &p in &self.pos[start..end] {
            self.direction[p as usize] = match rule.observed_side(col, self.rows[p as usize]) {
                None => 0,
                Some(Side::Left) => 1,
                Some(Side::Right) => 2,
            };
        }
        let mut found = Vec::new();
        for slot in 0..self.features.len() {
            if slot == primary {
                continue;
            }
            let s = match self.cols[slot] {
                FeatureCol::Ordinal(_) => self.ordinal_surrogate(slot, start, end),
                FeatureCol::Categorical { .. } => self.categorical_surrogate(slot, start, end),
            };
            if let Some(s) = s {
                found.push(s);
            }
        }
        found.sort_by(|a: &Surrogate, b| b.agreement.total_cmp(&a.agreement).then(a.variable.cmp(&b.variable)));
        found.truncate(max);
        found
    }

    fn ordinal_surrogate(&self, slot: usize, start: usize, end: usize) -> Option<Surrogate> {
        let k = self.observed_prefix(slot, start, end);
        let seg = &self.sorted[slot].as_ref().expect("ordinal slot")[start..start + k];
        let FeatureCol::Ordinal(vals) = &self.cols[slot] else {
            return None;
        };
        let (mut tot_l, mut tot_r) = (0.0, 0.0);
        for &p in seg {
            match self.direction[p as usize] {
                1 => tot_l += self.y.weight(p),
                2 => tot_r += self.y.weight(p),
                _ => {}
            }
        }
        let both = tot_l + tot_r;
        if both == 0.0 {
            return None;
        }
        let (mut l, mut r) = (0.0, 0.0);
        let mut best: Option<(f64, f64, bool)> = None;
        for (i, &p) in seg.iter().enumerate() {
            match self.direction[p as usize] {
                1 => l += self.y.weight(p),
                2 => r += self.y.weight(p),
                _ => continue,
            }
            let next = seg[i + 1..].iter().copied().find(|&q| self.direction[q as usize] != 0);
            let Some(q) = next else { break };
            let (v, w) = (vals[p as usize], vals[q as usize]);
            if w <= v {
                continue;
            }
            let mut thr = v + (w - v) / 2.0;
            if !(thr < w) || !(thr >= v) {
                thr = v;
            }
            let forward = l + (tot_r - r);
            let reverse = r + (tot_l - l);
            for (agree, flipped) in [(forward, false), (reverse, true)] {
                if best.is_none_or(|b| agree > b.0) {
                    best = Some((agree, thr, flipped));
                }
            }
        }
        let (agree, thr, flipped) = best?;
        let rate = agree / both;
        let baseline = tot_l.max(tot_r) / both;
        (rate > baseline).then(|| Surrogate {
            variable: self.features[slot],
            rule: Rule::Threshold {
                value: thr,
                missing: Side::Left,
            },
            flipped,
            agreement: rate,
        })
    }

    fn categorical_surrogate(&mut self, slot: usize, start: usize, end: usize) -> Option<Surrogate> {
        let Frame {
            cols,
            table,
            direction,
            pos,
            y,
            features,
            ..
        } = self;
        let FeatureCol::Categorical { codes, n_levels } = &cols[slot] else {
            return None;
        };
        let n_levels = *n_levels;
        table.clear();
        table.resize(2 * n_levels, 0.0);
        let (mut tot_l, mut tot_r) = (0.0, 0.0);
        for &p in &pos[start..end] {
            let d = direction[p as usize];
            let c = codes[p as usize];
            if d == 0 || c == NA_CODE {
                continue;
            }
            let w = y.weight(p);
            table[2 * c as usize + (d as usize - 1)] += w;
            if d == 1 {
                tot_l += w;
            } else {
                tot_r += w;
            }
        }
        let both = tot_l + tot_r;
        if both == 0.0 {
            return None;
        }
        let majority_left = tot_l >= tot_r;
        let (mut left, mut right) = (Vec::new(), Vec::new());
        let mut agree = 0.0;
        for c in 0..n_levels {
            let (l, r) = (table[2 * c], table[2 * c + 1]);
            if l + r == 0.0 {
                continue;
            }
            agree += l.max(r);
            if l > r || (l == r && majority_left) {
                left.push(c as u32);
            } else {
                right.push(c as u32);
            }
        }
        if left.is_empty() || right.is_empty() {
            return None;
        }
        let rate = agree / both;
        let baseline = tot_l.max(tot_r) / both;
        (rate > baseline).then(|| Surrogate {
            variable: features[slot],
            rule: Rule::Subset {
                left,
                right,
                missing: Side::Left,
            },
            flipped: false,
            agreement: rate,
        })
    }
}

/// Response values for the single-variable entry points.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Class { codes: &'a [u32], n_classes: usize },
    Numeric(&'a [f64]),
}

impl Target<'_> {
    fn len(&self) -> usize {
        match self {
            Target::Class { codes, .. } => codes.len(),
            Target::Numeric(v) => v.len(),
        }
    }

    fn response(&self) -> Response {
        match self {
            Target::Class { codes, n_classes } => Response::Class {
                codes: codes.iter().map(|&c| Some(c)).collect(),
                labels: (0..*n_classes).map(|c| c.to_string()).collect(),
            },
            Target::Numeric(v) => Response::Numeric(v.iter().map(|&x| Some(x)).collect()),
        }
    }

    fn ydata(&self) -> YData {
        match self {
            Target::Class { codes, n_classes } => YData::Class {
                codes: codes.to_vec(),
                n_classes: *n_classes,
                weights: vec![1.0; codes.len()],
            },
            Target::Numeric(v) => YData::Numeric {
                values: v.to_vec(),
                offset: 0.0,
                weights: vec![1.0; v.len()],
            },
        }
    }
}

/// Cells of a single variable.
#[derive(Debug, Clone, Copy)]
pub enum XView<'a> {
    Ordinal(&'a [Option<f64>]),
    Categorical(&'a [Option<u32>]),
}

fn single_variable_data(x: XView<'_>) -> Result<Dataset> {
    let col = match x {
        XView::Ordinal(v) => Column::ordinal("x", v.to_vec()),
        XView::Categorical(codes) => {
            let n_levels = codes.iter().flatten().max().map_or(0, |&m| m as usize + 1);
            Column::new(
                "x",
                ColumnData::Categorical {
                    codes: codes.to_vec(),
                    levels: (0..n_levels).map(|l| l.to_string()).collect(),
                },
            )
        }
    };
    Dataset::new(vec![col])
}

fn with_single_frame<T>(x: XView<'_>, y: Target<'_>, f: impl FnOnce(&mut Frame<'_>) -> T) -> Result<T> {
    let n = match x {
        XView::Ordinal(v) => v.len(),
        XView::Categorical(c) => c.len(),
    };
    if n != y.len() {
        return Err(Error::InvalidArgument(format!("x has {n} cells, y has {}", y.len())));
    }
    let data = single_variable_data(x)?;
    let set = TrainingSet::new(&data, "y", y.response(), &[])?;
    let mut frame = Frame::new(&set, (0..n).collect())?;
    Ok(f(&mut frame))
}

/// Pearson chi-squared test of `y` against `x`, with ordinal `x` binned at
/// `bins` quantiles and missing cells forming one extra level.
pub fn contingency_chisq(x: XView<'_>, y: &[u32], n_classes: usize, bins: usize) -> Result<ChisqResult> {
    let target = Target::Class { codes: y, n_classes };
    with_single_frame(x, target, |frame| {
        let n = frame.pos.len();
        let node = frame.node_acc(0, n);
        let q = frame.prepare_test_classes(0, n, &node);
        frame.chisq(0, 0, n, q, bins)
    })
}

/// Best threshold split of an ordinal variable using every row, with the
/// missing block tried on both sides.
pub fn best_ordinal_split(x: &[Option<f64>], y: Target<'_>, min_child: usize) -> Result<Option<SplitCandidate>> {
    with_single_frame(XView::Ordinal(x), y, |frame| {
        let n = frame.pos.len();
        let node = frame.node_acc(0, n);
        frame.search(0, 0, n, Mode::Guide, &node, min_child.max(1))
    })
}

fn groups_from_slices(x: &[Option<u32>], y: &YData) -> Vec<Group> {
    let n_levels = x.iter().flatten().max().map_or(0, |&m| m as usize + 1);
    let mut accs: Vec<Option<Acc>> = vec![None; n_levels + 1];
    for (i, cell) in x.iter().enumerate() {
        let lvl = cell.map_or(n_levels, |c| c as usize);
        let acc = accs[lvl].get_or_insert_with(|| y.zero());
        y.push(acc, i as u32);
    }
    accs.into_iter()
        .enumerate()
        .filter_map(|(i, a)| {
            a.map(|acc| Group {
                key: if i == n_levels {
                    LevelKey::Missing
                } else {
                    LevelKey::Level(i as u32)
                },
                acc,
            })
        })
        .collect()
}

fn slice_problem(x: &[Option<u32>], y: Target<'_>) -> Result<(Vec<Group>, Acc)> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("x has {} cells, y has {}", x.len(), y.len())));
    }
    let yd = y.ydata();
    let groups = groups_from_slices(x, &yd);
    let mut total = yd.zero();
    groups.iter().for_each(|g| total.add(&g.acc));
    Ok((groups, total))
}

/// Levels present in `x` (missing as its own level) ordered by the share of
/// the first present class of a two-class `y`.
pub fn order_categories_binary(x: &[Option<u32>], y: &[u32]) -> Result<Vec<LevelKey>> {
    let n_classes = y.iter().max().map_or(1, |&m| m as usize + 1);
    let (groups, total) = slice_problem(x, Target::Class { codes: y, n_classes })?;
    if total.present_classes() != 2 {
        return Err(Error::Refused("binary ordering needs exactly two classes".into()));
    }
    Ok(binary_order(&groups, &total).into_iter().map(|i| groups[i].key).collect())
}

/// The staged categorical search used in guide mode.
pub fn categorical_split(x: &[Option<u32>], y: Target<'_>, min_child: usize) -> Result<CategoricalSearch> {
    let (groups, total) = slice_problem(x, y)?;
    Ok(categorical_search(&groups, &total, min_child.max(1) as f64))
}

/// Every subset split; refused above 11 levels.
pub fn exhaustive_subset_search(x: &[Option<u32>], y: Target<'_>, min_child: usize) -> Result<CategoricalSearch> {
    let (groups, total) = slice_problem(x, y)?;
    if groups.len() > MAX_EXHAUSTIVE_LEVELS {
        return Err(Error::Refused(format!(
            "{} levels exceed the exhaustive search limit of {MAX_EXHAUSTIVE_LEVELS}",
            groups.len()
        )));
    }
    Ok(exhaustive_candidates(&groups, &total, min_child.max(1) as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedSearch {
    /// Majority class assigned to each level.
    pub mapping: Vec<(LevelKey, u32)>,
    pub search: CategoricalSearch,
}

/// Merges levels by their majority class and searches the merged variable;
/// only for `2 < q <= 11` classes and more than 20 levels.
pub fn merge_categories(x: &[Option<u32>], y: Target<'_>, min_child: usize) -> Result<MergedSearch> {
    let (groups, total) = slice_problem(x, y)?;
    let q = total.present_classes();
    if !(q > 2 && q <= MAX_EXHAUSTIVE_LEVELS && groups.len() > 20) {
        return Err(Error::Refused(format!(
            "merging needs 2 < q <= {MAX_EXHAUSTIVE_LEVELS} classes and more than 20 levels (q = {q}, p = {})",
            groups.len()
        )));
    }
    let (majority, search) = merged_search(&groups, &total, min_child.max(1) as f64);
    Ok(MergedSearch {
        mapping: groups.iter().zip(majority).map(|(g, c)| (g.key, c as u32)).collect(),
        search,
    })
}

/// Orders levels by the leading discriminant coordinate (or, for a numeric
/// response, by level mean) and searches the induced prefix splits.
pub fn lda_ordering(x: &[Option<u32>], y: Target<'_>, min_child: usize) -> Result<DiscriminantOrdering> {
    let (groups, total) = slice_problem(x, y)?;
    Ok(discriminant_search(&groups, &total, min_child.max(1) as f64))
}

/// The variable a node would split on: most significant association test in
/// guide mode, largest impurity reduction in greedy mode. `None` when no
/// variable can split the rows.
pub fn select_variable(set: &TrainingSet<'_>, mode: Mode, min_child: usize) -> Result<Option<usize>> {
    let mut frame = Frame::new(set, set.rows().to_vec())?;
    let n = frame.pos.len();
    let node = frame.node_acc(0, n);
    let slots: Vec<usize> = (0..frame.features.len()).collect();
    Ok(match mode {
        Mode::Guide => frame
            .ranked_tests(0, n, &node, &slots, DEFAULT_BINS)
            .first()
            .map(|(s, _)| frame.features[*s]),
        Mode::Greedy => frame
            .best_greedy(0, n, &node, &slots, min_child.max(1))
            .filter(|(_, c)| c.reduction > node.impurity() * 1e-12)
            .map(|(s, _)| frame.features[s]),
    })
}

/// Association tests of every feature at the root, most significant first.
pub fn association_tests(set: &TrainingSet<'_>, bins: usize) -> Result<Vec<ChisqResult>> {
    let mut frame = Frame::new(set, set.rows().to_vec())?;
    let n = frame.pos.len();
    let node = frame.node_acc(0, n);
    let slots: Vec<usize> = (0..frame.features.len()).collect();
    Ok(frame.ranked_tests(0, n, &node, &slots, bins).into_iter().map(|(_, t)| t).collect())
}

/// Surrogates for `primary` over the training rows of `set`.
pub fn find_surrogates(set: &TrainingSet<'_>, primary: &Split, max_surrogates: usize) -> Result<Vec<Surrogate>> {
    let mut frame = Frame::new(set, set.rows().to_vec())?;
    let slot = frame
        .features
        .iter()
        .position(|&f| f == primary.variable)
        .ok_or_else(|| Error::InvalidArgument("primary variable is not a feature".into()))?;
    let n = frame.pos.len();
    Ok(frame.surrogates(slot, &primary.rule, 0, n, max_surrogates))
}
