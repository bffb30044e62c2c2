//! Piecewise-constant classification and regression trees.
//!
//! A node is split when it holds at least `2 * min_node_size` rows, is not
//! pure, is above the depth cap, and an admissible split exists (both
//! children at least `min_node_size`). There is no pruning.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, VariableKind};
use crate::error::{Error, Result};
use crate::frame::{Acc, Frame, Response, TrainingSet, YData};
use crate::rng::StreamRng;
use crate::split::{Mode, NodeSearch, Rule, Side, Split, Surrogate, DEFAULT_BINS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub mode: Mode,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    /// Surrogates kept per split in greedy mode.
    pub max_surrogates: usize,
    /// Quantile bins for ordinal variables in the association tests.
    pub bins: usize,
    /// Variables drawn at random per node; `None` uses all of them.
    pub features_per_node: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            mode: Mode::Guide,
            min_node_size: 50,
            max_depth: None,
            max_surrogates: 5,
            bins: DEFAULT_BINS,
            features_per_node: None,
        }
    }
}

impl TreeParams {
    pub fn guide() -> Self {
        Self::default()
    }

    pub fn greedy() -> Self {
        TreeParams {
            mode: Mode::Greedy,
            ..Self::default()
        }
    }

    pub fn with_min_node_size(mut self, n: usize) -> Self {
        self.min_node_size = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_node_size == 0 {
            return Err(Error::InvalidArgument("min_node_size must be at least 1".into()));
        }
        if self.bins == 0 {
            return Err(Error::InvalidArgument("bins must be at least 1".into()));
        }
        if self.features_per_node == Some(0) {
            return Err(Error::InvalidArgument("features_per_node must be at least 1".into()));
        }
        Ok(())
    }
}

/// Response statistics of a node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeStats {
    Class { counts: Vec<usize> },
    Mean { mean: f64, sse: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Leaf,
    Internal { split: Split, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<usize>,
    pub depth: usize,
    pub n: usize,
    pub stats: NodeStats,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf)
    }

    /// Class proportions (empty for regression nodes).
    pub fn proportions(&self) -> Vec<f64> {
        match &self.stats {
            NodeStats::Class { counts } => {
                let n: usize = counts.iter().sum();
                counts.iter().map(|&c| if n > 0 { c as f64 / n as f64 } else { 0.0 }).collect()
            }
            NodeStats::Mean { .. } => Vec::new(),
        }
    }

    /// Mean response (NaN for classification nodes).
    pub fn mean(&self) -> f64 {
        match &self.stats {
            NodeStats::Mean { mean, .. } => *mean,
            NodeStats::Class { .. } => f64::NAN,
        }
    }

    pub fn impurity(&self) -> f64 {
        match &self.stats {
            NodeStats::Class { counts } => {
                let n = self.n as f64;
                if n == 0.0 {
                    0.0
                } else {
                    n - counts.iter().map(|&c| (c as f64).powi(2)).sum::<f64>() / n
                }
            }
            NodeStats::Mean { sse, .. } => *sse,
        }
    }
}

/// Leaf summary returned by [`Tree::leaf_stats`].
#[derive(Debug, Clone, PartialEq)]
pub enum LeafStats {
    Class { n: usize, proportions: Vec<f64> },
    Mean { n: usize, mean: f64 },
}

/// Name, kind and level labels of a dataset column, kept so a tree can be
/// rendered, serialized and re-aligned to another dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub kind: VariableKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

pub fn column_infos(data: &Dataset) -> Vec<ColumnInfo> {
    data.columns()
        .map(|c| ColumnInfo {
            name: c.name().to_owned(),
            kind: c.kind(),
            levels: c.levels().to_vec(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ResponseInfo {
    Class { name: String, labels: Vec<String> },
    Numeric { name: String },
}

impl ResponseInfo {
    pub fn name(&self) -> &str {
        match self {
            ResponseInfo::Class { name, .. } | ResponseInfo::Numeric { name } => name,
        }
    }

    fn of(set: &TrainingSet<'_>) -> Self {
        match set.response() {
            Response::Class { labels, .. } => ResponseInfo::Class {
                name: set.response_name().to_owned(),
                labels: labels.clone(),
            },
            Response::Numeric(_) => ResponseInfo::Numeric {
                name: set.response_name().to_owned(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    params: TreeParams,
    columns: Arc<Vec<ColumnInfo>>,
    response: ResponseInfo,
}

/// Fits a tree on the training rows of `set`.
pub fn fit(set: &TrainingSet<'_>, params: &TreeParams) -> Result<Tree> {
    fit_rows(set, set.rows().to_vec(), params, None, Arc::new(column_infos(set.data())))
}

/// Classification tree of the categorical column `y` on all other columns.
pub fn fit_classification_tree(data: &Dataset, y: &str, params: &TreeParams) -> Result<Tree> {
    let set = TrainingSet::for_column(data, y)?;
    if !matches!(set.response(), Response::Class { .. }) {
        return Err(Error::InvalidArgument(format!("`{y}` is not categorical")));
    }
    fit(&set, params)
}

/// Regression tree of the ordinal column `y` on all other columns, fitted on
/// rows where `y` is observed.
pub fn fit_regression_tree(data: &Dataset, y: &str, params: &TreeParams) -> Result<Tree> {
    let set = TrainingSet::for_column(data, y)?;
    if !matches!(set.response(), Response::Numeric(_)) {
        return Err(Error::InvalidArgument(format!("`{y}` is not ordinal")));
    }
    fit(&set, params)
}

fn stats_of(acc: &Acc, y: &YData) -> NodeStats {
    match (acc, y) {
        (Acc::Class { counts, .. }, _) => NodeStats::Class {
            counts: counts.iter().map(|&c| c as usize).collect(),
        },
        (Acc::Moments { .. }, YData::Numeric { offset, .. }) => NodeStats::Mean {
            mean: offset + acc.mean(),
            sse: acc.impurity(),
        },
        (Acc::Moments { .. }, YData::Class { .. }) => unreachable!(),
    }
}

/// Grows a tree on `rows` (dataset rows, repeats allowed). `rng` is used only
/// for per-node variable subsampling.
pub(crate) fn fit_rows(
    set: &TrainingSet<'_>,
    rows: Vec<usize>,
    params: &TreeParams,
    mut rng: Option<&mut StreamRng>,
    columns: Arc<Vec<ColumnInfo>>,
) -> Result<Tree> {
    params.validate()?;
    let mut frame = Frame::new(set, rows)?;
    let n = frame.pos.len();
    let search = NodeSearch {
        mode: params.mode,
        min_child: params.min_node_size,
        max_surrogates: if params.mode == Mode::Greedy { params.max_surrogates } else { 0 },
        features_per_node: params.features_per_node,
        bins: params.bins,
    };
    let mut nodes = Vec::new();
    // (node id, segment start, segment end)
    let mut stack = vec![(0usize, 0usize, n)];
    let root_acc = frame.node_acc(0, n);
    nodes.push(Node {
        parent: None,
        depth: 0,
        n: root_acc.n() as usize,
        stats: stats_of(&root_acc, &frame.y),
        kind: NodeKind::Leaf,
    });
    while let Some((id, start, end)) = stack.pop() {
        let depth = nodes[id].depth;
        let acc = frame.node_acc(start, end);
        let size = acc.n() as usize;
        let pure = match &acc {
            Acc::Class { .. } => acc.present_classes() < 2,
            Acc::Moments { .. } => !(acc.impurity() > 0.0),
        };
        if pure || size < 2 * params.min_node_size || params.max_depth.is_some_and(|d| depth >= d) {
            continue;
        }
        let Some(chosen) = frame.choose(start, end, &acc, &search, rng.as_deref_mut()) else {
            continue;
        };
        let split = chosen.split;
        for i in start..end {
            let p = frame.pos[i] as usize;
            frame.go_left[p] = split.route(frame.data, frame.rows[p]) == Side::Left;
        }
        let n_left = frame.partition(start, end);
        if n_left == 0 || n_left == end - start {
            continue;
        }
        let mid = start + n_left;
        let left = nodes.len();
        let right = left + 1;
        for (s, e) in [(start, mid), (mid, end)] {
            let a = frame.node_acc(s, e);
            nodes.push(Node {
                parent: Some(id),
                depth: depth + 1,
                n: a.n() as usize,
                stats: stats_of(&a, &frame.y),
                kind: NodeKind::Leaf,
            });
        }
        nodes[id].kind = NodeKind::Internal { split, left, right };
        stack.push((right, mid, end));
        stack.push((left, start, mid));
    }
    Ok(Tree {
        nodes,
        params: *params,
        columns,
        response: ResponseInfo::of(set),
    })
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn response(&self) -> &ResponseInfo {
        &self.response
    }

    pub fn columns(&self) -> &[ColumnInfo] {
        &self.columns
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.response, ResponseInfo::Class { .. })
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Leaf reached by `row` of `data`. `data` must have the column layout of
    /// the training data (see [`Tree::align`]).
    pub fn route(&self, data: &Dataset, row: usize) -> usize {
        let mut id = 0;
        while let NodeKind::Internal { split, left, right } = &self.nodes[id].kind {
            id = match split.route(data, row) {
                Side::Left => *left,
                Side::Right => *right,
            };
        }
        id
    }

    /// Path of node ids from the root to the leaf reached by `row`.
    pub fn path(&self, data: &Dataset, row: usize) -> Vec<usize> {
        let mut out = vec![0];
        let mut id = 0;
        while let NodeKind::Internal { split, left, right } = &self.nodes[id].kind {
            id = match split.route(data, row) {
                Side::Left => *left,
                Side::Right => *right,
            };
            out.push(id);
        }
        out
    }

    pub fn leaf_stats(&self, id: usize) -> LeafStats {
        let node = &self.nodes[id];
        match &node.stats {
            NodeStats::Class { .. } => LeafStats::Class {
                n: node.n,
                proportions: node.proportions(),
            },
            NodeStats::Mean { mean, .. } => LeafStats::Mean { n: node.n, mean: *mean },
        }
    }

    pub fn predict_proba(&self, data: &Dataset, row: usize) -> Vec<f64> {
        self.nodes[self.route(data, row)].proportions()
    }

    pub fn predict_mean(&self, data: &Dataset, row: usize) -> f64 {
        self.nodes[self.route(data, row)].mean()
    }

    /// Column indices used by primary splits, in node order.
    pub fn split_variables(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::Internal { split, .. } => Some(split.variable),
                NodeKind::Leaf => None,
            })
            .collect()
    }

    /// Re-targets the tree to a dataset with possibly different column order
    /// or level dictionaries. Variables are matched by name and levels by
    /// label; a label absent from `data` is dropped from its subset.
    pub fn align(&self, data: &Dataset) -> Result<Tree> {
        let new_cols = Arc::new(column_infos(data));
        let map = ColumnMap::new(&self.columns, data)?;
        let mut tree = self.clone();
        for node in &mut tree.nodes {
            if let NodeKind::Internal { split, .. } = &mut node.kind {
                map.apply_split(split)?;
            }
        }
        tree.columns = new_cols;
        Ok(tree)
    }

    /// Text rendering, one line per node. `<=*` marks the side that also
    /// receives missing values.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_node(0, 0, "root", &mut out);
        out
    }

    fn render_node(&self, id: usize, indent: usize, label: &str, out: &mut String) {
        let node = &self.nodes[id];
        let _ = writeln!(out, "{:indent$}{label}  {}", "", self.describe_stats(node), indent = indent * 2);
        if let NodeKind::Internal { split, left, right } = &node.kind {
            let (l, r) = self.condition_text(split);
            self.render_node(*left, indent + 1, &l, out);
            self.render_node(*right, indent + 1, &r, out);
        }
    }

    fn describe_stats(&self, node: &Node) -> String {
        match (&node.stats, &self.response) {
            (NodeStats::Class { counts }, ResponseInfo::Class { labels, .. }) => {
                let props = node.proportions();
                let mut best = 0;
                for (c, &k) in counts.iter().enumerate() {
                    if k > counts[best] {
                        best = c;
                    }
                }
                let parts: Vec<String> = labels
                    .iter()
                    .zip(&props)
                    .map(|(l, p)| format!("{l}={p:.3}"))
                    .collect();
                let leaf = if node.is_leaf() { " *" } else { "" };
                format!(
                    "n={} class={} p=({}){leaf}",
                    node.n,
                    labels.get(best).map_or("?", String::as_str),
                    parts.join(", ")
                )
            }
            (NodeStats::Mean { mean, .. }, _) => {
                let leaf = if node.is_leaf() { " *" } else { "" };
                format!("n={} mean={mean:.2}{leaf}", node.n)
            }
            _ => format!("n={}", node.n),
        }
    }

    /// Conditions for the left and right child of a split.
    pub fn condition_text(&self, split: &Split) -> (String, String) {
        let col = &self.columns[split.variable];
        let name = &col.name;
        let star = |side: Side, s: Side| if side == s { "*" } else { "" };
        match &split.rule {
            Rule::Threshold { value, missing } if value.is_infinite() => {
                let (obs, na) = (format!("{name} observed"), format!("{name} = NA"));
                match missing {
                    Side::Right => (obs, na),
                    Side::Left => (na, obs),
                }
            }
            Rule::Threshold { value, missing } => (
                format!("{name} <={} {}", star(*missing, Side::Left), fmt_num(*value)),
                format!("{name} >{} {}", star(*missing, Side::Right), fmt_num(*value)),
            ),
            Rule::Subset { left, right, missing } => {
                let labels = |codes: &[u32]| {
                    codes
                        .iter()
                        .map(|&c| col.levels.get(c as usize).cloned().unwrap_or_else(|| c.to_string()))
                        .collect::<Vec<_>>()
                        .join(", ")
                };
                (
                    format!("{name} in{} {{{}}}", star(*missing, Side::Left), labels(left)),
                    format!("{name} in{} {{{}}}", star(*missing, Side::Right), labels(right)),
                )
            }
        }
    }

    pub fn to_document(&self) -> TreeDocument {
        TreeDocument {
            format: TREE_FORMAT.to_owned(),
            response: self.response.clone(),
            params: self.params,
            columns: (*self.columns).clone(),
            nodes: self.node_docs(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Tree> {
        let doc: TreeDocument = serde_json::from_str(text)?;
        Tree::from_document(doc)
    }

    pub fn from_document(doc: TreeDocument) -> Result<Tree> {
        if doc.format != TREE_FORMAT {
            return Err(Error::InvalidArgument(format!("unsupported tree format `{}`", doc.format)));
        }
        let columns = Arc::new(doc.columns);
        Tree::from_parts(doc.nodes, doc.params, columns, doc.response)
    }

    pub(crate) fn node_docs(&self) -> Vec<NodeDoc> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(id, n)| {
                let (counts, mean, sse) = match &n.stats {
                    NodeStats::Class { counts } => (Some(counts.clone()), None, None),
                    NodeStats::Mean { mean, sse } => (None, Some(*mean), Some(*sse)),
                };
                let (split, left, right) = match &n.kind {
                    NodeKind::Leaf => (None, None, None),
                    NodeKind::Internal { split, left, right } => {
                        (Some(split_doc(split, &self.columns)), Some(*left), Some(*right))
                    }
                };
                NodeDoc {
                    id,
                    parent: n.parent,
                    depth: n.depth,
                    n: n.n,
                    class_counts: counts,
                    mean,
                    sse,
                    split,
                    left,
                    right,
                }
            })
            .collect()
    }

    pub(crate) fn from_parts(
        docs: Vec<NodeDoc>,
        params: TreeParams,
        columns: Arc<Vec<ColumnInfo>>,
        response: ResponseInfo,
    ) -> Result<Tree> {
        let by_name: HashMap<&str, usize> = columns.iter().enumerate().map(|(i, c)| (c.name.as_str(), i)).collect();
        let mut nodes = Vec::with_capacity(docs.len());
        for (i, d) in docs.into_iter().enumerate() {
            if d.id != i {
                return Err(Error::InvalidArgument(format!("node {} listed at position {i}", d.id)));
            }
            let stats = match (d.class_counts, d.mean) {
                (Some(counts), None) => NodeStats::Class { counts },
                (None, Some(mean)) => NodeStats::Mean {
                    mean,
                    sse: d.sse.unwrap_or(0.0),
                },
                _ => return Err(Error::InvalidArgument(format!("node {i} needs class counts or a mean"))),
            };
            let kind = match (d.split, d.left, d.right) {
                (None, None, None) => NodeKind::Leaf,
                (Some(s), Some(left), Some(right)) => NodeKind::Internal {
                    split: split_from_doc(s, &columns, &by_name)?,
                    left,
                    right,
                },
                _ => return Err(Error::InvalidArgument(format!("node {i} has an incomplete split"))),
            };
            nodes.push(Node {
                parent: d.parent,
                depth: d.depth,
                n: d.n,
                stats,
                kind,
            });
        }
        let count = nodes.len();
        if count == 0 {
            return Err(Error::InvalidArgument("tree has no nodes".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if let NodeKind::Internal { left, right, .. } = n.kind {
                if left >= count || right >= count || left <= i || right <= i {
                    return Err(Error::InvalidArgument(format!("node {i} has invalid children")));
                }
            }
        }
        Ok(Tree {
            nodes,
            params,
            columns,
            response,
        })
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    }
}

pub const TREE_FORMAT: &str = "treeimpute-tree/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub format: String,
    pub response: ResponseInfo,
    pub params: TreeParams,
    pub columns: Vec<ColumnInfo>,
    pub nodes: Vec<NodeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    pub depth: usize,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDoc {
    pub variable: String,
    pub rule: RuleDoc,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub surrogates: Vec<SurrogateDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateDoc {
    pub variable: String,
    pub rule: RuleDoc,
    pub flipped: bool,
    pub agreement: f64,
}

/// Serialized rule. An observed-versus-missing threshold has `value: null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RuleDoc {
    Threshold {
        value: Option<f64>,
        missing: Side,
    },
    Subset {
        left: Vec<String>,
        right: Vec<String>,
        missing: Side,
    },
}

fn rule_doc(rule: &Rule, col: &ColumnInfo) -> RuleDoc {
    match rule {
        Rule::Threshold { value, missing } => RuleDoc::Threshold {
            value: value.is_finite().then_some(*value),
            missing: *missing,
        },
        Rule::Subset { left, right, missing } => {
            let labels = |codes: &[u32]| codes.iter().map(|&c| col.levels[c as usize].clone()).collect();
            RuleDoc::Subset {
                left: labels(left),
                right: labels(right),
                missing: *missing,
            }
        }
    }
}

fn split_doc(split: &Split, columns: &[ColumnInfo]) -> SplitDoc {
    SplitDoc {
        variable: columns[split.variable].name.clone(),
        rule: rule_doc(&split.rule, &columns[split.variable]),
        surrogates: split
            .surrogates
            .iter()
            .map(|s| SurrogateDoc {
                variable: columns[s.variable].name.clone(),
                rule: rule_doc(&s.rule, &columns[s.variable]),
                flipped: s.flipped,
                agreement: s.agreement,
            })
            .collect(),
    }
}

fn rule_from_doc(doc: RuleDoc, col: &ColumnInfo) -> Result<Rule> {
    match (doc, col.kind) {
        (RuleDoc::Threshold { value, missing }, VariableKind::Ordinal) => Ok(Rule::Threshold {
            value: value.unwrap_or(f64::INFINITY),
            missing,
        }),
        (RuleDoc::Subset { left, right, missing }, VariableKind::Categorical) => {
            let codes = |labels: Vec<String>| -> Result<Vec<u32>> {
                let mut out = labels
                    .iter()
                    .map(|l| {
                        col.levels
                            .iter()
                            .position(|x| x == l)
                            .map(|c| c as u32)
                            .ok_or_else(|| Error::InvalidArgument(format!("unknown level `{l}` of `{}`", col.name)))
                    })
                    .collect::<Result<Vec<u32>>>()?;
                out.sort_unstable();
                Ok(out)
            };
            Ok(Rule::Subset {
                left: codes(left)?,
                right: codes(right)?,
                missing,
            })
        }
        _ => Err(Error::InvalidArgument(format!("rule does not match the kind of `{}`", col.name))),
    }
}

fn split_from_doc(doc: SplitDoc, columns: &[ColumnInfo], by_name: &HashMap<&str, usize>) -> Result<Split> {
    let index = |name: &str| by_name.get(name).copied().ok_or_else(|| Error::UnknownColumn(name.to_owned()));
    let variable = index(&doc.variable)?;
    let rule = rule_from_doc(doc.rule, &columns[variable])?;
    let surrogates = doc
        .surrogates
        .into_iter()
        .map(|s| {
            let v = index(&s.variable)?;
            Ok(Surrogate {
                variable: v,
                rule: rule_from_doc(s.rule, &columns[v])?,
                flipped: s.flipped,
                agreement: s.agreement,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Split {
        variable,
        rule,
        surrogates,
    })
}

/// Maps column indices and level codes from one layout to a dataset.
pub(crate) struct ColumnMap {
    index: Vec<Option<usize>>,
    levels: Vec<Vec<Option<u32>>>,
}

impl ColumnMap {
    pub(crate) fn new(from: &[ColumnInfo], data: &Dataset) -> Result<ColumnMap> {
        let mut index = Vec::with_capacity(from.len());
        let mut levels = Vec::with_capacity(from.len());
        for col in from {
            let Ok(j) = data.column_index(&col.name) else {
                index.push(None);
                levels.push(Vec::new());
                continue;
            };
            let target = data.column(j);
            if target.kind() != col.kind {
                return Err(Error::Schema(format!(
                    "column `{}` is {} in the model and {} in the data",
                    col.name,
                    col.kind,
                    target.kind()
                )));
            }
            let lookup: HashMap<&str, u32> = target
                .levels()
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i as u32))
                .collect();
            index.push(Some(j));
            levels.push(col.levels.iter().map(|l| lookup.get(l.as_str()).copied()).collect());
        }
        Ok(ColumnMap { index, levels })
    }

    fn apply_rule(&self, var: usize, rule: &mut Rule) {
        if let Rule::Subset { left, right, .. } = rule {
            for set in [left, right] {
                let mut mapped: Vec<u32> = set.iter().filter_map(|&c| self.levels[var][c as usize]).collect();
                mapped.sort_unstable();
                *set = mapped;
            }
        }
    }

    pub(crate) fn apply_split(&self, split: &mut Split) -> Result<()> {
        let var = split.variable;
        split.variable = self.index[var]
            .ok_or_else(|| Error::UnknownColumn(format!("model variable #{var} is not in the data")))?;
        self.apply_rule(var, &mut split.rule);
        let mut kept = Vec::with_capacity(split.surrogates.len());
        for mut s in split.surrogates.drain(..) {
            if let Some(j) = self.index[s.variable] {
                self.apply_rule(s.variable, &mut s.rule);
                s.variable = j;
                kept.push(s);
            }
        }
        split.surrogates = kept;
        Ok(())
    }
}
