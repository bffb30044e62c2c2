//! Columnar survey data with explicit per-cell missingness.
//!
//! A [`Dataset`] holds ordinal columns (finite reals) and categorical columns
//! (codes into a frozen level dictionary). A missing cell is `None`; there is
//! no sentinel value, so every finite real remains a legal ordinal value.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Ordinal,
    Categorical,
}

impl fmt::Display for VariableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariableKind::Ordinal => f.write_str("ordinal"),
            VariableKind::Categorical => f.write_str("categorical"),
        }
    }
}

impl std::str::FromStr for VariableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ordinal" | "numeric" => Ok(VariableKind::Ordinal),
            "categorical" | "nominal" => Ok(VariableKind::Categorical),
            other => Err(Error::Schema(format!("unknown variable kind `{other}`"))),
        }
    }
}

/// Cell storage for one column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Ordinal(Vec<Option<f64>>),
    Categorical {
        codes: Vec<Option<u32>>,
        levels: Vec<String>,
    },
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Ordinal(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> VariableKind {
        match self {
            ColumnData::Ordinal(_) => VariableKind::Ordinal,
            ColumnData::Categorical { .. } => VariableKind::Categorical,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Ordinal(v) => v[row].is_none(),
            ColumnData::Categorical { codes, .. } => codes[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        match self {
            ColumnData::Ordinal(v) => v.iter().filter(|c| c.is_none()).count(),
            ColumnData::Categorical { codes, .. } => codes.iter().filter(|c| c.is_none()).count(),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Ordinal(v) => ColumnData::Ordinal(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical { codes, levels } => ColumnData::Categorical {
                codes: rows.iter().map(|&r| codes[r]).collect(),
                levels: levels.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    name: String,
    data: ColumnData,
}

impl Column {
    pub fn new(name: impl Into<String>, data: ColumnData) -> Self {
        Column { name: name.into(), data }
    }

    pub fn ordinal(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Column::new(name, ColumnData::Ordinal(values))
    }

    /// Builds a categorical column from labels; the level dictionary is the
    /// sorted set of distinct labels.
    pub fn categorical<S: AsRef<str>>(name: impl Into<String>, labels: &[Option<S>]) -> Self {
        let set: BTreeSet<&str> = labels.iter().flatten().map(|s| s.as_ref()).collect();
        let levels: Vec<String> = set.into_iter().map(str::to_owned).collect();
        let lookup: HashMap<&str, u32> = levels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i as u32))
            .collect();
        let codes = labels
            .iter()
            .map(|l| l.as_ref().map(|s| lookup[s.as_ref()]))
            .collect();
        Column::new(name, ColumnData::Categorical { codes, levels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn data(&self) -> &ColumnData {
        &self.data
    }

    pub fn kind(&self) -> VariableKind {
        self.data.kind()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.data.missing_count()
    }

    pub fn ordinal_values(&self) -> Option<&[Option<f64>]> {
        match &self.data {
            ColumnData::Ordinal(v) => Some(v),
            _ => None,
        }
    }

    pub fn categorical_codes(&self) -> Option<(&[Option<u32>], &[String])> {
        match &self.data {
            ColumnData::Categorical { codes, levels } => Some((codes, levels)),
            _ => None,
        }
    }

    pub fn levels(&self) -> &[String] {
        match &self.data {
            ColumnData::Categorical { levels, .. } => levels,
            _ => &[],
        }
    }

    /// Text form of a cell, `None` when missing.
    pub fn cell_text(&self, row: usize) -> Option<String> {
        match &self.data {
            ColumnData::Ordinal(v) => v[row].map(|x| format!("{x}")),
            ColumnData::Categorical { codes, levels } => codes[row].map(|c| levels[c as usize].clone()),
        }
    }
}

/// Immutable column-oriented table. Columns are reference counted so that
/// derived datasets (row subsets excepted) share unchanged columns.
#[derive(Debug, Clone)]
pub struct Dataset {
    n_rows: usize,
    columns: Vec<Arc<Column>>,
    index: HashMap<String, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.columns.len() == other.columns.len()
            && self.columns.iter().zip(&other.columns).all(|(a, b)| a == b)
    }
}

impl Dataset {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        Self::from_shared(columns.into_iter().map(Arc::new).collect())
    }

    fn from_shared(columns: Vec<Arc<Column>>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |c| c.len());
        let mut index = HashMap::with_capacity(columns.len());
        for (i, col) in columns.iter().enumerate() {
            if col.len() != n_rows {
                return Err(Error::Schema(format!(
                    "column `{}` has {} cells, expected {}",
                    col.name,
                    col.len(),
                    n_rows
                )));
            }
            if let ColumnData::Categorical { codes, levels } = &col.data {
                if let Some(bad) = codes.iter().flatten().find(|&&c| c as usize >= levels.len()) {
                    return Err(Error::Schema(format!(
                        "column `{}` has code {} outside its {}-level dictionary",
                        col.name,
                        bad,
                        levels.len()
                    )));
                }
            }
            if index.insert(col.name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate column `{}`", col.name)));
            }
        }
        Ok(Dataset { n_rows, columns, index })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, idx: usize) -> &Column {
        &self.columns[idx]
    }

    pub fn columns(&self) -> impl Iterator<Item = &Column> {
        self.columns.iter().map(|c| c.as_ref())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownColumn(name.to_owned()))
    }

    pub fn column_by_name(&self, name: &str) -> Result<&Column> {
        Ok(self.column(self.column_index(name)?))
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Total number of missing cells.
    pub fn missing_cells(&self) -> usize {
        self.columns.iter().map(|c| c.missing_count()).sum()
    }

    /// Rows in the given order (repeats allowed); level dictionaries are kept.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|c| Arc::new(Column::new(c.name.clone(), c.data.select(rows))))
            .collect();
        Dataset {
            n_rows: rows.len(),
            columns,
            index: self.index.clone(),
        }
    }

    /// Keeps the named columns, in the given order.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Dataset> {
        let cols = names
            .iter()
            .map(|n| self.column_index(n.as_ref()).map(|i| self.columns[i].clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_shared(cols)
    }

    /// Copy with one column's cells replaced; all other columns are shared.
    pub fn with_column_data(&self, idx: usize, data: ColumnData) -> Result<Dataset> {
        if data.len() != self.n_rows {
            return Err(Error::InvalidArgument(format!(
                "replacement column has {} cells, expected {}",
                data.len(),
                self.n_rows
            )));
        }
        if data.kind() != self.columns[idx].kind() {
            return Err(Error::InvalidArgument(format!(
                "replacement for `{}` changes its kind",
                self.columns[idx].name
            )));
        }
        let mut columns = self.columns.clone();
        columns[idx] = Arc::new(Column::new(self.columns[idx].name.clone(), data));
        Ok(Dataset {
            n_rows: self.n_rows,
            columns,
            index: self.index.clone(),
        })
    }

    /// Appends a column.
    pub fn with_column(&self, column: Column) -> Result<Dataset> {
        let mut columns = self.columns.clone();
        columns.push(Arc::new(column));
        Self::from_shared(columns)
    }

    pub fn schema(&self) -> Schema {
        Schema {
            columns: self
                .columns
                .iter()
                .map(|c| (c.name.clone(), c.kind()))
                .collect(),
            missing_tokens: Schema::default_missing_tokens(),
        }
    }

    /// Columns with near-unique levels (identifier-like), reported in summaries.
    pub fn identifier_like_columns(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| {
                let observed = c.len() - c.missing_count();
                c.kind() == VariableKind::Categorical && observed > 0 && c.levels().len() * 2 > observed
            })
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Declared column kinds plus the tokens that denote a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub columns: Vec<(String, VariableKind)>,
    pub missing_tokens: Vec<String>,
}

impl Schema {
    pub fn new(columns: Vec<(String, VariableKind)>) -> Self {
        Schema {
            columns,
            missing_tokens: Self::default_missing_tokens(),
        }
    }

    pub fn default_missing_tokens() -> Vec<String> {
        vec![String::new(), "NA".to_owned()]
    }

    pub fn with_missing_tokens(mut self, tokens: Vec<String>) -> Self {
        self.missing_tokens = tokens;
        self
    }

    pub fn kind_of(&self, name: &str) -> Option<VariableKind> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, k)| *k)
    }

    /// Parses `column = ordinal|categorical` lines. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut columns = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, kind) = line.split_once('=').ok_or_else(|| {
                Error::Schema(format!("line {}: expected `column = kind`", lineno + 1))
            })?;
            let name = name.trim();
            if name.is_empty() {
                return Err(Error::Schema(format!("line {}: empty column name", lineno + 1)));
            }
            if columns.iter().any(|(n, _)| n == name) {
                return Err(Error::Schema(format!("line {}: duplicate column `{name}`", lineno + 1)));
            }
            columns.push((name.to_owned(), kind.parse()?));
        }
        Ok(Schema::new(columns))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.columns
            .iter()
            .map(|(n, k)| format!("{n} = {k}\n"))
            .collect()
    }
}

/// Reads a CSV file with a header row. Rows in errors are numbered from 1
/// for the first data row.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    read_csv(fs::File::open(path)?, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    let mut kinds = Vec::with_capacity(header.len());
    for name in &header {
        let kind = schema
            .kind_of(name)
            .ok_or_else(|| Error::Schema(format!("header column `{name}` is not declared in the schema")))?;
        kinds.push(kind);
    }
    if let Some((missing, _)) = schema.columns.iter().find(|(n, _)| !header.contains(n)) {
        return Err(Error::Schema(format!("schema column `{missing}` not found in header")));
    }

    let mut ordinal: Vec<Vec<Option<f64>>> = vec![Vec::new(); header.len()];
    let mut labels: Vec<Vec<Option<String>>> = vec![Vec::new(); header.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != header.len() {
            return Err(Error::RowLength {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let missing = schema.missing_tokens.iter().any(|t| t == field);
            match kinds[j] {
                VariableKind::Ordinal => {
                    let cell = if missing {
                        None
                    } else {
                        let v: f64 = field.trim().parse().map_err(|_| Error::ParseCell {
                            row,
                            column: header[j].clone(),
                            value: field.to_owned(),
                        })?;
                        if !v.is_finite() {
                            return Err(Error::ParseCell {
                                row,
                                column: header[j].clone(),
                                value: field.to_owned(),
                            });
                        }
                        Some(v)
                    };
                    ordinal[j].push(cell);
                }
                VariableKind::Categorical => {
                    labels[j].push(if missing { None } else { Some(field.to_owned()) });
                }
            }
        }
    }

    let columns = header
        .iter()
        .enumerate()
        .map(|(j, name)| match kinds[j] {
            VariableKind::Ordinal => Column::ordinal(name.clone(), std::mem::take(&mut ordinal[j])),
            VariableKind::Categorical => Column::categorical(name.clone(), &labels[j]),
        })
        .collect();
    Dataset::new(columns)
}

/// Writes a header plus one record per row; missing cells are written as
/// `missing_token`.
pub fn write_csv<W: Write>(data: &Dataset, writer: W, missing_token: &str) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(data.names())?;
    let mut record = Vec::with_capacity(data.n_cols());
    for row in 0..data.n_rows() {
        record.clear();
        for col in data.columns() {
            record.push(col.cell_text(row).unwrap_or_else(|| missing_token.to_owned()));
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv(data, fs::File::create(path)?, "")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flag {
    Observed,
    Missing,
}

/// Observed/missing indicator derived from a target column.
#[derive(Debug, Clone, PartialEq)]
pub struct FlagColumn {
    pub target: String,
    pub flags: Vec<Flag>,
}

impl FlagColumn {
    pub fn missing_count(&self) -> usize {
        self.flags.iter().filter(|f| **f == Flag::Missing).count()
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Class codes: 0 = observed, 1 = missing.
    pub fn codes(&self) -> Vec<Option<u32>> {
        self.flags
            .iter()
            .map(|f| Some(if *f == Flag::Missing { 1 } else { 0 }))
            .collect()
    }

    pub fn labels() -> Vec<String> {
        vec!["observed".to_owned(), "missing".to_owned()]
    }

    /// The flag as a two-level categorical column named `<target>_`.
    pub fn to_column(&self) -> Column {
        Column::new(
            format!("{}_", self.target),
            ColumnData::Categorical {
                codes: self.codes(),
                levels: Self::labels(),
            },
        )
    }
}

pub fn derive_flag(data: &Dataset, target: &str) -> Result<FlagColumn> {
    let col = data.column_by_name(target)?;
    let flags = (0..data.n_rows())
        .map(|r| {
            if col.data().is_missing(r) {
                Flag::Missing
            } else {
                Flag::Observed
            }
        })
        .collect();
    Ok(FlagColumn {
        target: target.to_owned(),
        flags,
    })
}

/// Sample size for a sampling fraction: round-to-nearest of `fraction * n`.
pub fn sample_size(n_rows: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling fraction {fraction} outside (0, 1]"
        )));
    }
    let k = (fraction * n_rows as f64).round() as usize;
    if k == 0 {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {n_rows} rows rounds to an empty sample"
        )));
    }
    Ok(k.min(n_rows))
}

/// Row indices of a simple random sample without replacement.
pub fn srswor_indices<R: Rng + ?Sized>(n_rows: usize, fraction: f64, rng: &mut R) -> Result<Vec<usize>> {
    let k = sample_size(n_rows, fraction)?;
    Ok(index::sample(rng, n_rows, k).into_vec())
}

pub fn srswor_sample<R: Rng + ?Sized>(data: &Dataset, fraction: f64, rng: &mut R) -> Result<Dataset> {
    let rows = srswor_indices(data.n_rows(), fraction, rng)?;
    Ok(data.select_rows(&rows))
}
