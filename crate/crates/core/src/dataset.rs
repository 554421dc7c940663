//! Ingestion and preparation of tabular data.
//!
//! A [`Schema`] file declares the kind of every CSV column. Loading yields a
//! [`DataTable`] of raw cells; [`clean`] removes incomplete rows,
//! [`one_hot_encode`] replaces categorical columns by one Boolean column per
//! category and [`scale_to_integers`] produces the integer-valued
//! [`EncodedDataset`] the search works on.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Boolean,
    Categorical,
    Numeric,
}

/// Declaration of one column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub name: String,
    pub kind: AttributeKind,
    /// Decimal places kept when scaling a numeric column to integers.
    #[serde(default)]
    pub decimals: u32,
    /// Set on the Boolean columns produced by one-hot encoding.
    #[serde(skip)]
    pub one_hot: Option<OneHotOrigin>,
}

impl AttributeSchema {
    pub fn new(name: impl Into<String>, kind: AttributeKind, decimals: u32) -> Self {
        AttributeSchema {
            name: name.into(),
            kind,
            decimals,
            one_hot: None,
        }
    }

    pub fn boolean(name: impl Into<String>) -> Self {
        Self::new(name, AttributeKind::Boolean, 0)
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self::new(name, AttributeKind::Categorical, 0)
    }

    pub fn numeric(name: impl Into<String>, decimals: u32) -> Self {
        Self::new(name, AttributeKind::Numeric, decimals)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotOrigin {
    pub column: String,
    pub category: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// Excludes every row whose `column` satisfies `op value`.
///
/// Used for domain-knowledge cleaning such as dropping rows where a blood
/// pressure reading is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: String,
    pub op: FilterOp,
    pub value: serde_json::Value,
}

impl RowFilter {
    fn matches(&self, cell: &Cell) -> bool {
        use FilterOp::*;
        match (cell, &self.value) {
            (Cell::Missing, _) => false,
            (Cell::Number(x), serde_json::Value::Number(n)) => {
                let Some(v) = n.as_f64() else { return false };
                match self.op {
                    Eq => *x == v,
                    Ne => *x != v,
                    Lt => *x < v,
                    Le => *x <= v,
                    Gt => *x > v,
                    Ge => *x >= v,
                }
            }
            (cell, value) => {
                let text = match value {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                let eq = match cell {
                    Cell::Category(c) => *c == text,
                    Cell::Bool(b) => parse_bool(&text) == Some(*b),
                    Cell::Number(x) => text.parse::<f64>().ok() == Some(*x),
                    Cell::Missing => false,
                };
                match self.op {
                    Eq => eq,
                    Ne => !eq,
                    _ => false,
                }
            }
        }
    }
}

fn default_positive() -> Vec<String> {
    vec!["1".into(), "true".into(), "yes".into()]
}

fn default_missing() -> Vec<String> {
    vec!["".into(), "?".into(), "NA".into(), "n/a".into()]
}

/// Contents of a schema file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub columns: Vec<AttributeSchema>,
    pub target: String,
    /// Literals (case-insensitive) marking the positive class of the target.
    #[serde(default = "default_positive")]
    pub positive: Vec<String>,
    /// Cell texts (case-insensitive, trimmed) read as missing.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    /// Columns removed before missing-value filtering.
    #[serde(default)]
    pub drop: Vec<String>,
    #[serde(default)]
    pub exclude: Vec<RowFilter>,
}

impl Schema {
    pub fn new(columns: Vec<AttributeSchema>, target: impl Into<String>) -> Self {
        Schema {
            columns,
            target: target.into(),
            positive: default_positive(),
            missing: default_missing(),
            drop: Vec::new(),
            exclude: Vec::new(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
            if c.kind != AttributeKind::Numeric && c.decimals != 0 {
                return Err(Error::Schema(format!(
                    "column `{}` is not numeric but declares decimals",
                    c.name
                )));
            }
            if c.decimals > 18 {
                return Err(Error::Schema(format!(
                    "column `{}` declares more than 18 decimals",
                    c.name
                )));
            }
        }
        let target = self
            .columns
            .iter()
            .find(|c| c.name == self.target)
            .ok_or_else(|| {
                Error::Target(format!("target column `{}` is not declared", self.target))
            })?;
        if target.kind != AttributeKind::Boolean {
            return Err(Error::Target(format!(
                "target column `{}` must be declared boolean",
                self.target
            )));
        }
        if self.positive.is_empty() {
            return Err(Error::Target("no positive target literal given".into()));
        }
        for name in self
            .drop
            .iter()
            .chain(self.exclude.iter().map(|f| &f.column))
        {
            if !seen.contains(name.as_str()) {
                return Err(Error::Schema(format!("unknown column `{name}`")));
            }
        }
        if self.drop.contains(&self.target) {
            return Err(Error::Target("the target column cannot be dropped".into()));
        }
        Ok(())
    }

    fn is_missing(&self, text: &str) -> bool {
        self.missing.iter().any(|m| m.eq_ignore_ascii_case(text))
    }

    fn is_positive(&self, text: &str) -> bool {
        self.positive.iter().any(|m| m.eq_ignore_ascii_case(text))
    }
}

/// One raw cell of a [`DataTable`].
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Bool(bool),
    Category(String),
    Number(f64),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
}

/// Identifier of a data point: its row position in the source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PointId(pub u32);

impl fmt::Display for PointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Raw table with one cell per schema entry per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub schema: Vec<AttributeSchema>,
    pub rows: Vec<Vec<Cell>>,
    pub ids: Vec<PointId>,
    pub target_name: String,
}

impl DataTable {
    pub fn new(
        schema: Vec<AttributeSchema>,
        rows: Vec<Vec<Cell>>,
        target_name: impl Into<String>,
    ) -> Result<Self> {
        let target_name = target_name.into();
        let ids = (0..rows.len() as u32).map(PointId).collect();
        let table = DataTable {
            schema,
            rows,
            ids,
            target_name,
        };
        table.check()?;
        Ok(table)
    }

    fn check(&self) -> Result<()> {
        let width = self.schema.len();
        if let Some(i) = self.rows.iter().position(|r| r.len() != width) {
            return Err(Error::Schema(format!(
                "row {i} has {} cells but the schema has {width} columns",
                self.rows[i].len()
            )));
        }
        match self.column_index(&self.target_name) {
            Some(i) if self.schema[i].kind == AttributeKind::Boolean => Ok(()),
            Some(_) => Err(Error::Target(format!(
                "target column `{}` must be boolean",
                self.target_name
            ))),
            None => Err(Error::Target(format!(
                "target column `{}` is absent",
                self.target_name
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn column(&self, index: usize) -> impl Iterator<Item = &Cell> + '_ {
        self.rows.iter().map(move |r| &r[index])
    }

    fn retain_rows(&self, mut keep: impl FnMut(&[Cell]) -> bool) -> DataTable {
        let (rows, ids) = self
            .rows
            .iter()
            .zip(&self.ids)
            .filter(|(r, _)| keep(r))
            .map(|(r, id)| (r.clone(), *id))
            .unzip();
        DataTable {
            schema: self.schema.clone(),
            rows,
            ids,
            target_name: self.target_name.clone(),
        }
    }

    /// Removes the rows matched by any of `filters`.
    pub fn exclude_rows(&self, filters: &[RowFilter]) -> Result<DataTable> {
        let cols = filters
            .iter()
            .map(|f| {
                self.column_index(&f.column)
                    .ok_or_else(|| Error::Schema(format!("unknown column `{}`", f.column)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.retain_rows(|row| !filters.iter().zip(&cols).any(|(f, &c)| f.matches(&row[c]))))
    }
}

fn parse_bool(text: &str) -> Option<bool> {
    const TRUE: [&str; 5] = ["1", "true", "yes", "t", "y"];
    const FALSE: [&str; 5] = ["0", "false", "no", "f", "n"];
    if TRUE.iter().any(|t| t.eq_ignore_ascii_case(text)) {
        Some(true)
    } else if FALSE.iter().any(|t| t.eq_ignore_ascii_case(text)) {
        Some(false)
    } else {
        None
    }
}

/// Reads a CSV file with a header row laid out as `schema.columns`.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<DataTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(file, schema)
}

/// Parses CSV text. Cells that do not parse as their declared kind become
/// [`Cell::Missing`].
pub fn parse_csv<R: Read>(reader: R, schema: &Schema) -> Result<DataTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != schema.columns.len() {
        return Err(Error::Schema(format!(
            "header has {} columns but the schema declares {}",
            header.len(),
            schema.columns.len()
        )));
    }
    for (h, c) in header.iter().zip(&schema.columns) {
        if h != c.name {
            return Err(Error::Schema(format!(
                "header column `{h}` does not match schema column `{}`",
                c.name
            )));
        }
    }
    let target_col = schema
        .columns
        .iter()
        .position(|c| c.name == schema.target)
        .expect("validated");

    let mut rows = Vec::new();
    let mut target_literals: BTreeSet<String> = BTreeSet::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != schema.columns.len() {
            return Err(Error::Schema(format!(
                "data row {} has {} cells but the schema declares {}",
                line + 1,
                record.len(),
                schema.columns.len()
            )));
        }
        let mut row = Vec::with_capacity(record.len());
        for (i, (text, col)) in record.iter().zip(&schema.columns).enumerate() {
            let cell = if schema.is_missing(text) {
                Cell::Missing
            } else if i == target_col {
                target_literals.insert(text.to_ascii_lowercase());
                Cell::Bool(schema.is_positive(text))
            } else {
                match col.kind {
                    AttributeKind::Boolean => parse_bool(text).map_or(Cell::Missing, Cell::Bool),
                    AttributeKind::Categorical => Cell::Category(text.to_string()),
                    AttributeKind::Numeric => match text.parse::<f64>() {
                        Ok(x) if x.is_finite() => Cell::Number(x),
                        _ => Cell::Missing,
                    },
                }
            };
            row.push(cell);
        }
        rows.push(row);
    }
    if target_literals.len() > 2 {
        return Err(Error::Target(format!(
            "target column `{}` has {} distinct values, expected at most 2",
            schema.target,
            target_literals.len()
        )));
    }
    DataTable::new(schema.columns.clone(), rows, schema.target.clone())
}

/// Drops the named columns, then every row that still has a missing cell.
pub fn clean(table: &DataTable, drop: &[String]) -> Result<DataTable> {
    for name in drop {
        if table.column_index(name).is_none() {
            return Err(Error::Schema(format!(
                "cannot drop unknown column `{name}`"
            )));
        }
        if *name == table.target_name {
            return Err(Error::Target("the target column cannot be dropped".into()));
        }
    }
    let keep: Vec<usize> = (0..table.schema.len())
        .filter(|&i| !drop.contains(&table.schema[i].name))
        .collect();
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for (row, id) in table.rows.iter().zip(&table.ids) {
        if keep.iter().all(|&i| !row[i].is_missing()) {
            rows.push(keep.iter().map(|&i| row[i].clone()).collect());
            ids.push(*id);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(DataTable {
        schema: keep.iter().map(|&i| table.schema[i].clone()).collect(),
        rows,
        ids,
        target_name: table.target_name.clone(),
    })
}

/// Name used for the Boolean column of `category` in `column`.
///
/// Characters that the formula text syntax reserves are replaced by `_`.
pub fn one_hot_name(column: &str, category: &str) -> String {
    sanitize_name(&format!("{column}={category}"))
}

pub(crate) fn sanitize_name(name: &str) -> String {
    name.chars()
        .map(|c| if is_reserved_char(c) { '_' } else { c })
        .collect()
}

pub(crate) fn is_reserved_char(c: char) -> bool {
    c.is_whitespace()
        || matches!(
            c,
            '(' | ')' | '[' | ']' | ',' | '¬' | '∧' | '∨' | '≥' | '∈' | '!' | '~' | '&' | '|' | '>'
        )
}

/// Replaces each categorical column by one Boolean column per category.
///
/// Categories are ordered lexicographically. A categorical column with a
/// single category carries no information and is dropped with a warning.
pub fn one_hot_encode(table: &DataTable) -> DataTable {
    let mut schema = Vec::new();
    // (source column, category to test or None for pass-through)
    let mut plan: Vec<(usize, Option<String>)> = Vec::new();
    for (i, col) in table.schema.iter().enumerate() {
        if col.kind != AttributeKind::Categorical || col.name == table.target_name {
            schema.push(col.clone());
            plan.push((i, None));
            continue;
        }
        let categories: BTreeSet<&str> = table
            .column(i)
            .filter_map(|c| match c {
                Cell::Category(s) => Some(s.as_str()),
                _ => None,
            })
            .collect();
        if categories.len() < 2 {
            log::warn!(
                "categorical attribute `{}` has a single category and is dropped",
                col.name
            );
            continue;
        }
        for cat in categories {
            let mut attr = AttributeSchema::boolean(one_hot_name(&col.name, cat));
            attr.one_hot = Some(OneHotOrigin {
                column: col.name.clone(),
                category: cat.to_string(),
            });
            schema.push(attr);
            plan.push((i, Some(cat.to_string())));
        }
    }
    let rows = table
        .rows
        .iter()
        .map(|row| {
            plan.iter()
                .map(|(i, cat)| match cat {
                    None => row[*i].clone(),
                    Some(cat) => match &row[*i] {
                        Cell::Category(s) => Cell::Bool(s == cat),
                        _ => Cell::Missing,
                    },
                })
                .collect()
        })
        .collect();
    DataTable {
        schema,
        rows,
        ids: table.ids.clone(),
        target_name: table.target_name.clone(),
    }
}

/// Where an encoded attribute came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Boolean { column: String },
    OneHot { column: String, category: String },
    Numeric { column: String, decimals: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttributeValues {
    Boolean(Vec<bool>),
    Numeric(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedAttribute {
    pub name: String,
    pub provenance: Provenance,
    pub values: AttributeValues,
}

impl EncodedAttribute {
    pub fn is_numeric(&self) -> bool {
        matches!(self.values, AttributeValues::Numeric(_))
    }

    /// Decimal places of a numeric attribute, `None` for Boolean ones.
    pub fn decimals(&self) -> Option<u32> {
        match self.provenance {
            Provenance::Numeric { decimals, .. } => Some(decimals),
            _ => None,
        }
    }
}

/// Immutable, fully encoded dataset: Boolean attributes, integer-valued
/// numeric attributes and a binary target, stored column-wise in point order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDataset {
    ids: Vec<PointId>,
    attributes: Vec<EncodedAttribute>,
    target: Vec<bool>,
}

/// Attribute names and scales, enough to render and parse formulas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub names: Vec<String>,
    /// `Some(decimals)` for numeric attributes.
    pub scales: Vec<Option<u32>>,
}

impl Vocabulary {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl EncodedDataset {
    pub fn new(
        ids: Vec<PointId>,
        attributes: Vec<EncodedAttribute>,
        target: Vec<bool>,
    ) -> Result<Self> {
        let n = ids.len();
        if target.len() != n {
            return Err(Error::Schema(
                "target length differs from point count".into(),
            ));
        }
        let mut names = HashSet::new();
        for a in &attributes {
            let len = match &a.values {
                AttributeValues::Boolean(v) => v.len(),
                AttributeValues::Numeric(v) => v.len(),
            };
            if len != n {
                return Err(Error::Schema(format!(
                    "attribute `{}` has {len} values for {n} points",
                    a.name
                )));
            }
            if !names.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute `{}`", a.name)));
            }
        }
        Ok(EncodedDataset {
            ids,
            attributes,
            target,
        })
    }

    /// Convenience constructor for synthetic data: Boolean columns first,
    /// then numeric columns with zero decimals.
    pub fn from_columns(
        booleans: Vec<(&str, Vec<bool>)>,
        numerics: Vec<(&str, Vec<i64>)>,
        target: Vec<bool>,
    ) -> Result<Self> {
        let ids = (0..target.len() as u32).map(PointId).collect();
        let mut attributes = Vec::new();
        for (name, v) in booleans {
            attributes.push(EncodedAttribute {
                name: name.to_string(),
                provenance: Provenance::Boolean {
                    column: name.to_string(),
                },
                values: AttributeValues::Boolean(v),
            });
        }
        for (name, v) in numerics {
            attributes.push(EncodedAttribute {
                name: name.to_string(),
                provenance: Provenance::Numeric {
                    column: name.to_string(),
                    decimals: 0,
                },
                values: AttributeValues::Numeric(v),
            });
        }
        Self::new(ids, attributes, target)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[PointId] {
        &self.ids
    }

    pub fn attributes(&self) -> &[EncodedAttribute] {
        &self.attributes
    }

    pub fn attribute(&self, index: usize) -> &EncodedAttribute {
        &self.attributes[index]
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn target(&self) -> &[bool] {
        &self.target
    }

    pub fn positives(&self) -> usize {
        self.target.iter().filter(|&&t| t).count()
    }

    pub fn provenance(&self) -> impl Iterator<Item = &Provenance> + '_ {
        self.attributes.iter().map(|a| &a.provenance)
    }

    /// Value of numeric attribute `attr` at the point in position `pos`.
    ///
    /// Panics if the attribute is Boolean.
    #[inline]
    pub fn numeric(&self, attr: usize, pos: usize) -> i64 {
        match &self.attributes[attr].values {
            AttributeValues::Numeric(v) => v[pos],
            AttributeValues::Boolean(_) => panic!("attribute {attr} is not numeric"),
        }
    }

    /// Value of Boolean attribute `attr` at the point in position `pos`.
    ///
    /// Panics if the attribute is numeric.
    #[inline]
    pub fn boolean(&self, attr: usize, pos: usize) -> bool {
        match &self.attributes[attr].values {
            AttributeValues::Boolean(v) => v[pos],
            AttributeValues::Numeric(_) => panic!("attribute {attr} is not Boolean"),
        }
    }

    pub fn numeric_column(&self, attr: usize) -> Option<&[i64]> {
        match &self.attributes[attr].values {
            AttributeValues::Numeric(v) => Some(v),
            AttributeValues::Boolean(_) => None,
        }
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            names: self.attributes.iter().map(|a| a.name.clone()).collect(),
            scales: self.attributes.iter().map(|a| a.decimals()).collect(),
        }
    }

    /// Sub-dataset of the points at `positions`, in the given order.
    pub fn select_positions(&self, positions: &[usize]) -> EncodedDataset {
        let attributes = self
            .attributes
            .iter()
            .map(|a| EncodedAttribute {
                name: a.name.clone(),
                provenance: a.provenance.clone(),
                values: match &a.values {
                    AttributeValues::Boolean(v) => {
                        AttributeValues::Boolean(positions.iter().map(|&p| v[p]).collect())
                    }
                    AttributeValues::Numeric(v) => {
                        AttributeValues::Numeric(positions.iter().map(|&p| v[p]).collect())
                    }
                },
            })
            .collect();
        EncodedDataset {
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
            attributes,
            target: positions.iter().map(|&p| self.target[p]).collect(),
        }
    }

    /// Sub-dataset of the points whose identifiers are in `ids`, kept in
    /// this dataset's order.
    pub fn select_ids(&self, ids: &[PointId]) -> EncodedDataset {
        let wanted: HashSet<PointId> = ids.iter().copied().collect();
        let positions: Vec<usize> = (0..self.len())
            .filter(|&p| wanted.contains(&self.ids[p]))
            .collect();
        self.select_positions(&positions)
    }

    /// Sub-dataset of the points whose identifiers are not in `ids`.
    pub fn exclude_ids(&self, ids: &[PointId]) -> EncodedDataset {
        let unwanted: HashSet<PointId> = ids.iter().copied().collect();
        let positions: Vec<usize> = (0..self.len())
            .filter(|&p| !unwanted.contains(&self.ids[p]))
            .collect();
        self.select_positions(&positions)
    }

    /// Points of `self` followed by the points of `other` that `self` lacks.
    pub fn union(&self, other: &EncodedDataset) -> EncodedDataset {
        let mut ids = self.ids.clone();
        let mut seen: HashSet<PointId> = ids.iter().copied().collect();
        let mut from_other = Vec::new();
        for (p, id) in other.ids.iter().enumerate() {
            if seen.insert(*id) {
                ids.push(*id);
                from_other.push(p);
            }
        }
        let extra = other.select_positions(&from_other);
        let attributes = self
            .attributes
            .iter()
            .zip(&extra.attributes)
            .map(|(a, b)| EncodedAttribute {
                name: a.name.clone(),
                provenance: a.provenance.clone(),
                values: match (&a.values, &b.values) {
                    (AttributeValues::Boolean(x), AttributeValues::Boolean(y)) => {
                        AttributeValues::Boolean(x.iter().chain(y).copied().collect())
                    }
                    (AttributeValues::Numeric(x), AttributeValues::Numeric(y)) => {
                        AttributeValues::Numeric(x.iter().chain(y).copied().collect())
                    }
                    _ => panic!("union of datasets with different attribute kinds"),
                },
            })
            .collect();
        let target = self.target.iter().chain(&extra.target).copied().collect();
        EncodedDataset {
            ids,
            attributes,
            target,
        }
    }
}

/// Scales `x` by `10^decimals` and rounds half away from zero.
///
/// Rounding is done on the shortest decimal representation of `x`, so a
/// value written as `1.005` scales to `101` at two decimals even though the
/// nearest double is slightly below it.
pub fn scale_value(x: f64, decimals: u32) -> Option<i64> {
    if !x.is_finite() {
        return None;
    }
    let text = format!("{x}");
    let (negative, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.as_str()),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    let mut magnitude: i128 = 0;
    for c in int_part.chars() {
        magnitude = magnitude
            .checked_mul(10)?
            .checked_add(c.to_digit(10)? as i128)?;
    }
    let mut frac = frac_part.chars();
    for _ in 0..decimals {
        let d = frac.next().map_or(Some(0), |c| c.to_digit(10))?;
        magnitude = magnitude.checked_mul(10)?.checked_add(d as i128)?;
    }
    if let Some(next) = frac.next() {
        if next.to_digit(10)? >= 5 {
            magnitude += 1;
        }
    }
    let signed = if negative { -magnitude } else { magnitude };
    i64::try_from(signed).ok()
}

/// Renders a scaled integer back to its decimal text, e.g. `(29, 1)` as
/// `2.9`.
pub fn unscale(value: i64, decimals: u32) -> String {
    if decimals == 0 {
        return value.to_string();
    }
    let neg = value < 0;
    let digits = value.unsigned_abs().to_string();
    let d = decimals as usize;
    let padded = if digits.len() <= d {
        format!("{}{}", "0".repeat(d + 1 - digits.len()), digits)
    } else {
        digits
    };
    let (i, f) = padded.split_at(padded.len() - d);
    format!("{}{}.{}", if neg { "-" } else { "" }, i, f)
}

/// Converts a clean, one-hot encoded table into an [`EncodedDataset`].
pub fn scale_to_integers(table: &DataTable) -> Result<EncodedDataset> {
    let target_col = table
        .column_index(&table.target_name)
        .ok_or_else(|| Error::Target(format!("target column `{}` is absent", table.target_name)))?;
    let target = table
        .column(target_col)
        .map(|c| match c {
            Cell::Bool(b) => Ok(*b),
            _ => Err(Error::Target(
                "target column holds a non-Boolean cell".into(),
            )),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut attributes = Vec::new();
    let mut used_names: HashMap<String, usize> = HashMap::new();
    for (i, col) in table.schema.iter().enumerate() {
        if i == target_col {
            continue;
        }
        let (provenance, values) = match col.kind {
            AttributeKind::Categorical => {
                return Err(Error::Schema(format!(
                    "categorical column `{}` must be one-hot encoded before scaling",
                    col.name
                )))
            }
            AttributeKind::Boolean => {
                let v = table
                    .column(i)
                    .map(|c| match c {
                        Cell::Bool(b) => Ok(*b),
                        _ => Err(Error::Schema(format!(
                            "column `{}` holds a non-Boolean or missing cell",
                            col.name
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let provenance = match &col.one_hot {
                    Some(o) => Provenance::OneHot {
                        column: o.column.clone(),
                        category: o.category.clone(),
                    },
                    None => Provenance::Boolean {
                        column: col.name.clone(),
                    },
                };
                (provenance, AttributeValues::Boolean(v))
            }
            AttributeKind::Numeric => {
                let v = table
                    .column(i)
                    .map(|c| match c {
                        Cell::Number(x) => scale_value(*x, col.decimals).ok_or(Error::Scaling {
                            attribute: col.name.clone(),
                            value: *x,
                        }),
                        _ => Err(Error::Schema(format!(
                            "column `{}` holds a non-numeric or missing cell",
                            col.name
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                (
                    Provenance::Numeric {
                        column: col.name.clone(),
                        decimals: col.decimals,
                    },
                    AttributeValues::Numeric(v),
                )
            }
        };
        let base = sanitize_name(&col.name);
        let count = used_names.entry(base.clone()).or_insert(0);
        *count += 1;
        let name = if *count == 1 {
            base
        } else {
            format!("{base}_{count}")
        };
        attributes.push(EncodedAttribute {
            name,
            provenance,
            values,
        });
    }
    EncodedDataset::new(table.ids.clone(), attributes, target)
}

/// Full preparation of a loaded table: row exclusions, column drops,
/// missing-value removal, one-hot encoding and integer scaling.
pub fn prepare(table: &DataTable, schema: &Schema) -> Result<EncodedDataset> {
    let filtered = table.exclude_rows(&schema.exclude)?;
    let cleaned = clean(&filtered, &schema.drop)?;
    scale_to_integers(&one_hot_encode(&cleaned))
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!(
            "ratio {ratio} is not strictly between 0 and 1"
        )));
    }
    Ok(())
}

fn shuffled_positions(n: usize, seed: u64) -> Vec<usize> {
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    positions
}

/// Random train/validation split with `round(ratio · n)` training points.
///
/// Both parts keep the original point order.
pub fn split_train_validation(
    ds: &EncodedDataset,
    ratio: f64,
    seed: u64,
) -> Result<(EncodedDataset, EncodedDataset)> {
    check_ratio(ratio)?;
    let n = ds.len();
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Split(format!(
            "ratio {ratio} on {n} points leaves an empty part"
        )));
    }
    let positions = shuffled_positions(n, seed);
    let mut train = positions[..n_train].to_vec();
    let mut valid = positions[n_train..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    Ok((ds.select_positions(&train), ds.select_positions(&valid)))
}

/// Partition of a dataset's points into `k` folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<PointId>>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn holdout(&self, ds: &EncodedDataset, fold: usize) -> EncodedDataset {
        ds.select_ids(&self.folds[fold])
    }

    pub fn training(&self, ds: &EncodedDataset, fold: usize) -> EncodedDataset {
        ds.exclude_ids(&self.folds[fold])
    }
}

/// Shuffles the points and deals them into `k` folds; the first `n mod k`
/// folds receive one extra point.
pub fn make_folds(ds: &EncodedDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Fold(format!("k = {k} must be at least 2")));
    }
    let n = ds.len();
    if k > n {
        return Err(Error::Fold(format!(
            "k = {k} exceeds the {n} available points"
        )));
    }
    let positions = shuffled_positions(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold: Vec<PointId> = positions[start..start + size]
            .iter()
            .map(|&p| ds.ids()[p])
            .collect();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldPlan { folds, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema3() -> Schema {
        Schema::new(
            vec![
                AttributeSchema::numeric("age", 0),
                AttributeSchema::categorical("sex"),
                AttributeSchema::boolean("y"),
            ],
            "y",
        )
    }

    fn parse(text: &str, schema: &Schema) -> Result<DataTable> {
        parse_csv(text.as_bytes(), schema)
    }

    #[test]
    fn loads_three_columns() {
        let t = parse("age,sex,y\n30,m,1\n41,f,0\n", &schema3()).unwrap();
        assert_eq!(t.schema.len(), 3);
        assert_eq!(
            t.rows[0],
            vec![
                Cell::Number(30.0),
                Cell::Category("m".into()),
                Cell::Bool(true)
            ]
        );
        assert_eq!(t.rows[1][2], Cell::Bool(false));
    }

    #[test]
    fn unparsable_numeric_becomes_missing() {
        let t = parse("age,sex,y\nn/a,m,1\nabc,f,0\n", &schema3()).unwrap();
        assert!(t.rows[0][0].is_missing());
        assert!(t.rows[1][0].is_missing());
    }

    #[test]
    fn column_count_mismatch_is_schema_error() {
        let err = parse("age,sex,y,extra\n1,m,1,2\n", &schema3()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn non_binary_target_is_rejected() {
        let err = parse("age,sex,y\n1,m,a\n2,m,b\n3,f,c\n", &schema3()).unwrap_err();
        assert!(matches!(err, Error::Target(_)), "{err}");
    }

    #[test]
    fn undeclared_target_is_rejected() {
        let mut s = schema3();
        s.target = "z".into();
        assert!(matches!(
            parse("age,sex,y\n", &s).unwrap_err(),
            Error::Target(_)
        ));
    }

    #[test]
    fn positive_literal_is_configurable() {
        let mut s = schema3();
        s.positive = vec!["Benign".into()];
        let t = parse("age,sex,y\n1,m,benign\n2,f,malignant\n", &s).unwrap();
        assert_eq!(t.rows[0][2], Cell::Bool(true));
        assert_eq!(t.rows[1][2], Cell::Bool(false));
    }

    #[test]
    fn default_positive_literals() {
        let t = parse("age,sex,y\n1,m,YES\n2,f,no\n", &schema3()).unwrap();
        assert_eq!(t.rows[0][2], Cell::Bool(true));
        assert_eq!(t.rows[1][2], Cell::Bool(false));
    }

    #[test]
    fn clean_removes_incomplete_rows() {
        let t = parse("age,sex,y\n1,m,1\n2,?,0\n3,f,1\n4,m,0\n5,f,1\n", &schema3()).unwrap();
        let c = clean(&t, &[]).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.ids, vec![PointId(0), PointId(2), PointId(3), PointId(4)]);
    }

    #[test]
    fn clean_without_missing_is_identity() {
        let t = parse("age,sex,y\n1,m,1\n2,f,0\n", &schema3()).unwrap();
        assert_eq!(clean(&t, &[]).unwrap(), t);
    }

    #[test]
    fn dropped_column_no_longer_causes_row_removal() {
        let mut text = String::from("age,sex,y\n");
        for i in 0..10 {
            let sex = if i == 0 { "m" } else { "?" };
            text.push_str(&format!("{i},{sex},{}\n", i % 2));
        }
        let t = parse(&text, &schema3()).unwrap();
        let c = clean(&t, &["sex".to_string()]).unwrap();
        assert_eq!(c.len(), 10);
        assert!(c.column_index("sex").is_none());
        assert_eq!(c.schema.len(), 2);
    }

    #[test]
    fn clean_to_nothing_is_error() {
        let t = parse("age,sex,y\n?,m,1\n", &schema3()).unwrap();
        assert!(matches!(clean(&t, &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn one_hot_two_categories() {
        let schema = Schema::new(
            vec![
                AttributeSchema::categorical("color"),
                AttributeSchema::boolean("y"),
            ],
            "y",
        );
        let t = parse("color,y\nred,1\nblue,0\nred,1\n", &schema).unwrap();
        let e = one_hot_encode(&t);
        let names: Vec<_> = e.schema.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["color=blue", "color=red", "y"]);
        let col = |i| e.column(i).cloned().collect::<Vec<_>>();
        let b = |v: [bool; 3]| v.iter().map(|&x| Cell::Bool(x)).collect::<Vec<_>>();
        assert_eq!(col(1), b([true, false, true]));
        assert_eq!(col(0), b([false, true, false]));
    }

    #[test]
    fn one_hot_without_categoricals_is_identity() {
        let schema = Schema::new(
            vec![
                AttributeSchema::numeric("x", 0),
                AttributeSchema::boolean("y"),
            ],
            "y",
        );
        let t = parse("x,y\n1,1\n2,0\n", &schema).unwrap();
        assert_eq!(one_hot_encode(&t), t);
    }

    #[test]
    fn single_category_is_dropped() {
        let schema = Schema::new(
            vec![
                AttributeSchema::categorical("c"),
                AttributeSchema::boolean("y"),
            ],
            "y",
        );
        let t = parse("c,y\nonly,1\nonly,0\n", &schema).unwrap();
        let e = one_hot_encode(&t);
        assert_eq!(e.schema.len(), 1);
        assert_eq!(e.schema[0].name, "y");
    }

    #[test]
    fn scaling_examples() {
        assert_eq!(scale_value(2.9, 1), Some(29));
        assert_eq!(scale_value(6.4, 1), Some(64));
        assert_eq!(scale_value(1.23, 1), Some(12));
        assert_eq!(scale_value(1.29, 1), Some(13));
        assert_eq!(scale_value(17.0, 0), Some(17));
        assert_eq!(scale_value(1.25, 1), Some(13));
        assert_eq!(scale_value(-1.25, 1), Some(-13));
        assert_eq!(scale_value(1.005, 2), Some(101));
        assert_eq!(scale_value(0.5, 0), Some(1));
        assert_eq!(scale_value(-0.5, 0), Some(-1));
        assert_eq!(scale_value(1e30, 0), None);
        assert_eq!(scale_value(9.3e18, 0), None);
    }

    #[test]
    fn unscale_renders_decimals() {
        assert_eq!(unscale(29, 1), "2.9");
        assert_eq!(unscale(276, 1), "27.6");
        assert_eq!(unscale(5, 2), "0.05");
        assert_eq!(unscale(-5, 1), "-0.5");
        assert_eq!(unscale(767, 0), "767");
    }

    #[test]
    fn scaling_overflow_names_attribute() {
        let schema = Schema::new(
            vec![
                AttributeSchema::numeric("big", 3),
                AttributeSchema::boolean("y"),
            ],
            "y",
        );
        let t = parse("big,y\n1e17,1\n", &schema).unwrap();
        match scale_to_integers(&t) {
            Err(Error::Scaling { attribute, .. }) => assert_eq!(attribute, "big"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scale_to_integers_records_provenance() {
        let schema = Schema::new(
            vec![
                AttributeSchema::numeric("h", 1),
                AttributeSchema::categorical("c"),
                AttributeSchema::boolean("y"),
            ],
            "y",
        );
        let t = parse("h,c,y\n2.9,a,1\n6.4,b,0\n", &schema).unwrap();
        let ds = scale_to_integers(&one_hot_encode(&t)).unwrap();
        assert_eq!(ds.numeric_column(0).unwrap(), &[29, 64]);
        assert_eq!(
            ds.attribute(0).provenance,
            Provenance::Numeric {
                column: "h".into(),
                decimals: 1
            }
        );
        assert_eq!(
            ds.attribute(2).provenance,
            Provenance::OneHot {
                column: "c".into(),
                category: "b".into()
            }
        );
        assert_eq!(ds.target(), &[true, false]);
    }

    #[test]
    fn row_filters_exclude_matches() {
        let schema = Schema::new(
            vec![
                AttributeSchema::numeric("bp", 0),
                AttributeSchema::boolean("y"),
            ],
            "y",
        );
        let t = parse("bp,y\n0,1\n70,0\n0,0\n80,1\n", &schema).unwrap();
        let f = RowFilter {
            column: "bp".into(),
            op: FilterOp::Eq,
            value: serde_json::json!(0),
        };
        let kept = t.exclude_rows(&[f]).unwrap();
        assert_eq!(kept.ids, vec![PointId(1), PointId(3)]);
    }

    fn synthetic(n: usize) -> EncodedDataset {
        EncodedDataset::from_columns(
            vec![],
            vec![("x", (0..n as i64).collect())],
            (0..n).map(|i| i % 2 == 0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = synthetic(10);
        let (a, b) = split_train_validation(&ds, 0.7, 42).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        let (a2, b2) = split_train_validation(&ds, 0.7, 42).unwrap();
        assert_eq!((a, b), (a2, b2));
        let (a, b) = split_train_validation(&synthetic(100), 0.7, 1).unwrap();
        assert_eq!((a.len(), b.len()), (70, 30));
    }

    #[test]
    fn split_rejects_empty_parts() {
        assert!(matches!(
            split_train_validation(&synthetic(2), 0.1, 0),
            Err(Error::Split(_))
        ));
        assert!(matches!(
            split_train_validation(&synthetic(10), 1.0, 0),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn folds_of_ten_points_are_singletons() {
        let plan = make_folds(&synthetic(10), 10, 3).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 1));
    }

    #[test]
    fn folds_of_23_points() {
        let plan = make_folds(&synthetic(23), 10, 3).unwrap();
        let mut sizes: Vec<_> = plan.folds.iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn too_many_folds_is_error() {
        assert!(matches!(
            make_folds(&synthetic(5), 6, 0),
            Err(Error::Fold(_))
        ));
        assert!(matches!(
            make_folds(&synthetic(5), 1, 0),
            Err(Error::Fold(_))
        ));
    }

    #[test]
    fn union_restores_split() {
        let ds = synthetic(10);
        let (a, b) = split_train_validation(&ds, 0.7, 5).unwrap();
        let u = a.union(&b);
        let mut ids = u.ids().to_vec();
        ids.sort();
        assert_eq!(ids, ds.ids());
        assert_eq!(u.select_ids(ds.ids()).len(), 10);
    }
}
