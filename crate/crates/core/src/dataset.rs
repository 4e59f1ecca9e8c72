//! Columnar dataset ingestion, dimension definitions and the one-time
//! argsort preprocessing that every later binning pass reuses.
//!
//! A [`Dataset`] holds typed columns (with nulls), a list of dimensions
//! (single columns or lexicographic pairs of columns) and, after
//! [`Dataset::preprocess`], one [`SortedIndexColumn`] per dimension.
//! The on-disk layout written by [`Dataset::save_preprocessed`] is one
//! little-endian fixed-width file per column and per rank column plus a
//! small `header.json` with sha256 checksums.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_NAME: &str = "divan-dataset";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_FILE: &str = "header.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error at row {row}, column '{column}': cannot parse {cell:?} as {kind:?}")]
    Parse {
        row: usize,
        column: String,
        cell: String,
        kind: ColumnKind,
    },
    #[error("input has no data rows")]
    Empty,
    #[error("column '{0}' not found in input header")]
    MissingColumn(String),
    #[error("duplicate column name '{0}'")]
    DuplicateColumn(String),
    #[error("unknown column id {0}")]
    UnknownColumn(usize),
    #[error("unknown column name '{0}'")]
    UnknownColumnName(String),
    #[error("unknown dimension id {0}")]
    UnknownDimension(usize),
    #[error("dataset directory {0} is not preprocessed")]
    NotPreprocessed(PathBuf),
    #[error("unsupported on-disk layout: {0}")]
    Version(String),
    #[error("integrity check failed for {0}")]
    Integrity(String),
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error("bad filter expression '{0}'")]
    Filter(String),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Integer,
    Float64,
    Text,
    Timestamp,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default = "default_true")]
    pub nulls_first: bool,
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            kind,
            nulls_first: true,
        }
    }
}

/// A single cell value. Ordering places `Null` lowest and compares floats
/// with `total_cmp`; mixed kinds never meet inside one column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Int(_) => 1,
            Value::Float(_) => 2,
            Value::Text(_) => 3,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn cmp_with_nulls(&self, other: &Value, nulls_first: bool) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Null, _) if !nulls_first => Ordering::Greater,
            (_, Value::Null) if !nulls_first => Ordering::Less,
            _ => self.cmp(other),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            _ => None,
        }
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Int(a), Value::Float(b)) => (*a as f64).total_cmp(b),
            (Value::Float(a), Value::Int(b)) => a.total_cmp(&(*b as f64)),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

/// The value of a dimension at one row: one component for plain
/// dimensions, two for lexicographic composites.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimValue {
    Single(Value),
    Pair(Value, Value),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Integer(Vec<Option<i64>>),
    Float64(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
    Timestamp(Vec<Option<i64>>),
}

impl ColumnData {
    fn empty(kind: ColumnKind) -> Self {
        match kind {
            ColumnKind::Integer => ColumnData::Integer(Vec::new()),
            ColumnKind::Float64 => ColumnData::Float64(Vec::new()),
            ColumnKind::Text => ColumnData::Text(Vec::new()),
            ColumnKind::Timestamp => ColumnData::Timestamp(Vec::new()),
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Integer(_) => ColumnKind::Integer,
            ColumnData::Float64(_) => ColumnKind::Float64,
            ColumnData::Text(_) => ColumnKind::Text,
            ColumnData::Timestamp(_) => ColumnKind::Timestamp,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Integer(v) | ColumnData::Timestamp(v) => v.len(),
            ColumnData::Float64(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, row: usize) -> Value {
        match self {
            ColumnData::Integer(v) | ColumnData::Timestamp(v) => {
                v[row].map_or(Value::Null, Value::Int)
            }
            ColumnData::Float64(v) => v[row].map_or(Value::Null, Value::Float),
            ColumnData::Text(v) => v[row].clone().map_or(Value::Null, Value::Text),
        }
    }

    fn is_null(&self, row: usize) -> bool {
        match self {
            ColumnData::Integer(v) | ColumnData::Timestamp(v) => v[row].is_none(),
            ColumnData::Float64(v) => v[row].is_none(),
            ColumnData::Text(v) => v[row].is_none(),
        }
    }

    /// Compares two rows of this column without materializing values.
    fn cmp_rows(&self, a: usize, b: usize, nulls_first: bool) -> Ordering {
        fn opt<T>(x: &Option<T>, y: &Option<T>, nulls_first: bool, f: impl Fn(&T, &T) -> Ordering) -> Ordering {
            match (x, y) {
                (Some(x), Some(y)) => f(x, y),
                (None, None) => Ordering::Equal,
                (None, Some(_)) => {
                    if nulls_first {
                        Ordering::Less
                    } else {
                        Ordering::Greater
                    }
                }
                (Some(_), None) => {
                    if nulls_first {
                        Ordering::Greater
                    } else {
                        Ordering::Less
                    }
                }
            }
        }
        match self {
            ColumnData::Integer(v) | ColumnData::Timestamp(v) => {
                opt(&v[a], &v[b], nulls_first, |x, y| x.cmp(y))
            }
            ColumnData::Float64(v) => opt(&v[a], &v[b], nulls_first, |x, y| x.total_cmp(y)),
            ColumnData::Text(v) => opt(&v[a], &v[b], nulls_first, |x, y| x.cmp(y)),
        }
    }

    fn push_null(&mut self) {
        match self {
            ColumnData::Integer(v) | ColumnData::Timestamp(v) => v.push(None),
            ColumnData::Float64(v) => v.push(None),
            ColumnData::Text(v) => v.push(None),
        }
    }

    /// Parses and appends one cell.
    fn push_cell(&mut self, cell: &str) -> std::result::Result<(), ()> {
        match self {
            ColumnData::Integer(v) => v.push(Some(cell.trim().parse().map_err(|_| ())?)),
            ColumnData::Float64(v) => v.push(Some(cell.trim().parse().map_err(|_| ())?)),
            ColumnData::Text(v) => v.push(Some(cell.to_string())),
            ColumnData::Timestamp(v) => v.push(Some(parse_timestamp(cell.trim()).ok_or(())?)),
        }
        Ok(())
    }

    fn subset(&self, rows: &[u32]) -> ColumnData {
        match self {
            ColumnData::Integer(v) => ColumnData::Integer(rows.iter().map(|&r| v[r as usize]).collect()),
            ColumnData::Timestamp(v) => {
                ColumnData::Timestamp(rows.iter().map(|&r| v[r as usize]).collect())
            }
            ColumnData::Float64(v) => ColumnData::Float64(rows.iter().map(|&r| v[r as usize]).collect()),
            ColumnData::Text(v) => {
                ColumnData::Text(rows.iter().map(|&r| v[r as usize].clone()).collect())
            }
        }
    }
}

/// Normalizes a timestamp cell to epoch seconds. Accepts plain integers,
/// RFC 3339 and `YYYY-MM-DD[ HH:MM:SS]` (interpreted as UTC).
pub fn parse_timestamp(cell: &str) -> Option<i64> {
    if let Ok(v) = cell.parse::<i64>() {
        return Some(v);
    }
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(cell) {
        return Some(t.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%m/%d/%Y %I:%M:%S %p"] {
        if let Ok(t) = chrono::NaiveDateTime::parse_from_str(cell, fmt) {
            return Some(t.and_utc().timestamp());
        }
    }
    chrono::NaiveDate::parse_from_str(cell, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc().timestamp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DimSource {
    Column { column: usize },
    Composite { primary: usize, secondary: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub id: usize,
    pub name: String,
    pub source: DimSource,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortedIndexColumn {
    pub dim: usize,
    /// `ranks[t]` is the position of row `t` in the dimension's sort order.
    pub ranks: Vec<u32>,
}

/// Element width of a designated aggregate-value column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueWidth {
    Int32,
    Float32,
    Float64,
}

impl ValueWidth {
    pub fn bytes(self) -> usize {
        match self {
            ValueWidth::Int32 | ValueWidth::Float32 => 4,
            ValueWidth::Float64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueColumnSpec {
    pub column: usize,
    pub width: ValueWidth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: Vec<ColumnSchema>,
    pub columns: Vec<ColumnData>,
    pub dims: Vec<DimensionSpec>,
    pub sorted_indexes: BTreeMap<usize, SortedIndexColumn>,
    pub row_count: usize,
    pub value_columns: Vec<ValueColumnSpec>,
}

impl Dataset {
    /// Builds a dataset from already-typed columns. Every column becomes a
    /// dimension, in schema order.
    pub fn from_columns(schema: Vec<ColumnSchema>, columns: Vec<ColumnData>) -> Result<Self> {
        if schema.len() != columns.len() {
            return Err(DatasetError::Malformed(format!(
                "{} schema entries for {} columns",
                schema.len(),
                columns.len()
            )));
        }
        check_unique(&schema)?;
        let row_count = columns.first().map_or(0, ColumnData::len);
        for (s, c) in schema.iter().zip(&columns) {
            if c.len() != row_count {
                return Err(DatasetError::Malformed(format!(
                    "column '{}' has {} rows, expected {row_count}",
                    s.name,
                    c.len()
                )));
            }
            if c.kind() != s.kind {
                return Err(DatasetError::Malformed(format!("column '{}' kind mismatch", s.name)));
            }
        }
        let dims = schema
            .iter()
            .enumerate()
            .map(|(i, s)| DimensionSpec {
                id: i,
                name: s.name.clone(),
                source: DimSource::Column { column: i },
            })
            .collect();
        Ok(Self {
            schema,
            columns,
            dims,
            sorted_indexes: BTreeMap::new(),
            row_count,
            value_columns: Vec::new(),
        })
    }

    /// Reads a delimited file with a header row. Columns are matched to the
    /// schema by name; extra input columns are ignored. Empty cells and the
    /// tokens `NULL`, `null`, `NA` are nulls.
    pub fn ingest_delimited(path: &Path, schema: &[ColumnSchema], delimiter: u8) -> Result<Self> {
        check_unique(schema)?;
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .flexible(false)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(source) => DatasetError::Io {
                    path: path.to_path_buf(),
                    source,
                },
                other => DatasetError::Malformed(format!("{other:?}")),
            })?;
        let headers = reader.headers()?.clone();
        let positions = schema
            .iter()
            .map(|s| {
                headers
                    .iter()
                    .position(|h| h.trim() == s.name)
                    .ok_or_else(|| DatasetError::MissingColumn(s.name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut columns: Vec<ColumnData> = schema.iter().map(|s| ColumnData::empty(s.kind)).collect();
        let mut record = csv::StringRecord::new();
        let mut row = 0usize;
        while reader.read_record(&mut record)? {
            for ((col, s), &pos) in columns.iter_mut().zip(schema).zip(&positions) {
                let cell = record.get(pos).unwrap_or("");
                if is_null_token(cell) {
                    col.push_null();
                } else if col.push_cell(cell).is_err() {
                    return Err(DatasetError::Parse {
                        row,
                        column: s.name.clone(),
                        cell: cell.to_string(),
                        kind: s.kind,
                    });
                }
            }
            row += 1;
        }
        if row == 0 {
            return Err(DatasetError::Empty);
        }
        Self::from_columns(schema.to_vec(), columns)
    }

    pub fn column_id(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| DatasetError::UnknownColumnName(name.to_string()))
    }

    pub fn dim(&self, id: usize) -> Result<&DimensionSpec> {
        self.dims.get(id).ok_or(DatasetError::UnknownDimension(id))
    }

    pub fn num_dims(&self) -> usize {
        self.dims.len()
    }

    /// Replaces the dimension list with one dimension per named column.
    pub fn set_column_dimensions(&mut self, columns: &[usize]) -> Result<()> {
        let mut dims = Vec::with_capacity(columns.len());
        for (id, &c) in columns.iter().enumerate() {
            let schema = self.schema.get(c).ok_or(DatasetError::UnknownColumn(c))?;
            dims.push(DimensionSpec {
                id,
                name: schema.name.clone(),
                source: DimSource::Column { column: c },
            });
        }
        self.dims = dims;
        self.sorted_indexes.clear();
        Ok(())
    }

    /// Appends a lexicographic (primary, secondary) dimension over two
    /// columns and returns its spec.
    pub fn make_composite(&mut self, primary: usize, secondary: usize) -> Result<DimensionSpec> {
        for c in [primary, secondary] {
            if c >= self.schema.len() {
                return Err(DatasetError::UnknownColumn(c));
            }
        }
        let spec = DimensionSpec {
            id: self.dims.len(),
            name: format!("({},{})", self.schema[primary].name, self.schema[secondary].name),
            source: DimSource::Composite { primary, secondary },
        };
        self.dims.push(spec.clone());
        Ok(spec)
    }

    pub fn add_value_column(&mut self, column: usize, width: ValueWidth) -> Result<()> {
        let schema = self.schema.get(column).ok_or(DatasetError::UnknownColumn(column))?;
        if schema.kind == ColumnKind::Text {
            return Err(DatasetError::Malformed(format!(
                "text column '{}' cannot hold aggregate values",
                schema.name
            )));
        }
        self.value_columns.retain(|v| v.column != column);
        self.value_columns.push(ValueColumnSpec { column, width });
        Ok(())
    }

    /// Compares two rows along a dimension; ties are `Equal` (callers that
    /// need a total order break them by row index).
    pub fn compare_rows(&self, dim: &DimensionSpec, a: usize, b: usize) -> Ordering {
        match dim.source {
            DimSource::Column { column } => {
                self.columns[column].cmp_rows(a, b, self.schema[column].nulls_first)
            }
            DimSource::Composite { primary, secondary } => self.columns[primary]
                .cmp_rows(a, b, self.schema[primary].nulls_first)
                .then_with(|| {
                    self.columns[secondary].cmp_rows(a, b, self.schema[secondary].nulls_first)
                }),
        }
    }

    pub fn dim_value(&self, dim: &DimensionSpec, row: usize) -> DimValue {
        match dim.source {
            DimSource::Column { column } => DimValue::Single(self.columns[column].value(row)),
            DimSource::Composite { primary, secondary } => DimValue::Pair(
                self.columns[primary].value(row),
                self.columns[secondary].value(row),
            ),
        }
    }

    /// Orders two dimension values with the dimension's null policy.
    pub fn compare_dim_values(&self, dim: &DimensionSpec, a: &DimValue, b: &DimValue) -> Ordering {
        match (dim.source, a, b) {
            (DimSource::Column { column }, DimValue::Single(x), DimValue::Single(y)) => {
                x.cmp_with_nulls(y, self.schema[column].nulls_first)
            }
            (
                DimSource::Composite { primary, secondary },
                DimValue::Pair(x0, x1),
                DimValue::Pair(y0, y1),
            ) => x0
                .cmp_with_nulls(y0, self.schema[primary].nulls_first)
                .then_with(|| x1.cmp_with_nulls(y1, self.schema[secondary].nulls_first)),
            _ => a_shape(a).cmp(&a_shape(b)),
        }
    }

    /// Stable argsort of `rows` along `dim` (ties keep input order).
    pub fn argsort_rows(&self, dim: &DimensionSpec, rows: &[u32]) -> Vec<u32> {
        let mut order = rows.to_vec();
        order.sort_by(|&a, &b| self.compare_rows(dim, a as usize, b as usize));
        order
    }

    /// Computes the rank column of every dimension that lacks one.
    pub fn preprocess(&mut self) -> Result<()> {
        if self.row_count > u32::MAX as usize {
            return Err(DatasetError::Malformed("more than 2^32 rows".into()));
        }
        let all: Vec<u32> = (0..self.row_count as u32).collect();
        let missing: Vec<DimensionSpec> = self
            .dims
            .iter()
            .filter(|d| !self.sorted_indexes.contains_key(&d.id))
            .cloned()
            .collect();
        let computed: Vec<SortedIndexColumn> = missing
            .par_iter()
            .map(|dim| {
                let order = self.argsort_rows(dim, &all);
                let mut ranks = vec![0u32; self.row_count];
                for (pos, &row) in order.iter().enumerate() {
                    ranks[row as usize] = pos as u32;
                }
                SortedIndexColumn { dim: dim.id, ranks }
            })
            .collect();
        for col in computed {
            self.sorted_indexes.insert(col.dim, col);
        }
        Ok(())
    }

    pub fn is_preprocessed(&self) -> bool {
        self.dims.iter().all(|d| self.sorted_indexes.contains_key(&d.id))
    }

    pub fn ranks(&self, dim: usize) -> Option<&[u32]> {
        self.sorted_indexes.get(&dim).map(|s| s.ranks.as_slice())
    }

    /// Copies the listed rows into a new dataset (ranks are not carried
    /// over; call `preprocess` on the result if needed).
    pub fn select_rows(&self, rows: &[u32]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.subset(rows)).collect(),
            dims: self.dims.clone(),
            sorted_indexes: BTreeMap::new(),
            row_count: rows.len(),
            value_columns: self.value_columns.clone(),
        }
    }

    /// Extracts a numeric column as f64 (nulls become 0).
    pub fn numeric_column(&self, column: usize) -> Result<Vec<f64>> {
        match self.columns.get(column).ok_or(DatasetError::UnknownColumn(column))? {
            ColumnData::Integer(v) | ColumnData::Timestamp(v) => {
                Ok(v.iter().map(|x| x.unwrap_or(0) as f64).collect())
            }
            ColumnData::Float64(v) => Ok(v.iter().map(|x| x.unwrap_or(0.0)).collect()),
            ColumnData::Text(_) => Err(DatasetError::Malformed(format!(
                "column '{}' is not numeric",
                self.schema[column].name
            ))),
        }
    }

    pub fn save_preprocessed(&self, dir: &Path) -> Result<()> {
        if !self.is_preprocessed() {
            return Err(DatasetError::NotPreprocessed(dir.to_path_buf()));
        }
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut files = BTreeMap::new();
        for (i, col) in self.columns.iter().enumerate() {
            let name = format!("col_{i}.bin");
            let bytes = encode_column(col);
            files.insert(name.clone(), sha256_hex(&bytes));
            write_file(&dir.join(&name), &bytes)?;
        }
        for (dim, idx) in &self.sorted_indexes {
            let name = format!("rank_{dim}.bin");
            let mut bytes = Vec::with_capacity(idx.ranks.len() * 4);
            for r in &idx.ranks {
                bytes.extend_from_slice(&r.to_le_bytes());
            }
            files.insert(name.clone(), sha256_hex(&bytes));
            write_file(&dir.join(&name), &bytes)?;
        }
        let header = Header {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            row_count: self.row_count,
            schema: self.schema.clone(),
            dims: self.dims.clone(),
            value_columns: self.value_columns.clone(),
            files,
        };
        let json = serde_json::to_vec_pretty(&header).expect("header serializes");
        write_file(&dir.join(HEADER_FILE), &json)
    }

    /// Loads a dataset written by `save_preprocessed`. With `verify` set,
    /// every file is checked against the checksum in the header.
    pub fn load_preprocessed(dir: &Path, verify: bool) -> Result<Self> {
        let header_path = dir.join(HEADER_FILE);
        if !header_path.exists() {
            return Err(DatasetError::NotPreprocessed(dir.to_path_buf()));
        }
        let header: Header = serde_json::from_slice(&fs::read(&header_path).map_err(io_err(&header_path))?)
            .map_err(|e| DatasetError::Malformed(format!("header: {e}")))?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(DatasetError::Version(format!(
                "{} v{} (expected {FORMAT_NAME} v{FORMAT_VERSION})",
                header.format, header.version
            )));
        }
        let read = |name: &str| -> Result<Vec<u8>> {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            if verify {
                let expected = header
                    .files
                    .get(name)
                    .ok_or_else(|| DatasetError::Integrity(format!("{name}: no checksum")))?;
                if &sha256_hex(&bytes) != expected {
                    return Err(DatasetError::Integrity(name.to_string()));
                }
            }
            Ok(bytes)
        };
        let n = header.row_count;
        let mut columns = Vec::with_capacity(header.schema.len());
        for (i, s) in header.schema.iter().enumerate() {
            let bytes = read(&format!("col_{i}.bin"))?;
            columns.push(decode_column(s.kind, n, &bytes).ok_or_else(|| {
                DatasetError::Malformed(format!("column file col_{i}.bin is truncated"))
            })?);
        }
        let mut sorted_indexes = BTreeMap::new();
        for d in &header.dims {
            let bytes = read(&format!("rank_{}.bin", d.id))?;
            if bytes.len() != n * 4 {
                return Err(DatasetError::Malformed(format!("rank_{}.bin has wrong length", d.id)));
            }
            let ranks = bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            sorted_indexes.insert(d.id, SortedIndexColumn { dim: d.id, ranks });
        }
        Ok(Dataset {
            schema: header.schema,
            columns,
            dims: header.dims,
            sorted_indexes,
            row_count: n,
            value_columns: header.value_columns,
        })
    }

    /// Content fingerprint of a saved dataset directory (hash of its header,
    /// which itself carries per-file checksums).
    pub fn fingerprint(dir: &Path) -> Result<String> {
        let path = dir.join(HEADER_FILE);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        Ok(sha256_hex(&bytes))
    }
}

fn a_shape(v: &DimValue) -> u8 {
    match v {
        DimValue::Single(_) => 0,
        DimValue::Pair(..) => 1,
    }
}

fn check_unique(schema: &[ColumnSchema]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for s in schema {
        if !seen.insert(s.name.as_str()) {
            return Err(DatasetError::DuplicateColumn(s.name.clone()));
        }
    }
    Ok(())
}

fn is_null_token(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NULL" | "null" | "NA")
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    row_count: usize,
    schema: Vec<ColumnSchema>,
    dims: Vec<DimensionSpec>,
    value_columns: Vec<ValueColumnSpec>,
    files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}

/// Column file: `row_count` validity bytes padded to a multiple of 8, then
/// fixed-width little-endian values (8 bytes each). Text columns store
/// `row_count + 1` u64 offsets followed by the UTF-8 payload.
fn encode_column(col: &ColumnData) -> Vec<u8> {
    let n = col.len();
    let padded = n.div_ceil(8) * 8;
    let mut out = Vec::with_capacity(padded + n * 8);
    out.extend((0..n).map(|i| u8::from(!col.is_null(i))));
    out.resize(padded, 0);
    match col {
        ColumnData::Integer(v) | ColumnData::Timestamp(v) => {
            for x in v {
                out.extend_from_slice(&x.unwrap_or(0).to_le_bytes());
            }
        }
        ColumnData::Float64(v) => {
            for x in v {
                out.extend_from_slice(&x.unwrap_or(0.0).to_le_bytes());
            }
        }
        ColumnData::Text(v) => {
            let mut offset = 0u64;
            out.extend_from_slice(&offset.to_le_bytes());
            for x in v {
                offset += x.as_ref().map_or(0, |s| s.len() as u64);
                out.extend_from_slice(&offset.to_le_bytes());
            }
            for s in v.iter().flatten() {
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    out
}

fn decode_column(kind: ColumnKind, n: usize, bytes: &[u8]) -> Option<ColumnData> {
    let padded = n.div_ceil(8) * 8;
    let valid = bytes.get(..n)?;
    let body = bytes.get(padded..)?;
    let word = |i: usize| -> Option<[u8; 8]> { body.get(i * 8..i * 8 + 8)?.try_into().ok() };
    Some(match kind {
        ColumnKind::Integer | ColumnKind::Timestamp => {
            let v = (0..n)
                .map(|i| word(i).map(|w| (valid[i] != 0).then(|| i64::from_le_bytes(w))))
                .collect::<Option<Vec<_>>>()?;
            if kind == ColumnKind::Integer {
                ColumnData::Integer(v)
            } else {
                ColumnData::Timestamp(v)
            }
        }
        ColumnKind::Float64 => ColumnData::Float64(
            (0..n)
                .map(|i| word(i).map(|w| (valid[i] != 0).then(|| f64::from_le_bytes(w))))
                .collect::<Option<Vec<_>>>()?,
        ),
        ColumnKind::Text => {
            let offsets = (0..=n)
                .map(|i| word(i).map(u64::from_le_bytes))
                .collect::<Option<Vec<_>>>()?;
            let payload = body.get((n + 1) * 8..)?;
            ColumnData::Text(
                (0..n)
                    .map(|i| {
                        let s = payload.get(offsets[i] as usize..offsets[i + 1] as usize)?;
                        let s = std::str::from_utf8(s).ok()?.to_string();
                        Some((valid[i] != 0).then_some(s))
                    })
                    .collect::<Option<Vec<_>>>()?,
            )
        }
    })
}

/// A conjunction of `column <op> literal` predicates, written as
/// `fare>=10,passengers==2`. Supported operators: `<= >= == != < >`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub predicates: Vec<Predicate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    pub op: CompareOp,
    pub literal: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl RowFilter {
    pub fn parse(expr: &str) -> Result<Self> {
        let mut predicates = Vec::new();
        for part in expr.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (pos, op, len) = [
                ("<=", CompareOp::Le),
                (">=", CompareOp::Ge),
                ("==", CompareOp::Eq),
                ("!=", CompareOp::Ne),
                ("<", CompareOp::Lt),
                (">", CompareOp::Gt),
            ]
            .iter()
            .find_map(|(tok, op)| part.find(tok).map(|p| (p, *op, tok.len())))
            .ok_or_else(|| DatasetError::Filter(part.to_string()))?;
            let column = part[..pos].trim().to_string();
            let literal = part[pos + len..].trim().to_string();
            if column.is_empty() || literal.is_empty() {
                return Err(DatasetError::Filter(part.to_string()));
            }
            predicates.push(Predicate { column, op, literal });
        }
        Ok(Self { predicates })
    }

    /// Row ids (ascending) that satisfy every predicate. Null cells never match.
    pub fn apply(&self, ds: &Dataset) -> Result<Vec<u32>> {
        let mut compiled = Vec::with_capacity(self.predicates.len());
        for p in &self.predicates {
            let col = ds.column_id(&p.column)?;
            let lit = match ds.schema[col].kind {
                ColumnKind::Integer => Value::Int(p.literal.parse().map_err(|_| DatasetError::Filter(p.literal.clone()))?),
                ColumnKind::Timestamp => Value::Int(
                    parse_timestamp(&p.literal).ok_or_else(|| DatasetError::Filter(p.literal.clone()))?,
                ),
                ColumnKind::Float64 => Value::Float(p.literal.parse().map_err(|_| DatasetError::Filter(p.literal.clone()))?),
                ColumnKind::Text => Value::Text(p.literal.clone()),
            };
            compiled.push((col, p.op, lit));
        }
        Ok((0..ds.row_count as u32)
            .filter(|&r| {
                compiled.iter().all(|(col, op, lit)| {
                    let v = ds.columns[*col].value(r as usize);
                    if v.is_null() {
                        return false;
                    }
                    let ord = v.cmp(lit);
                    match op {
                        CompareOp::Lt => ord.is_lt(),
                        CompareOp::Le => ord.is_le(),
                        CompareOp::Gt => ord.is_gt(),
                        CompareOp::Ge => ord.is_ge(),
                        CompareOp::Eq => ord.is_eq(),
                        CompareOp::Ne => ord.is_ne(),
                    }
                })
            })
            .collect())
    }
}
