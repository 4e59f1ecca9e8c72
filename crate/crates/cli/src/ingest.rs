//! Schema files for `divan preprocess`.
//!
//! ```json
//! {
//!   "delimiter": ",",
//!   "columns": [{"name": "pickup", "kind": "timestamp"}, {"name": "fare", "kind": "float64"}],
//!   "dimensions": ["pickup", "fare"],
//!   "composites": [{"primary": "zone", "secondary": "borough"}],
//!   "values": [{"column": "fare", "width": "float32"}]
//! }
//! ```
//! `dimensions` defaults to every column; composites are appended after.

use std::path::Path;

use anyhow::{Context, Result};
use divan_core::dataset::{ColumnSchema, Dataset, ValueWidth};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeDecl {
    pub primary: String,
    pub secondary: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueDecl {
    pub column: String,
    pub width: ValueWidth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub columns: Vec<ColumnSchema>,
    #[serde(default)]
    pub delimiter: Option<char>,
    #[serde(default)]
    pub dimensions: Option<Vec<String>>,
    #[serde(default)]
    pub composites: Vec<CompositeDecl>,
    #[serde(default)]
    pub values: Vec<ValueDecl>,
}

/// Delimiter from the schema, else tab for `.tsv` inputs, else comma.
pub fn delimiter_for(input: &Path, schema: &SchemaFile) -> u8 {
    match schema.delimiter {
        Some(c) => c as u8,
        None if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv")) => b'\t',
        None => b',',
    }
}

/// Ingests `input`, declares dimensions and value columns, sorts, and saves.
pub fn preprocess(input: &Path, schema: &SchemaFile, out: &Path) -> Result<Dataset> {
    let delimiter = delimiter_for(input, schema);
    let mut ds = Dataset::ingest_delimited(input, &schema.columns, delimiter)
        .with_context(|| format!("ingesting {}", input.display()))?;
    if let Some(names) = &schema.dimensions {
        let cols = names.iter().map(|n| ds.column_id(n)).collect::<Result<Vec<_>, _>>()?;
        ds.set_column_dimensions(&cols)?;
    }
    for c in &schema.composites {
        let (p, s) = (ds.column_id(&c.primary)?, ds.column_id(&c.secondary)?);
        ds.make_composite(p, s)?;
    }
    for v in &schema.values {
        let col = ds.column_id(&v.column)?;
        ds.add_value_column(col, v.width)?;
    }
    ds.preprocess()?;
    ds.save_preprocessed(out).with_context(|| format!("saving {}", out.display()))?;
    Ok(ds)
}
