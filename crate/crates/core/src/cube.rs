//! Shared aggregation types: dimension triples, binned input tables,
//! aggregate specifications and dense `B^3` cubes (plus their file format).

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::BinnedColumn;
use crate::dataset::{ColumnKind, Dataset, ValueWidth};

#[derive(Debug, Error)]
pub enum CubeError {
    #[error("need at least 3 dimensions, got {0}")]
    TooFewDimensions(usize),
    #[error("triple dimensions must be distinct: {0:?}")]
    RepeatedDimension([usize; 3]),
    #[error("dimension {dim} out of range for {num_dims} dimensions")]
    DimensionOutOfRange { dim: usize, num_dims: usize },
    #[error("bin value {bin} >= {num_bins} in column {column}, row {row}")]
    BinOutOfRange {
        column: usize,
        row: usize,
        bin: u32,
        num_bins: u32,
    },
    #[error("binned columns disagree: {0}")]
    Shape(String),
    #[error("{partitions} partitions do not evenly divide {num_bins} bins")]
    BadPartitions { partitions: u32, num_bins: u32 },
    #[error("aggregate spec: {0}")]
    Spec(String),
    #[error("cube file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CubeError> = std::result::Result<T, E>;

/// Three distinct dimension indexes, stored ascending.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple(pub [usize; 3]);

impl Triple {
    pub fn new(a: usize, b: usize, c: usize) -> Result<Self> {
        let mut d = [a, b, c];
        d.sort_unstable();
        if d[0] == d[1] || d[1] == d[2] {
            return Err(CubeError::RepeatedDimension([a, b, c]));
        }
        Ok(Triple(d))
    }

    pub fn dims(&self) -> [usize; 3] {
        self.0
    }

    pub fn contains(&self, dim: usize) -> bool {
        self.0.contains(&dim)
    }

    /// Position (0..3) of `dim` within the sorted triple.
    pub fn position(&self, dim: usize) -> Option<usize> {
        self.0.iter().position(|&d| d == dim)
    }

    pub fn offset(&self, by: usize) -> Triple {
        Triple([self.0[0] + by, self.0[1] + by, self.0[2] + by])
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.0[0], self.0[1], self.0[2])
    }
}

/// All `C(n,3)` triples in lexicographic order.
pub fn enumerate_triples(n: usize) -> Result<Vec<Triple>> {
    if n < 3 {
        return Err(CubeError::TooFewDimensions(n));
    }
    let mut out = Vec::with_capacity(n * (n - 1) * (n - 2) / 6);
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                out.push(Triple([a, b, c]));
            }
        }
    }
    Ok(out)
}

/// Index of a triple in `enumerate_triples(n)` order.
pub fn triple_index(t: Triple, n: usize) -> usize {
    let choose3 = |m: usize| if m < 3 { 0 } else { m * (m - 1) * (m - 2) / 6 };
    let choose2 = |m: usize| if m < 2 { 0 } else { m * (m - 1) / 2 };
    let [a, b, c] = t.0;
    // triples starting below a, then those starting at a with middle below b
    (choose3(n) - choose3(n - a)) + (choose2(n - a - 1) - choose2(n - b)) + (c - b - 1)
}

/// The binned analysis input: `N` columns of bins over the same rows.
/// Column `i` is local dimension `i`; [`BinnedColumn::dim`] keeps the
/// dataset dimension it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinnedTable {
    pub num_bins: u32,
    pub columns: Vec<BinnedColumn>,
}

impl BinnedTable {
    pub fn new(columns: Vec<BinnedColumn>) -> Result<Self> {
        let first = columns.first().ok_or_else(|| CubeError::Shape("no columns".into()))?;
        let num_bins = first.num_bins;
        let rows = first.bins.len();
        for (i, c) in columns.iter().enumerate() {
            if c.num_bins != num_bins {
                return Err(CubeError::Shape(format!("column {i} has {} bins, expected {num_bins}", c.num_bins)));
            }
            if c.bins.len() != rows {
                return Err(CubeError::Shape(format!("column {i} has {} rows, expected {rows}", c.bins.len())));
            }
        }
        Ok(Self { num_bins, columns })
    }

    /// Builds a table straight from raw bin vectors (local dims 0..N).
    pub fn from_bins(num_bins: u32, bins: Vec<Vec<u32>>) -> Result<Self> {
        Self::new(
            bins.into_iter()
                .enumerate()
                .map(|(dim, bins)| BinnedColumn { dim, num_bins, bins })
                .collect(),
        )
    }

    pub fn num_dims(&self) -> usize {
        self.columns.len()
    }

    pub fn num_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.bins.len())
    }

    pub fn column(&self, dim: usize) -> &[u32] {
        &self.columns[dim].bins
    }

    /// Fails on the first bin value `>= B`.
    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.columns.iter().enumerate() {
            if let Some((row, &bin)) = c.bins.iter().enumerate().find(|(_, &b)| b >= self.num_bins) {
                return Err(CubeError::BinOutOfRange {
                    column: i,
                    row,
                    bin,
                    num_bins: self.num_bins,
                });
            }
        }
        Ok(())
    }

    pub fn check_triples(&self, triples: &[Triple]) -> Result<()> {
        let n = self.num_dims();
        for t in triples {
            if t.0[2] >= n {
                return Err(CubeError::DimensionOutOfRange { dim: t.0[2], num_dims: n });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggFunction {
    Count,
    Sum,
}

/// What to aggregate: COUNT of tuples, or SUM of a dataset column at a
/// given element width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggSpec {
    pub function: AggFunction,
    pub value_column: Option<usize>,
    pub width: ValueWidth,
}

impl AggSpec {
    pub fn count() -> Self {
        Self {
            function: AggFunction::Count,
            value_column: None,
            width: ValueWidth::Int32,
        }
    }

    pub fn sum(column: usize, width: ValueWidth) -> Result<Self> {
        if width == ValueWidth::Int32 {
            return Err(CubeError::Spec("SUM accumulates float32 or float64".into()));
        }
        Ok(Self {
            function: AggFunction::Sum,
            value_column: Some(column),
            width,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match (self.function, self.value_column, self.width) {
            (AggFunction::Count, None, ValueWidth::Int32) => Ok(()),
            (AggFunction::Sum, Some(_), ValueWidth::Float32 | ValueWidth::Float64) => Ok(()),
            (AggFunction::Sum, None, _) => Err(CubeError::Spec("SUM requires a value column".into())),
            _ => Err(CubeError::Spec(format!("inconsistent spec {self:?}"))),
        }
    }

    pub fn elem(&self) -> ElemType {
        match self.width {
            ValueWidth::Int32 => ElemType::Count,
            ValueWidth::Float32 => ElemType::F32,
            ValueWidth::Float64 => ElemType::F64,
        }
    }

    /// Gathers the measure for the analyzed `rows` of `ds`.
    pub fn measure(&self, ds: &Dataset, rows: &[u32]) -> Result<Measure> {
        self.validate()?;
        let Some(column) = self.value_column else {
            return Ok(Measure::Count);
        };
        let kind = ds
            .schema
            .get(column)
            .ok_or_else(|| CubeError::Spec(format!("unknown value column {column}")))?
            .kind;
        if kind == ColumnKind::Text {
            return Err(CubeError::Spec("cannot sum a text column".into()));
        }
        let all = ds.numeric_column(column).map_err(|e| CubeError::Spec(e.to_string()))?;
        let picked = rows.iter().map(|&r| all[r as usize]);
        Ok(match self.width {
            ValueWidth::Float32 => Measure::SumF32(picked.map(|v| v as f32).collect()),
            _ => Measure::SumF64(picked.collect()),
        })
    }
}

/// Per-row values for the aggregate, aligned with the binned table rows.
#[derive(Clone, Debug, PartialEq)]
pub enum Measure {
    Count,
    SumF32(Vec<f32>),
    SumF64(Vec<f64>),
}

impl Measure {
    pub fn elem(&self) -> ElemType {
        match self {
            Measure::Count => ElemType::Count,
            Measure::SumF32(_) => ElemType::F32,
            Measure::SumF64(_) => ElemType::F64,
        }
    }

    pub fn check_rows(&self, rows: usize) -> Result<()> {
        let len = match self {
            Measure::Count => return Ok(()),
            Measure::SumF32(v) => v.len(),
            Measure::SumF64(v) => v.len(),
        };
        if len != rows {
            return Err(CubeError::Shape(format!("{len} values for {rows} rows")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemType {
    Count,
    F32,
    F64,
}

impl ElemType {
    /// Exported (and DPU-resident) element size in bytes.
    pub fn size(self) -> usize {
        match self {
            ElemType::Count | ElemType::F32 => 4,
            ElemType::F64 => 8,
        }
    }

    fn tag(self) -> u8 {
        match self {
            ElemType::Count => 0,
            ElemType::F32 => 1,
            ElemType::F64 => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => ElemType::Count,
            1 => ElemType::F32,
            2 => ElemType::F64,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CubeCells {
    /// Counts accumulate in 64 bits.
    Count(Vec<i64>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl CubeCells {
    pub fn zeros(elem: ElemType, len: usize) -> Self {
        match elem {
            ElemType::Count => CubeCells::Count(vec![0; len]),
            ElemType::F32 => CubeCells::F32(vec![0.0; len]),
            ElemType::F64 => CubeCells::F64(vec![0.0; len]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CubeCells::Count(v) => v.len(),
            CubeCells::F32(v) => v.len(),
            CubeCells::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elem(&self) -> ElemType {
        match self {
            CubeCells::Count(_) => ElemType::Count,
            CubeCells::F32(_) => ElemType::F32,
            CubeCells::F64(_) => ElemType::F64,
        }
    }

    #[inline]
    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            CubeCells::Count(v) => v[i] as f64,
            CubeCells::F32(v) => v[i] as f64,
            CubeCells::F64(v) => v[i],
        }
    }
}

/// Dense `B x B x B` aggregate for one triple. Cell `(b0, b1, b2)` (bins
/// of the triple's dims in ascending dim order) lives at `((b0*B)+b1)*B+b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateCube {
    pub triple: Triple,
    pub num_bins: u32,
    pub cells: CubeCells,
}

impl AggregateCube {
    pub fn zeros(triple: Triple, num_bins: u32, elem: ElemType) -> Self {
        let b = num_bins as usize;
        Self {
            triple,
            num_bins,
            cells: CubeCells::zeros(elem, b * b * b),
        }
    }

    #[inline]
    pub fn index(&self, b0: u32, b1: u32, b2: u32) -> usize {
        cell_index(self.num_bins, b0, b1, b2)
    }

    pub fn total(&self) -> f64 {
        match &self.cells {
            CubeCells::Count(v) => v.iter().sum::<i64>() as f64,
            CubeCells::F32(v) => v.iter().map(|&x| x as f64).sum(),
            CubeCells::F64(v) => v.iter().sum(),
        }
    }

    /// Sum over the third axis: the 2D table of the first two dims,
    /// row-major `[b0][b1]`. Only meaningful for counts.
    pub fn marginal_01(&self) -> Vec<f64> {
        let b = self.num_bins as usize;
        let mut out = vec![0.0; b * b];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..b).map(|k| self.cells.get_f64(i * b + k)).sum();
        }
        out
    }

    /// Writes the compact binary form: magic `DVCB`, u16 version, u8 elem
    /// tag, u8 reserved, u32 B, 3 x u32 dims, then little-endian cells
    /// (counts as i64).
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CUBE_MAGIC)?;
        w.write_all(&CUBE_VERSION.to_le_bytes())?;
        w.write_all(&[self.cells.elem().tag(), 0])?;
        w.write_all(&self.num_bins.to_le_bytes())?;
        for d in self.triple.0 {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        match &self.cells {
            CubeCells::Count(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            CubeCells::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            CubeCells::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; 24];
        r.read_exact(&mut head)?;
        if &head[..4] != CUBE_MAGIC {
            return Err(CubeError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != CUBE_VERSION {
            return Err(CubeError::Format(format!("unsupported version {version}")));
        }
        let elem = ElemType::from_tag(head[6]).ok_or_else(|| CubeError::Format("bad elem tag".into()))?;
        let u32_at = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
        let num_bins = u32_at(8);
        let triple = Triple::new(u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize)?;
        let len = (num_bins as usize).pow(3);
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        let width = if elem == ElemType::F32 { 4 } else { 8 };
        if body.len() != len * width {
            return Err(CubeError::Format(format!("expected {} payload bytes, got {}", len * width, body.len())));
        }
        let cells = match elem {
            ElemType::Count => CubeCells::Count(body.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
            ElemType::F32 => CubeCells::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            ElemType::F64 => CubeCells::F64(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        Ok(Self { triple, num_bins, cells })
    }

    pub fn file_name(&self) -> String {
        let [a, b, c] = self.triple.0;
        format!("cube_{a}_{b}_{c}.bin")
    }
}

const CUBE_MAGIC: &[u8; 4] = b"DVCB";
const CUBE_VERSION: u16 = 1;

#[inline]
pub fn cell_index(num_bins: u32, b0: u32, b1: u32, b2: u32) -> usize {
    let b = num_bins as usize;
    (b0 as usize * b + b1 as usize) * b + b2 as usize
}
