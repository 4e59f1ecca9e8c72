//! Equidepth binning of one dimension into `B` bins.
//!
//! Two routes produce a [`BinnedColumn`]:
//!
//! * [`bin_exact`] sorts the analyzed rows and gives sorted position `p`
//!   bin `p / ceil(n / B)`. A frequent value may span several bins.
//! * [`bin_approx`] never sorts. It histograms the preprocessed ranks into
//!   `2^20` buckets keyed by the upper rank bits, turns the histogram into a
//!   bucket-to-bin map by prefix counting, and looks every row up again.
//!
//! [`bin_dimension`] picks the route and falls back to the exact path for
//! subsets smaller than `1/2^13` of the preprocessed dataset.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DimValue};

/// Number of upper rank bits used to index the histogram.
pub const HISTO_BITS: u32 = 20;
pub const HISTO_SIZE: usize = 1 << HISTO_BITS;
/// Subsets smaller than `total >> APPROX_MIN_FRACTION_BITS` rows are binned exactly.
pub const APPROX_MIN_FRACTION_BITS: u32 = 13;

const PARALLEL_CHUNK: usize = 1 << 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BinError {
    #[error("bin count must be at least 2, got {0}")]
    TooFewBins(u32),
    #[error("{bins} bins requested for only {tuples} tuples")]
    MoreBinsThanTuples { bins: u32, tuples: usize },
    #[error("empty row subset")]
    EmptySubset,
    #[error("subset of {num_tuples} rows is below 1/2^13 of {total_num_tuples}; use exact binning")]
    BelowApproxThreshold {
        num_tuples: usize,
        total_num_tuples: usize,
    },
    #[error("subset has {num_tuples} rows but the dataset only has {total_num_tuples}")]
    SubsetTooLarge {
        num_tuples: usize,
        total_num_tuples: usize,
    },
    #[error("rank {rank} out of range for {total_num_tuples} tuples")]
    RankOutOfRange { rank: u32, total_num_tuples: usize },
    #[error("unknown dimension {0}")]
    UnknownDimension(usize),
    #[error("dimension {0} has no sorted index; run preprocessing first")]
    NotPreprocessed(usize),
    #[error("row {0} out of range")]
    RowOutOfRange(u32),
    #[error("no saved bucket bounds")]
    NoBucketBounds,
}

pub type Result<T, E = BinError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinnedColumn {
    pub dim: usize,
    pub num_bins: u32,
    /// One bin per analyzed row, in the row order the caller supplied.
    pub bins: Vec<u32>,
}

impl BinnedColumn {
    /// Tuples per bin.
    pub fn populations(&self) -> Vec<usize> {
        let mut pop = vec![0usize; self.num_bins as usize];
        for &b in &self.bins {
            pop[b as usize] += 1;
        }
        pop
    }
}

fn check_bins(num_bins: u32, tuples: usize) -> Result<()> {
    if num_bins < 2 {
        return Err(BinError::TooFewBins(num_bins));
    }
    if tuples == 0 {
        return Err(BinError::EmptySubset);
    }
    if num_bins as usize > tuples {
        return Err(BinError::MoreBinsThanTuples {
            bins: num_bins,
            tuples,
        });
    }
    Ok(())
}

/// Bin of sorted position `pos` when `tuples_per_bin = ceil(n / B)`.
#[inline]
fn bin_of_position(pos: usize, tuples_per_bin: usize) -> u32 {
    (pos / tuples_per_bin) as u32
}

/// Exact equidepth binning of `rows` along `dim` by a stable sort.
pub fn bin_exact(ds: &Dataset, dim: usize, rows: &[u32], num_bins: u32) -> Result<BinnedColumn> {
    check_bins(num_bins, rows.len())?;
    let spec = ds.dim(dim).map_err(|_| BinError::UnknownDimension(dim))?;
    if let Some(&bad) = rows.iter().find(|&&r| r as usize >= ds.row_count) {
        return Err(BinError::RowOutOfRange(bad));
    }
    // Sort positions into `rows` rather than row ids so duplicated ids keep
    // their own slot.
    let mut order: Vec<u32> = (0..rows.len() as u32).collect();
    order.sort_by(|&a, &b| {
        ds.compare_rows(spec, rows[a as usize] as usize, rows[b as usize] as usize)
            .then_with(|| rows[a as usize].cmp(&rows[b as usize]))
    });
    let tuples_per_bin = rows.len().div_ceil(num_bins as usize);
    let mut bins = vec![0u32; rows.len()];
    for (pos, &slot) in order.iter().enumerate() {
        bins[slot as usize] = bin_of_position(pos, tuples_per_bin);
    }
    Ok(BinnedColumn { dim, num_bins, bins })
}

/// Rank histogram keyed by the upper [`HISTO_BITS`] bits of each rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    pub buckets: Vec<u32>,
    pub idx_bits: u32,
    pub shift: u32,
}

impl Histogram {
    /// Empty histogram sized for ranks in `0..total_num_tuples`. For
    /// datasets under `2^20` rows the shift clamps to 0 and the histogram
    /// shrinks to `2^idx_bits` buckets.
    pub fn for_total(total_num_tuples: usize) -> Self {
        let idx_bits = idx_bits(total_num_tuples);
        let shift = idx_bits.saturating_sub(HISTO_BITS);
        let size = 1usize << idx_bits.min(HISTO_BITS);
        Self {
            buckets: vec![0; size],
            idx_bits,
            shift,
        }
    }

    #[inline]
    pub fn bucket_of(&self, rank: u32) -> usize {
        (rank >> self.shift) as usize
    }

    /// Pass 1: count ranks per bucket. Large inputs are split into chunks
    /// with private histograms merged afterwards.
    pub fn count(&mut self, ranks: &[u32]) {
        if ranks.len() <= PARALLEL_CHUNK {
            for &r in ranks {
                let b = self.bucket_of(r);
                self.buckets[b] += 1;
            }
            return;
        }
        let shift = self.shift;
        let size = self.buckets.len();
        let merged = ranks
            .par_chunks(PARALLEL_CHUNK)
            .fold(
                || vec![0u32; size],
                |mut h, chunk| {
                    for &r in chunk {
                        h[(r >> shift) as usize] += 1;
                    }
                    h
                },
            )
            .reduce(
                || vec![0u32; size],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            );
        for (x, y) in self.buckets.iter_mut().zip(merged) {
            *x += y;
        }
    }

    /// Pass 2: replace each bucket count by the bin index of the first
    /// tuple in that bucket, `seen / tuples_per_bin`.
    pub fn into_bin_map(mut self, num_tuples: usize, num_bins: u32) -> BucketBinMap {
        let tuples_per_bin = num_tuples.div_ceil(num_bins as usize) as u64;
        let mut seen = 0u64;
        for bucket in self.buckets.iter_mut() {
            let in_bucket = *bucket as u64;
            *bucket = (seen / tuples_per_bin) as u32;
            seen += in_bucket;
        }
        BucketBinMap {
            bins: self.buckets,
            shift: self.shift,
        }
    }

    pub fn max_occupancy(&self) -> u32 {
        self.buckets.iter().copied().max().unwrap_or(0)
    }
}

/// Histogram after pass 2: bucket index to bin index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BucketBinMap {
    pub bins: Vec<u32>,
    pub shift: u32,
}

impl BucketBinMap {
    #[inline]
    pub fn bin_of_rank(&self, rank: u32) -> u32 {
        self.bins[(rank >> self.shift) as usize]
    }
}

/// `ceil(log2(total))`, with `idx_bits(1) == 0`.
pub fn idx_bits(total_num_tuples: usize) -> u32 {
    if total_num_tuples <= 1 {
        0
    } else {
        usize::BITS - (total_num_tuples - 1).leading_zeros()
    }
}

/// True when a subset is too small for the histogram route.
pub fn below_approx_threshold(num_tuples: usize, total_num_tuples: usize) -> bool {
    (num_tuples as u128) << APPROX_MIN_FRACTION_BITS < total_num_tuples as u128
}

/// Approximate binning from preprocessed ranks of the analyzed subset.
/// `ranks.len()` is the subset size.
pub fn bin_approx(
    dim: usize,
    ranks: &[u32],
    total_num_tuples: usize,
    num_bins: u32,
) -> Result<BinnedColumn> {
    let (binned, _) = approx_with_map(dim, ranks, total_num_tuples, num_bins)?;
    Ok(binned)
}

fn approx_with_map(
    dim: usize,
    ranks: &[u32],
    total_num_tuples: usize,
    num_bins: u32,
) -> Result<(BinnedColumn, BucketBinMap)> {
    let num_tuples = ranks.len();
    check_bins(num_bins, num_tuples)?;
    if num_tuples > total_num_tuples {
        return Err(BinError::SubsetTooLarge {
            num_tuples,
            total_num_tuples,
        });
    }
    if below_approx_threshold(num_tuples, total_num_tuples) {
        return Err(BinError::BelowApproxThreshold {
            num_tuples,
            total_num_tuples,
        });
    }
    if let Some(&rank) = ranks.iter().find(|&&r| r as usize >= total_num_tuples) {
        return Err(BinError::RankOutOfRange {
            rank,
            total_num_tuples,
        });
    }
    let mut hist = Histogram::for_total(total_num_tuples);
    hist.count(ranks);
    let map = hist.into_bin_map(num_tuples, num_bins);
    let bins = if ranks.len() > PARALLEL_CHUNK {
        ranks.par_iter().map(|&r| map.bin_of_rank(r)).collect()
    } else {
        ranks.iter().map(|&r| map.bin_of_rank(r)).collect()
    };
    Ok((BinnedColumn { dim, num_bins, bins }, map))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinMethod {
    Exact,
    Approximate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinOutcome {
    pub column: BinnedColumn,
    /// The route actually taken; an approximate request below the size
    /// threshold reports `Exact`.
    pub method: BinMethod,
}

/// Bins one dimension over `rows`, routing small subsets to the exact path.
pub fn bin_dimension(
    ds: &Dataset,
    dim: usize,
    rows: &[u32],
    num_bins: u32,
    method: BinMethod,
) -> Result<BinOutcome> {
    if method == BinMethod::Approximate {
        let ranks = ds.ranks(dim).ok_or(BinError::NotPreprocessed(dim))?;
        let subset = subset_ranks(ranks, rows)?;
        match bin_approx(dim, &subset, ds.row_count, num_bins) {
            Ok(column) => {
                return Ok(BinOutcome {
                    column,
                    method: BinMethod::Approximate,
                })
            }
            Err(BinError::BelowApproxThreshold { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(BinOutcome {
        column: bin_exact(ds, dim, rows, num_bins)?,
        method: BinMethod::Exact,
    })
}

fn subset_ranks(ranks: &[u32], rows: &[u32]) -> Result<Vec<u32>> {
    rows.iter()
        .map(|&r| ranks.get(r as usize).copied().ok_or(BinError::RowOutOfRange(r)))
        .collect()
}

/// Inclusive (min, max) of the original dimension values in one bin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinRange {
    pub lo: DimValue,
    pub hi: DimValue,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinBoundaries {
    pub dim: usize,
    pub name: String,
    /// `None` marks an empty bin.
    pub ranges: Vec<Option<BinRange>>,
}

/// Per-bin min/max of the original values. `rows` must be the row subset
/// `binned` was computed over, in the same order.
pub fn bin_boundaries(ds: &Dataset, rows: &[u32], binned: &BinnedColumn) -> Result<BinBoundaries> {
    let spec = ds.dim(binned.dim).map_err(|_| BinError::UnknownDimension(binned.dim))?;
    let mut extremes: Vec<Option<(u32, u32)>> = vec![None; binned.num_bins as usize];
    for (&row, &bin) in rows.iter().zip(&binned.bins) {
        if row as usize >= ds.row_count {
            return Err(BinError::RowOutOfRange(row));
        }
        let slot = &mut extremes[bin as usize];
        *slot = Some(match *slot {
            None => (row, row),
            Some((lo, hi)) => {
                let lo = if ds.compare_rows(spec, row as usize, lo as usize) == Ordering::Less {
                    row
                } else {
                    lo
                };
                let hi = if ds.compare_rows(spec, row as usize, hi as usize) == Ordering::Greater {
                    row
                } else {
                    hi
                };
                (lo, hi)
            }
        });
    }
    Ok(BinBoundaries {
        dim: binned.dim,
        name: spec.name.clone(),
        ranges: extremes
            .into_iter()
            .map(|e| {
                e.map(|(lo, hi)| BinRange {
                    lo: ds.dim_value(spec, lo as usize),
                    hi: ds.dim_value(spec, hi as usize),
                })
            })
            .collect(),
    })
}

/// One nonempty histogram bucket remembered for later inserts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketEntry {
    pub bucket: u32,
    /// Original value of the first row (in scan order) that entered the bucket.
    pub first_value: DimValue,
    pub bin: u32,
    pub count: u64,
}

/// Bucket boundaries saved from an approximate binning pass, sorted by
/// bucket index. Only nonempty buckets are kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketBounds {
    pub dim: usize,
    pub num_bins: u32,
    pub entries: Vec<BucketEntry>,
}

/// Approximate binning that also records the bucket boundaries needed by
/// [`absorb_insert`].
pub fn bin_approx_with_bounds(
    ds: &Dataset,
    dim: usize,
    rows: &[u32],
    num_bins: u32,
) -> Result<(BinnedColumn, BucketBounds)> {
    let spec = ds.dim(dim).map_err(|_| BinError::UnknownDimension(dim))?;
    let ranks = ds.ranks(dim).ok_or(BinError::NotPreprocessed(dim))?;
    let subset = subset_ranks(ranks, rows)?;
    let (binned, map) = approx_with_map(dim, &subset, ds.row_count, num_bins)?;

    let mut first: Vec<Option<(u32, u64)>> = vec![None; map.bins.len()];
    for (&row, &rank) in rows.iter().zip(&subset) {
        let b = (rank >> map.shift) as usize;
        match &mut first[b] {
            Some((_, count)) => *count += 1,
            slot @ None => *slot = Some((row, 1)),
        }
    }
    let entries = first
        .into_iter()
        .enumerate()
        .filter_map(|(bucket, f)| {
            f.map(|(row, count)| BucketEntry {
                bucket: bucket as u32,
                first_value: ds.dim_value(spec, row as usize),
                bin: map.bins[bucket],
                count,
            })
        })
        .collect();
    Ok((
        binned,
        BucketBounds {
            dim,
            num_bins,
            entries,
        },
    ))
}

/// Assigns bins to newly inserted values using saved bucket bounds: the
/// rightmost bucket whose first value is `<=` the new value, or bucket 0
/// (bin 0) when the value precedes every saved bucket. Bucket counts are
/// updated; previously binned rows are untouched.
pub fn absorb_insert(
    ds: &Dataset,
    bounds: Option<&mut BucketBounds>,
    values: &[DimValue],
) -> Result<Vec<u32>> {
    let bounds = bounds.ok_or(BinError::NoBucketBounds)?;
    if bounds.entries.is_empty() {
        return Err(BinError::NoBucketBounds);
    }
    let spec = ds
        .dim(bounds.dim)
        .map_err(|_| BinError::UnknownDimension(bounds.dim))?
        .clone();
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        let idx = bounds
            .entries
            .partition_point(|e| ds.compare_dim_values(&spec, &e.first_value, v) != Ordering::Greater);
        if idx == 0 {
            out.push(0);
        } else {
            let entry = &mut bounds.entries[idx - 1];
            entry.count += 1;
            out.push(entry.bin);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnData, ColumnKind, ColumnSchema, Value};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn float_dataset(values: Vec<f64>) -> Dataset {
        let mut ds = Dataset::from_columns(
            vec![ColumnSchema::new("v", ColumnKind::Float64)],
            vec![ColumnData::Float64(values.into_iter().map(Some).collect())],
        )
        .unwrap();
        ds.preprocess().unwrap();
        ds
    }

    fn int_dataset(values: &[i64]) -> Dataset {
        let mut ds = Dataset::from_columns(
            vec![ColumnSchema::new("v", ColumnKind::Integer)],
            vec![ColumnData::Integer(values.iter().map(|&v| Some(v)).collect())],
        )
        .unwrap();
        ds.preprocess().unwrap();
        ds
    }

    fn all_rows(n: usize) -> Vec<u32> {
        (0..n as u32).collect()
    }

    #[test]
    fn exact_hundred_bins_one_per_position() {
        let ds = float_dataset((0..100).rev().map(f64::from).collect());
        let b = bin_exact(&ds, 0, &all_rows(100), 100).unwrap();
        for (row, &bin) in b.bins.iter().enumerate() {
            assert_eq!(bin as usize, 99 - row);
        }
    }

    #[test]
    fn exact_frequent_value_spans_bins() {
        let ds = int_dataset(&[1, 1, 1, 1, 2, 2, 3, 4]);
        let b = bin_exact(&ds, 0, &all_rows(8), 4).unwrap();
        assert_eq!(b.bins, vec![0, 0, 1, 1, 2, 2, 3, 3]);
        let ds = int_dataset(&[5; 8]);
        let b = bin_exact(&ds, 0, &all_rows(8), 4).unwrap();
        assert_eq!(b.bins, vec![0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn exact_rejects_bad_bin_counts() {
        let ds = int_dataset(&[1, 2, 3]);
        assert_eq!(
            bin_exact(&ds, 0, &all_rows(3), 4),
            Err(BinError::MoreBinsThanTuples { bins: 4, tuples: 3 })
        );
        assert_eq!(bin_exact(&ds, 0, &all_rows(3), 1), Err(BinError::TooFewBins(1)));
        assert_eq!(bin_exact(&ds, 0, &[], 2), Err(BinError::EmptySubset));
    }

    #[test]
    fn idx_bits_and_histogram_sizing() {
        assert_eq!(idx_bits(1), 0);
        assert_eq!(idx_bits(2), 1);
        assert_eq!(idx_bits(1000), 10);
        assert_eq!(idx_bits(1 << 20), 20);
        assert_eq!(idx_bits((1 << 20) + 1), 21);
        let h = Histogram::for_total(1000);
        assert_eq!((h.buckets.len(), h.shift), (1024, 0));
        let h = Histogram::for_total(1 << 22);
        assert_eq!((h.buckets.len(), h.shift), (HISTO_SIZE, 2));
    }

    #[test]
    fn tuples_per_bin_uses_ceiling() {
        // 1000 tuples into 128 bins: ceil = 8, so position 999 lands in bin 124.
        let ranks: Vec<u32> = (0..1000).collect();
        let b = bin_approx(0, &ranks, 1000, 128).unwrap();
        assert_eq!(b.bins[7], 0);
        assert_eq!(b.bins[8], 1);
        assert_eq!(b.bins[999], 124);
    }

    #[test]
    fn approx_equals_exact_when_buckets_hold_single_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1 << 10;
        let ds = float_dataset((0..n).map(|_| rng.gen::<f64>()).collect());
        let ranks = ds.ranks(0).unwrap().to_vec();
        for bins in [2, 7, 64, 128, 1000] {
            let approx = bin_approx(0, &ranks, n, bins).unwrap();
            let exact = bin_exact(&ds, 0, &all_rows(n), bins).unwrap();
            assert_eq!(approx, exact, "B={bins}");
        }
    }

    #[test]
    fn threshold_signal_and_automatic_fallback() {
        assert!(below_approx_threshold(1, 1 << 14));
        assert!(!below_approx_threshold(2, 1 << 14));
        assert!(!below_approx_threshold(2, (1 << 14) - 1));
        let ranks: Vec<u32> = vec![3, 9];
        assert_eq!(
            bin_approx(0, &ranks, (1 << 14) + 1, 2),
            Err(BinError::BelowApproxThreshold {
                num_tuples: 2,
                total_num_tuples: (1 << 14) + 1
            })
        );

        let n: usize = 1 << 15;
        let ds = float_dataset((0..n as u32).map(f64::from).collect());
        let rows: Vec<u32> = vec![5, 100, 3];
        let out = bin_dimension(&ds, 0, &rows, 2, BinMethod::Approximate).unwrap();
        assert_eq!(out.method, BinMethod::Exact);
        assert_eq!(out.column.bins, vec![0, 1, 0]);
        let out = bin_dimension(&ds, 0, &all_rows(n), 4, BinMethod::Approximate).unwrap();
        assert_eq!(out.method, BinMethod::Approximate);
    }

    #[test]
    fn approx_with_shift_stays_close_to_target() {
        // 2^22 total ranks so each bucket spans 4 ranks; bin a random half.
        let total = 1usize << 22;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ranks: Vec<u32> = (0..total as u32).filter(|_| rng.gen_bool(0.5)).collect();
        let bins = 128;
        let b = bin_approx(0, &ranks, total, bins).unwrap();
        let tpb = ranks.len().div_ceil(bins as usize);
        let mut hist = Histogram::for_total(total);
        hist.count(&ranks);
        let max_bucket = hist.max_occupancy() as usize;
        assert!(max_bucket <= 4);
        for &p in &b.populations() {
            assert!(p <= tpb + max_bucket, "population {p} > {tpb} + {max_bucket}");
        }
        let mut pairs: Vec<(u32, u32)> = ranks.iter().copied().zip(b.bins.iter().copied()).collect();
        pairs.sort_unstable();
        assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn boundaries_report_min_max_per_bin() {
        let ds = int_dataset(&[9, 1, 2, 1]);
        let rows = all_rows(4);
        let b = bin_exact(&ds, 0, &rows, 2).unwrap();
        let bounds = bin_boundaries(&ds, &rows, &b).unwrap();
        let single = |v| DimValue::Single(Value::Int(v));
        assert_eq!(
            bounds.ranges,
            vec![
                Some(BinRange { lo: single(1), hi: single(1) }),
                Some(BinRange { lo: single(2), hi: single(9) }),
            ]
        );
    }

    #[test]
    fn boundaries_mark_empty_bins() {
        let ds = int_dataset(&[1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let rows = all_rows(9);
        // ceil(9/4) = 3 so bin 3 is never used.
        let b = bin_exact(&ds, 0, &rows, 4).unwrap();
        let bounds = bin_boundaries(&ds, &rows, &b).unwrap();
        assert!(bounds.ranges[3].is_none());
        assert!(bounds.ranges[..3].iter().all(Option::is_some));
    }

    #[test]
    fn boundaries_of_composite_report_pairs() {
        let mut ds = Dataset::from_columns(
            vec![
                ColumnSchema::new("tip", ColumnKind::Float64),
                ColumnSchema::new("time", ColumnKind::Integer),
            ],
            vec![
                ColumnData::Float64(vec![Some(0.0), Some(0.0), Some(2.0), Some(1.0)]),
                ColumnData::Integer(vec![Some(5), Some(3), Some(1), Some(8)]),
            ],
        )
        .unwrap();
        let c = ds.make_composite(0, 1).unwrap();
        ds.preprocess().unwrap();
        let rows = all_rows(4);
        let b = bin_exact(&ds, c.id, &rows, 2).unwrap();
        let bounds = bin_boundaries(&ds, &rows, &b).unwrap();
        assert_eq!(
            bounds.ranges[0],
            Some(BinRange {
                lo: DimValue::Pair(Value::Float(0.0), Value::Int(3)),
                hi: DimValue::Pair(Value::Float(0.0), Value::Int(5)),
            })
        );
    }

    #[test]
    fn insert_lookup_edges() {
        let ds = int_dataset(&(0..64).map(|v| v * 10).collect::<Vec<_>>());
        let (_, mut bounds) = bin_approx_with_bounds(&ds, 0, &all_rows(64), 4).unwrap();
        let single = |v| DimValue::Single(Value::Int(v));
        let bins = absorb_insert(&ds, Some(&mut bounds), &[single(-5), single(320), single(325), single(10_000)]).unwrap();
        // value 320 equals the first value of rank-32's bucket -> bin 32/16 = 2
        assert_eq!(bins, vec![0, 2, 2, 3]);
        assert!(absorb_insert(&ds, None, &[single(1)]).is_err());
    }

    #[test]
    fn bucket_first_values_nondecreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ds = float_dataset((0..5000).map(|_| rng.gen_range(0.0..10.0)).collect());
        let (_, bounds) = bin_approx_with_bounds(&ds, 0, &all_rows(5000), 16).unwrap();
        let spec = ds.dim(0).unwrap();
        assert!(bounds
            .entries
            .windows(2)
            .all(|w| ds.compare_dim_values(spec, &w[0].first_value, &w[1].first_value) != Ordering::Greater));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn exact_populations_and_monotonicity(values in proptest::collection::vec(0i64..20, 4..300), bins in 2u32..12) {
                prop_assume!(bins as usize <= values.len());
                let ds = int_dataset(&values);
                let rows = all_rows(values.len());
                let b = bin_exact(&ds, 0, &rows, bins).unwrap();
                let tpb = values.len().div_ceil(bins as usize);
                let pop = b.populations();
                let used = pop.iter().rposition(|&p| p > 0).unwrap();
                for (i, &p) in pop.iter().enumerate() {
                    if i < used { prop_assert_eq!(p, tpb); }
                    if i == used { prop_assert!(p >= 1 && p <= tpb); }
                    if i > used { prop_assert_eq!(p, 0); }
                }
                let ranks = ds.ranks(0).unwrap();
                for i in 0..values.len() {
                    for j in 0..values.len() {
                        if ranks[i] < ranks[j] { prop_assert!(b.bins[i] <= b.bins[j]); }
                    }
                }
            }

            #[test]
            fn approx_monotone_and_bounded(seed in any::<u64>(), keep in 0.2f64..1.0, bins in 2u32..64) {
                let total = 1usize << 21;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let ranks: Vec<u32> = (0..total as u32).step_by(7).filter(|_| rng.gen_bool(keep)).collect();
                prop_assume!(ranks.len() >= bins as usize);
                let b = bin_approx(0, &ranks, total, bins).unwrap();
                let mut h = Histogram::for_total(total);
                h.count(&ranks);
                let bound = ranks.len().div_ceil(bins as usize) + h.max_occupancy() as usize;
                prop_assert!(b.populations().iter().all(|&p| p <= bound));
                // ranks ascending, so bins must be too
                prop_assert!(b.bins.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}
