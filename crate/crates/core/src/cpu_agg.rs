//! CPU computation of all triple cubes.
//!
//! [`aggregate_record_major`] is the straightforward reference: one pass
//! over the rows, each row updating every cube. [`CpuAggregator`] swaps
//! the loops: each (triple, slab) task owns a disjoint slice of one cube
//! and scans the input on its own, so threads never share output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{AggregateCube, BinnedTable, CubeCells, CubeError, Measure, Result, Triple};

/// Reference implementation: rows outer, triples inner.
pub fn aggregate_record_major(
    table: &BinnedTable,
    measure: &Measure,
    triples: &[Triple],
) -> Result<Vec<AggregateCube>> {
    table.validate()?;
    table.check_triples(triples)?;
    measure.check_rows(table.num_rows())?;
    let b = table.num_bins;
    let mut cubes: Vec<AggregateCube> = triples
        .iter()
        .map(|&t| AggregateCube::zeros(t, b, measure.elem()))
        .collect();
    let cols: Vec<&[u32]> = table.columns.iter().map(|c| c.bins.as_slice()).collect();
    for row in 0..table.num_rows() {
        for cube in cubes.iter_mut() {
            let [d0, d1, d2] = cube.triple.0;
            let idx = cube.index(cols[d0][row], cols[d1][row], cols[d2][row]);
            match (&mut cube.cells, measure) {
                (CubeCells::Count(c), Measure::Count) => c[idx] += 1,
                (CubeCells::F32(c), Measure::SumF32(v)) => c[idx] += v[row],
                (CubeCells::F64(c), Measure::SumF64(v)) => c[idx] += v[row],
                _ => unreachable!("cube element type follows the measure"),
            }
        }
    }
    Ok(cubes)
}

/// Scan-major aggregation settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpuAggregator {
    /// Number of contiguous slabs along the first dim's bin axis; each slab
    /// costs one extra scan of the input.
    pub partitions: u32,
    /// Worker threads; 0 uses the global rayon pool.
    pub threads: usize,
}

impl Default for CpuAggregator {
    fn default() -> Self {
        Self {
            partitions: 1,
            threads: 0,
        }
    }
}

impl CpuAggregator {
    pub fn new(partitions: u32, threads: usize) -> Self {
        Self { partitions, threads }
    }

    fn check(&self, num_bins: u32) -> Result<()> {
        if self.partitions == 0 || !num_bins.is_multiple_of(self.partitions) {
            return Err(CubeError::BadPartitions {
                partitions: self.partitions,
                num_bins,
            });
        }
        Ok(())
    }

    pub fn aggregate(
        &self,
        table: &BinnedTable,
        measure: &Measure,
        triples: &[Triple],
    ) -> Result<Vec<AggregateCube>> {
        self.check(table.num_bins)?;
        table.validate()?;
        table.check_triples(triples)?;
        measure.check_rows(table.num_rows())?;
        let run = || aggregate_scan_major(table, measure, triples, self.partitions);
        if self.threads == 0 {
            Ok(run())
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.threads)
                .build()
                .map_err(|e| CubeError::Shape(format!("thread pool: {e}")))?;
            Ok(pool.install(run))
        }
    }
}

/// Loop-swapped aggregation over validated input. Every (triple, slab)
/// pair is an independent task writing its own slice of the output.
fn aggregate_scan_major(
    table: &BinnedTable,
    measure: &Measure,
    triples: &[Triple],
    partitions: u32,
) -> Vec<AggregateCube> {
    let b = table.num_bins as usize;
    let slab_bins = b / partitions as usize;
    let slab_len = slab_bins * b * b;
    let mut cubes: Vec<AggregateCube> = triples
        .iter()
        .map(|&t| AggregateCube::zeros(t, table.num_bins, measure.elem()))
        .collect();
    cubes.par_iter_mut().for_each(|cube| {
        let [d0, d1, d2] = cube.triple.0;
        let (c0, c1, c2) = (table.column(d0), table.column(d1), table.column(d2));
        let range = |slab: usize| {
            let lo = (slab * slab_bins) as u32;
            (lo, lo + slab_bins as u32)
        };
        match (&mut cube.cells, measure) {
            (CubeCells::Count(cells), Measure::Count) => {
                cells.par_chunks_mut(slab_len).enumerate().for_each(|(slab, out)| {
                    let (lo, hi) = range(slab);
                    scan_slab(c0, c1, c2, b, lo, hi, |i, _| out[i] += 1);
                })
            }
            (CubeCells::F32(cells), Measure::SumF32(v)) => {
                cells.par_chunks_mut(slab_len).enumerate().for_each(|(slab, out)| {
                    let (lo, hi) = range(slab);
                    scan_slab(c0, c1, c2, b, lo, hi, |i, row| out[i] += v[row]);
                })
            }
            (CubeCells::F64(cells), Measure::SumF64(v)) => {
                cells.par_chunks_mut(slab_len).enumerate().for_each(|(slab, out)| {
                    let (lo, hi) = range(slab);
                    scan_slab(c0, c1, c2, b, lo, hi, |i, row| out[i] += v[row]);
                })
            }
            _ => unreachable!("cube element type follows the measure"),
        }
    });
    cubes
}

#[inline]
fn scan_slab<F: FnMut(usize, usize)>(
    c0: &[u32],
    c1: &[u32],
    c2: &[u32],
    b: usize,
    lo: u32,
    hi: u32,
    mut update: F,
) {
    for row in 0..c0.len() {
        let b0 = c0[row];
        if b0 >= lo && b0 < hi {
            let local = (((b0 - lo) as usize * b) + c1[row] as usize) * b + c2[row] as usize;
            update(local, row);
        }
    }
}

/// Runs scan-major once per candidate partition count and returns the
/// fastest along with every timing in seconds. Results are not compared.
pub fn autotune_partitions(
    table: &BinnedTable,
    measure: &Measure,
    triples: &[Triple],
    candidates: &[u32],
    threads: usize,
) -> Result<(u32, Vec<(u32, f64)>)> {
    let mut timings = Vec::new();
    for &p in candidates {
        if !table.num_bins.is_multiple_of(p) {
            continue;
        }
        let start = std::time::Instant::now();
        CpuAggregator::new(p, threads).aggregate(table, measure, triples)?;
        timings.push((p, start.elapsed().as_secs_f64()));
    }
    let best = timings
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|t| t.0)
        .ok_or(CubeError::BadPartitions {
            partitions: 0,
            num_bins: table.num_bins,
        })?;
    Ok((best, timings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::enumerate_triples;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_table(n: usize, dims: usize, bins: u32, seed: u64) -> BinnedTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BinnedTable::from_bins(
            bins,
            (0..dims).map(|_| (0..n).map(|_| rng.gen_range(0..bins)).collect()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_tuple_single_cell() {
        let b = 8;
        let table = BinnedTable::from_bins(b, vec![vec![2], vec![3], vec![4]]).unwrap();
        let cubes = aggregate_record_major(&table, &Measure::Count, &[Triple([0, 1, 2])]).unwrap();
        let CubeCells::Count(cells) = &cubes[0].cells else { panic!() };
        let idx = (2 * b as usize + 3) * b as usize + 4;
        assert_eq!(cells[idx], 1);
        assert_eq!(cells.iter().sum::<i64>(), 1);
    }

    #[test]
    fn all_rows_in_bin_zero() {
        let table = BinnedTable::from_bins(4, vec![vec![0; 50]; 4]).unwrap();
        let triples = enumerate_triples(4).unwrap();
        for cube in aggregate_record_major(&table, &Measure::Count, &triples).unwrap() {
            let CubeCells::Count(cells) = &cube.cells else { panic!() };
            assert_eq!(cells[0], 50);
        }
    }

    #[test]
    fn record_major_matches_scan_major() {
        let table = random_table(10_000, 5, 16, 1);
        let triples = enumerate_triples(5).unwrap();
        let reference = aggregate_record_major(&table, &Measure::Count, &triples).unwrap();
        for p in [1, 2, 4, 8, 16] {
            let got = CpuAggregator::new(p, 2).aggregate(&table, &Measure::Count, &triples).unwrap();
            assert_eq!(got, reference, "P={p}");
        }
    }

    #[test]
    fn float_sums_bit_identical_across_partitions() {
        let table = random_table(20_000, 4, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f32> = (0..20_000).map(|_| rng.gen_range(0.0..100.0)).collect();
        let m = Measure::SumF32(values);
        let triples = enumerate_triples(4).unwrap();
        let reference = aggregate_record_major(&table, &m, &triples).unwrap();
        for p in [1, 2, 4] {
            let got = CpuAggregator::new(p, 0).aggregate(&table, &m, &triples).unwrap();
            for (a, b) in got.iter().zip(&reference) {
                let (CubeCells::F32(x), CubeCells::F32(y)) = (&a.cells, &b.cells) else { panic!() };
                assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }

    #[test]
    fn partitions_must_divide_bins() {
        let table = random_table(10, 3, 6, 3);
        let err = CpuAggregator::new(4, 1).aggregate(&table, &Measure::Count, &[Triple([0, 1, 2])]);
        assert!(matches!(err, Err(CubeError::BadPartitions { partitions: 4, num_bins: 6 })));
    }

    #[test]
    fn out_of_range_bin_is_error() {
        let table = BinnedTable::from_bins(4, vec![vec![0], vec![9], vec![1]]).unwrap();
        assert!(matches!(
            aggregate_record_major(&table, &Measure::Count, &[Triple([0, 1, 2])]),
            Err(CubeError::BinOutOfRange { .. })
        ));
    }

    #[test]
    fn marginals_agree_across_triples() {
        let table = random_table(5_000, 5, 8, 4);
        let triples = enumerate_triples(5).unwrap();
        let cubes = CpuAggregator::new(2, 0).aggregate(&table, &Measure::Count, &triples).unwrap();
        for c in &cubes {
            assert_eq!(c.total(), 5_000.0);
        }
        // (0,1) appears as the leading pair of (0,1,2), (0,1,3), (0,1,4)
        let m = cubes[0].marginal_01();
        for c in cubes.iter().filter(|c| c.triple.0[0] == 0 && c.triple.0[1] == 1) {
            assert_eq!(c.marginal_01(), m);
        }
    }

    #[test]
    fn autotune_reports_each_candidate() {
        let table = random_table(2_000, 3, 8, 5);
        let (best, timings) =
            autotune_partitions(&table, &Measure::Count, &[Triple([0, 1, 2])], &[1, 2, 3, 4], 1).unwrap();
        assert_eq!(timings.iter().map(|t| t.0).collect::<Vec<_>>(), vec![1, 2, 4]);
        assert!([1, 2, 4].contains(&best));
    }
}
