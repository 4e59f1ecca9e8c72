//! Functional simulator of a processing-in-memory system running a
//! [`DpuAssignment`].
//!
//! Per iteration the host keeps one cursor per group and appends each row
//! to the buffer of unit `(group, common-dim bin, replica)`. A group stops
//! as soon as its next row would overflow a buffer; once every group has
//! stopped, the buffers are flushed and every unit processes its inbox in
//! WRAM-sized batches. Results are read back per unit and replicas are
//! summed on the host.
//!
//! Wire format (version [`TUPLE_FORMAT_VERSION`]): one byte per dimension
//! holding the bin, then the value in little endian (nothing for COUNT,
//! 4 bytes for `f32`, 8 for `f64`), zero padded to a multiple of 8 bytes.

use std::sync::mpsc::sync_channel;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::{AggregateCube, BinnedTable, CubeCells, CubeError, ElemType, Measure, Triple};
use crate::pim_plan::{assign_dpus, dpu_dist, DpuAssignment, IterationAssignment, MemoryBudget, PlanError};

pub const TUPLE_FORMAT_VERSION: u32 = 1;
/// Bins are sent as single bytes.
pub const MAX_WIRE_BINS: u32 = 256;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} bins do not fit the one-byte wire format")]
    TooManyBins(u32),
    #[error("DPU {dpu} (bin {expected}) received a tuple with common-dim bin {got}")]
    Misrouted { dpu: usize, expected: u32, got: u32 },
    #[error("replica shape mismatch: {0}")]
    ReplicaMismatch(String),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// Host blocks while units execute.
    #[default]
    Sync,
    /// Host fills the next batch while units process the current one.
    Async,
}

impl std::str::FromStr for ExecMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sync" => Ok(Self::Sync),
            "async" => Ok(Self::Async),
            other => Err(format!("unknown mode '{other}', expected sync or async")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PimConfig {
    pub dpu_count: usize,
    pub mram_bytes: u64,
    pub wram_bytes: u64,
    pub dpu_threads: usize,
    pub host_buffer_bytes: u64,
    pub wram_batch_bytes: u64,
    pub mode: ExecMode,
    /// When false only routing, transfers and counters are simulated and
    /// no cube memory is allocated.
    #[serde(default = "default_true")]
    pub materialize: bool,
}

fn default_true() -> bool {
    true
}

impl PimConfig {
    pub fn new(dpu_count: usize) -> Self {
        Self {
            dpu_count,
            mram_bytes: 64 << 20,
            wram_bytes: 64 << 10,
            dpu_threads: 24,
            host_buffer_bytes: 320 << 10,
            wram_batch_bytes: 32 << 10,
            mode: ExecMode::Sync,
            materialize: true,
        }
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn accounting_only(mut self) -> Self {
        self.materialize = false;
        self
    }

    pub fn budget(&self) -> MemoryBudget {
        MemoryBudget {
            mram_bytes: self.mram_bytes,
            host_buffer_bytes: self.host_buffer_bytes,
        }
    }

    pub fn validate(&self, record_bytes: usize) -> Result<()> {
        let fail = |m: String| Err(SimError::Config(m));
        if self.dpu_count == 0 {
            return fail("dpu_count must be positive".into());
        }
        if self.dpu_threads == 0 {
            return fail("dpu_threads must be positive".into());
        }
        if self.wram_batch_bytes > self.wram_bytes {
            return fail(format!(
                "wram_batch_bytes {} exceeds wram_bytes {}",
                self.wram_batch_bytes, self.wram_bytes
            ));
        }
        if self.wram_batch_bytes < record_bytes as u64 || self.host_buffer_bytes < record_bytes as u64 {
            return fail(format!("buffers cannot hold one {record_bytes}-byte tuple"));
        }
        Ok(())
    }
}

/// Encodes binned rows into fixed-size tuple records.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TupleCodec {
    pub num_dims: usize,
    pub elem: ElemType,
    pub record_bytes: usize,
}

impl TupleCodec {
    pub fn new(num_dims: usize, elem: ElemType) -> Self {
        let value = match elem {
            ElemType::Count => 0,
            ElemType::F32 => 4,
            ElemType::F64 => 8,
        };
        Self {
            num_dims,
            elem,
            record_bytes: (num_dims + value).div_ceil(8) * 8,
        }
    }

    #[inline]
    pub fn encode(&self, cols: &[&[u32]], measure: &Measure, row: usize, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend(cols.iter().map(|c| c[row] as u8));
        match measure {
            Measure::Count => {}
            Measure::SumF32(v) => out.extend_from_slice(&v[row].to_le_bytes()),
            Measure::SumF64(v) => out.extend_from_slice(&v[row].to_le_bytes()),
        }
        out.resize(start + self.record_bytes, 0);
    }

    #[inline]
    fn value_f32(&self, rec: &[u8]) -> f32 {
        f32::from_le_bytes(rec[self.num_dims..self.num_dims + 4].try_into().unwrap())
    }

    #[inline]
    fn value_f64(&self, rec: &[u8]) -> f64 {
        f64::from_le_bytes(rec[self.num_dims..self.num_dims + 8].try_into().unwrap())
    }
}

/// One triple held by a unit: a `B x B` slice over the two dims other
/// than the common one, indexed `x * B + y` with `x < y` as dim ids.
#[derive(Clone, Debug)]
struct LocalCube {
    triple: Triple,
    x: usize,
    y: usize,
    cells: Option<CubeCells>,
}

#[derive(Clone, Debug)]
pub struct DpuState {
    pub id: usize,
    pub common_dim: usize,
    pub bin: u32,
    pub replica: u32,
    locals: Vec<LocalCube>,
    wram: Vec<u8>,
    pub tuples_received: u64,
    pub bytes_in: u64,
    pub wram_batches: u64,
}

impl DpuState {
    fn new(id: usize, common_dim: usize, bin: u32, replica: u32, triples: &[Triple], elem: ElemType, cells: Option<usize>) -> Self {
        let locals = triples
            .iter()
            .map(|&t| {
                let mut others = t.0.iter().copied().filter(|&d| d != common_dim);
                let (x, y) = (others.next().unwrap(), others.next().unwrap());
                LocalCube {
                    triple: t,
                    x,
                    y,
                    cells: cells.map(|n| CubeCells::zeros(elem, n)),
                }
            })
            .collect();
        Self {
            id,
            common_dim,
            bin,
            replica,
            locals,
            wram: Vec::new(),
            tuples_received: 0,
            bytes_in: 0,
            wram_batches: 0,
        }
    }

    /// Processes an inbox: stage up to a WRAM batch, then each logical
    /// thread applies the batch to its own contiguous run of triples.
    pub fn execute(&mut self, inbox: &[u8], codec: &TupleCodec, num_bins: u32, config: &PimConfig) -> Result<()> {
        let rec = codec.record_bytes;
        let batch_bytes = (config.wram_batch_bytes as usize / rec) * rec;
        let b = num_bins as usize;
        let threads = config.dpu_threads;
        let t = self.locals.len();
        for batch in inbox.chunks(batch_bytes) {
            self.wram.clear();
            self.wram.extend_from_slice(batch);
            self.wram_batches += 1;
            self.bytes_in += batch.len() as u64;
            for tuple in self.wram.chunks_exact(rec) {
                let got = tuple[self.common_dim] as u32;
                if got != self.bin {
                    return Err(SimError::Misrouted {
                        dpu: self.id,
                        expected: self.bin,
                        got,
                    });
                }
            }
            self.tuples_received += (batch.len() / rec) as u64;
            for w in 0..threads {
                let (lo, hi) = (w * t / threads, (w + 1) * t / threads);
                for local in &mut self.locals[lo..hi] {
                    let Some(cells) = local.cells.as_mut() else { continue };
                    for tuple in self.wram.chunks_exact(rec) {
                        let idx = tuple[local.x] as usize * b + tuple[local.y] as usize;
                        match cells {
                            CubeCells::Count(c) => c[idx] += 1,
                            CubeCells::F32(c) => c[idx] += codec.value_f32(tuple),
                            CubeCells::F64(c) => c[idx] += codec.value_f64(tuple),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_triples(&self) -> usize {
        self.locals.len()
    }
}

/// Cellwise sum of replica slices; a single replica is returned unchanged.
pub fn merge_replicas(replicas: &[&CubeCells]) -> Result<CubeCells> {
    let (first, rest) = replicas
        .split_first()
        .ok_or_else(|| SimError::ReplicaMismatch("no replicas".into()))?;
    let mut out = (*first).clone();
    for r in rest {
        if r.len() != out.len() || r.elem() != out.elem() {
            return Err(SimError::ReplicaMismatch(format!(
                "{:?}x{} vs {:?}x{}",
                out.elem(),
                out.len(),
                r.elem(),
                r.len()
            )));
        }
        match (&mut out, r) {
            (CubeCells::Count(a), CubeCells::Count(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            (CubeCells::F32(a), CubeCells::F32(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            (CubeCells::F64(a), CubeCells::F64(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            _ => unreachable!("element types checked"),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub groups: usize,
    pub replication: u32,
    pub active_dpus: usize,
    /// Tuples received per unit, indexed by unit id.
    pub dpu_tuples: Vec<u64>,
    /// Total tuples sent this iteration; equals `groups * rows`.
    pub deliveries: u64,
    pub flushes: u64,
    pub host_to_dpu_bytes: u64,
    pub dpu_to_host_bytes: u64,
    pub wram_batches: u64,
}

impl IterationStats {
    /// Max over min tuples per active unit; `None` if some unit got none.
    pub fn balance_ratio(&self) -> Option<f64> {
        let max = *self.dpu_tuples.iter().max()?;
        let min = *self.dpu_tuples.iter().min()?;
        (min > 0).then(|| max as f64 / min as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub mode: ExecMode,
    pub tuple_format_version: u32,
    pub record_bytes: usize,
    pub rows: usize,
    pub iterations: Vec<IterationStats>,
    pub host_fill_batches: u64,
    pub host_to_dpu_bytes: u64,
    pub dpu_to_host_bytes: u64,
    /// Unit cells folded into the final cubes on the host.
    pub cells_merged: u64,
    /// Worst per-iteration balance ratio; `None` if some unit idled.
    pub balance_ratio: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PimRun {
    /// Final cubes in lexicographic triple order; `None` in accounting mode.
    pub cubes: Option<Vec<AggregateCube>>,
    pub stats: RunStats,
    pub assignment: DpuAssignment,
}

/// Plans and runs all triples of `table`.
pub fn run(table: &BinnedTable, measure: &Measure, config: &PimConfig) -> Result<PimRun> {
    let plan = dpu_dist(table.num_dims(), table.num_bins, config.dpu_count)?;
    let assignment = assign_dpus(
        &plan,
        table.num_bins,
        config.dpu_count,
        measure.elem().size(),
        config.budget(),
    )?;
    run_assignment(table, measure, assignment, config)
}

pub fn run_assignment(
    table: &BinnedTable,
    measure: &Measure,
    assignment: DpuAssignment,
    config: &PimConfig,
) -> Result<PimRun> {
    table.validate()?;
    measure.check_rows(table.num_rows())?;
    if table.num_bins > MAX_WIRE_BINS {
        return Err(SimError::TooManyBins(table.num_bins));
    }
    if assignment.num_bins != table.num_bins {
        return Err(SimError::Config(format!(
            "assignment has {} bins, table has {}",
            assignment.num_bins, table.num_bins
        )));
    }
    let codec = TupleCodec::new(table.num_dims(), measure.elem());
    config.validate(codec.record_bytes)?;
    let all: Vec<Triple> = assignment
        .iterations
        .iter()
        .flat_map(|it| it.groups.iter().flat_map(|g| g.triples.iter().copied()))
        .collect();
    table.check_triples(&all)?;

    let mut stats = RunStats {
        mode: config.mode,
        tuple_format_version: TUPLE_FORMAT_VERSION,
        record_bytes: codec.record_bytes,
        rows: table.num_rows(),
        ..Default::default()
    };
    let mut cubes: Option<Vec<AggregateCube>> = config.materialize.then(|| {
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted
            .into_iter()
            .map(|t| AggregateCube::zeros(t, table.num_bins, measure.elem()))
            .collect()
    });

    for it in &assignment.iterations {
        let (it_stats, dpus) = run_iteration(table, measure, &codec, it, config)?;
        stats.host_fill_batches += it_stats.flushes;
        stats.host_to_dpu_bytes += it_stats.host_to_dpu_bytes;
        stats.dpu_to_host_bytes += it_stats.dpu_to_host_bytes;
        stats.cells_merged += dpus.iter().map(|d| (d.locals.len() * (table.num_bins as usize).pow(2)) as u64).sum::<u64>();
        if let Some(cubes) = cubes.as_mut() {
            gather(cubes, it, &dpus, table.num_bins)?;
        }
        stats.iterations.push(it_stats);
    }
    stats.balance_ratio = stats
        .iterations
        .iter()
        .map(IterationStats::balance_ratio)
        .try_fold(1.0f64, |acc, r| r.map(|r| acc.max(r)));
    Ok(PimRun {
        cubes,
        stats,
        assignment,
    })
}

struct GroupCursor {
    common_dim: usize,
    next_row: usize,
    /// Next replica per bin.
    next_replica: Vec<u32>,
}

/// Fills one round of buffers; each group advances until its next tuple
/// would overflow a buffer or its rows run out.
fn fill_round(
    cols: &[&[u32]],
    measure: &Measure,
    codec: &TupleCodec,
    cursors: &mut [GroupCursor],
    per_group: usize,
    replication: u32,
    capacity: usize,
) -> Vec<Vec<u8>> {
    let mut buffers = vec![Vec::new(); cursors.len() * per_group];
    let rows = cols.first().map_or(0, |c| c.len());
    buffers
        .par_chunks_mut(per_group)
        .zip(cursors.par_iter_mut())
        .for_each(|(bufs, cur)| {
            let common = cols[cur.common_dim];
            while cur.next_row < rows {
                let bin = common[cur.next_row] as usize;
                let replica = cur.next_replica[bin];
                let buf = &mut bufs[bin * replication as usize + replica as usize];
                if buf.len() + codec.record_bytes > capacity {
                    break;
                }
                codec.encode(cols, measure, cur.next_row, buf);
                cur.next_replica[bin] = (replica + 1) % replication;
                cur.next_row += 1;
            }
        });
    buffers
}

fn run_iteration(
    table: &BinnedTable,
    measure: &Measure,
    codec: &TupleCodec,
    it: &IterationAssignment,
    config: &PimConfig,
) -> Result<(IterationStats, Vec<DpuState>)> {
    let b = table.num_bins;
    let cells = config.materialize.then(|| (b as usize).pow(2));
    let mut dpus: Vec<DpuState> = it
        .slots
        .iter()
        .enumerate()
        .map(|(id, s)| {
            let group = &it.groups[s.group];
            DpuState::new(id, group.common_dim, s.bin, s.replica, &group.triples, codec.elem, cells)
        })
        .collect();
    let cols: Vec<&[u32]> = table.columns.iter().map(|c| c.bins.as_slice()).collect();
    let mut cursors: Vec<GroupCursor> = it
        .groups
        .iter()
        .map(|g| GroupCursor {
            common_dim: g.common_dim,
            next_row: 0,
            next_replica: vec![0; b as usize],
        })
        .collect();
    let per_group = b as usize * it.replication as usize;
    let capacity = (config.host_buffer_bytes as usize / codec.record_bytes) * codec.record_bytes;
    let rows = table.num_rows();
    let mut flushes = 0u64;

    let mut execute = |dpus: &mut Vec<DpuState>, buffers: Vec<Vec<u8>>| -> Result<()> {
        flushes += 1;
        dpus.par_iter_mut()
            .zip(buffers.par_iter())
            .try_for_each(|(d, inbox)| d.execute(inbox, codec, b, config))
    };

    match config.mode {
        ExecMode::Sync => {
            while cursors.iter().any(|c| c.next_row < rows) {
                let buffers = fill_round(&cols, measure, codec, &mut cursors, per_group, it.replication, capacity);
                execute(&mut dpus, buffers)?;
            }
        }
        ExecMode::Async => {
            std::thread::scope(|scope| -> Result<()> {
                let (tx, rx) = sync_channel::<Vec<Vec<u8>>>(1);
                let cols = &cols;
                let cursors = &mut cursors;
                scope.spawn(move || {
                    while cursors.iter().any(|c| c.next_row < rows) {
                        let buffers = fill_round(cols, measure, codec, cursors, per_group, it.replication, capacity);
                        if tx.send(buffers).is_err() {
                            break;
                        }
                    }
                });
                for buffers in rx {
                    execute(&mut dpus, buffers)?;
                }
                Ok(())
            })?;
        }
    }

    let elem_size = codec.elem.size() as u64;
    let stats = IterationStats {
        iteration: it.iteration,
        groups: it.groups.len(),
        replication: it.replication,
        active_dpus: dpus.len(),
        dpu_tuples: dpus.iter().map(|d| d.tuples_received).collect(),
        deliveries: dpus.iter().map(|d| d.tuples_received).sum(),
        flushes,
        host_to_dpu_bytes: dpus.iter().map(|d| d.bytes_in).sum(),
        dpu_to_host_bytes: dpus
            .iter()
            .map(|d| d.num_triples() as u64 * (b as u64).pow(2) * elem_size)
            .sum(),
        wram_batches: dpus.iter().map(|d| d.wram_batches).sum(),
    };
    Ok((stats, dpus))
}

/// Merges replicas of every (group, bin) slice and scatters them into the
/// final cubes.
fn gather(cubes: &mut [AggregateCube], it: &IterationAssignment, dpus: &[DpuState], num_bins: u32) -> Result<()> {
    let b = num_bins as usize;
    let f = it.replication;
    for (g, group) in it.groups.iter().enumerate() {
        for bin in 0..num_bins {
            let ids: Vec<usize> = (0..f).map(|r| it.dpu_id(num_bins, g, bin, r)).collect();
            for (k, &triple) in group.triples.iter().enumerate() {
                let replicas: Vec<&CubeCells> = ids
                    .iter()
                    .map(|&id| dpus[id].locals[k].cells.as_ref().expect("materialized"))
                    .collect();
                let merged = merge_replicas(&replicas)?;
                let local = &dpus[ids[0]].locals[k];
                debug_assert_eq!(local.triple, triple);
                let pos = cubes
                    .binary_search_by(|c| c.triple.cmp(&triple))
                    .map_err(|_| SimError::Config(format!("triple {triple} missing from output")))?;
                let cube = &mut cubes[pos];
                let common_pos = triple.position(group.common_dim).expect("group dim in triple");
                for x in 0..b {
                    for y in 0..b {
                        let mut coord = [0u32; 3];
                        coord[common_pos] = bin;
                        coord[triple.position(local.x).unwrap()] = x as u32;
                        coord[triple.position(local.y).unwrap()] = y as u32;
                        let dst = cube.index(coord[0], coord[1], coord[2]);
                        let src = x * b + y;
                        match (&mut cube.cells, &merged) {
                            (CubeCells::Count(d), CubeCells::Count(s)) => d[dst] = s[src],
                            (CubeCells::F32(d), CubeCells::F32(s)) => d[dst] = s[src],
                            (CubeCells::F64(d), CubeCells::F64(s)) => d[dst] = s[src],
                            _ => unreachable!("cube element type follows the measure"),
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
