//! Distribution of all `C(N,3)` triples over processing-in-memory units.
//!
//! The construction rests on the cyclic shift of a triple,
//! `shift((d0,d1,d2), s) = ((d0+s)%N, (d1+s)%N, (d2+s)%N)`, with triples
//! compared as sets:
//!
//! 1. [`group0`] picks one representative containing dimension 0 from
//!    every shift orbit, so shifting group 0 by `i` yields a group whose
//!    triples all contain `i` and no triple appears twice.
//! 2. [`even_dist_3d`] builds the `N` shifted groups (multiples of 3 get
//!    the extra `(0, N/3, 2N/3)` orbit spread over the first `N/3` groups).
//! 3. [`split`] handles `R < N` rows of units: triples touching `0..R`
//!    go to `R` groups, using [`even_dist_2d`] for the triples that have
//!    exactly one dimension `>= R`.
//! 4. [`dpu_dist`] recurses on the remaining `N-R` dimensions, producing
//!    one iteration per level.
//!
//! [`assign_dpus`] then splits each group into `B` subgroups (one per bin
//! of the common dimension), replicates subgroups over leftover units and
//! checks every unit's memory footprint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::Triple;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("{what} needs at least {min} dimensions, got {got}")]
    TooFewDimensions { what: &'static str, min: usize, got: usize },
    #[error("number of groups must be at least 1")]
    NoGroups,
    #[error("{dpus} DPUs cannot hold even one row of {bins} bins")]
    TooFewDpus { dpus: usize, bins: u32 },
    #[error("triple dimensions must be distinct mod {n}: {dims:?}")]
    NotDistinct { dims: [usize; 3], n: usize },
    #[error(
        "iteration {iteration} group {group}: aggregate footprint {footprint} B + buffer {buffer} B exceeds {limit} B of MRAM"
    )]
    MramExceeded {
        iteration: usize,
        group: usize,
        footprint: u64,
        buffer: u64,
        limit: u64,
    },
}

pub type Result<T, E = PlanError> = std::result::Result<T, E>;

/// An ordered triple of dimension ids taken mod `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShiftTriple {
    pub dims: [usize; 3],
    pub n: usize,
}

impl ShiftTriple {
    pub fn new(dims: [usize; 3], n: usize) -> Result<Self> {
        let d = dims.map(|x| x % n.max(1));
        if d[0] == d[1] || d[1] == d[2] || d[0] == d[2] {
            return Err(PlanError::NotDistinct { dims, n });
        }
        Ok(Self { dims: d, n })
    }

    pub fn shift(&self, s: usize) -> Self {
        Self {
            dims: self.dims.map(|d| (d + s) % self.n),
            n: self.n,
        }
    }

    pub fn sorted(&self) -> [usize; 3] {
        let mut d = self.dims;
        d.sort_unstable();
        d
    }

    /// Equality of the underlying dimension sets.
    pub fn set_eq(&self, other: &Self) -> bool {
        self.sorted() == other.sorted()
    }

    /// True if some shift maps `self` onto `other` as sets.
    pub fn shift_overlaps(&self, other: &Self) -> bool {
        (0..self.n).any(|s| self.shift(s).set_eq(other))
    }
}

fn sorted_shift(t: [usize; 3], s: usize, n: usize) -> [usize; 3] {
    let mut d = t.map(|x| (x + s) % n);
    d.sort_unstable();
    d
}

fn group0_raw(n: usize) -> Vec<[usize; 3]> {
    let mut group = Vec::new();
    for a in 1..n.saturating_sub(1) {
        for b in a + 1..n {
            if n.is_multiple_of(3) && a == n / 3 && b == 2 * (n / 3) {
                continue;
            }
            let t = [0, a, b];
            let overlap1 = sorted_shift(t, n - a, n);
            let overlap2 = sorted_shift(t, n - b, n);
            if t < overlap1 && t < overlap2 {
                group.push(t);
            }
        }
    }
    group
}

/// Group 0: `floor(C(N,3)/N)` triples `(0,a,b)`, no two of which shift-overlap.
pub fn group0(n: usize) -> Result<Vec<Triple>> {
    if n < 4 {
        return Err(PlanError::TooFewDimensions {
            what: "group0",
            min: 4,
            got: n,
        });
    }
    Ok(group0_raw(n).into_iter().map(Triple).collect())
}

/// `N` groups in shift representation (unsorted component order). Valid
/// for any `n >= 1`; small `n` just yields empty groups.
fn even_dist_3d_raw(n: usize) -> Vec<Vec<[usize; 3]>> {
    let g0 = group0_raw(n);
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let mut group: Vec<[usize; 3]> = g0.iter().map(|t| t.map(|d| (d + i) % n)).collect();
        if n.is_multiple_of(3) && i < n / 3 {
            group.push([0, n / 3, 2 * (n / 3)].map(|d| (d + i) % n));
        }
        groups.push(group);
    }
    groups
}

/// Distributes all `C(N,3)` triples into `N` groups; group `i` holds only
/// triples containing dimension `i`.
pub fn even_dist_3d(n: usize) -> Result<Vec<Vec<Triple>>> {
    if n < 4 {
        return Err(PlanError::TooFewDimensions {
            what: "even_dist_3d",
            min: 4,
            got: n,
        });
    }
    Ok(even_dist_3d_raw(n).into_iter().map(to_triples).collect())
}

fn to_triples(group: Vec<[usize; 3]>) -> Vec<Triple> {
    group
        .into_iter()
        .map(|[a, b, c]| Triple::new(a, b, c).expect("distinct by construction"))
        .collect()
}

fn even_dist_2d_raw(n: usize, front: bool) -> Vec<Vec<(usize, usize)>> {
    let base = if n < 2 { 0 } else { n * (n - 1) / 2 / n };
    (0..n)
        .map(|i| {
            // With odd n the base count already covers every pair.
            let extra = n.is_multiple_of(2) && ((i < n / 2 && front) || (i >= n / 2 && !front));
            let k = base + usize::from(extra);
            (1..=k).map(|j| (i, (i + j) % n)).collect()
        })
        .collect()
}

/// Distributes all `C(N,2)` pairs into `N` groups; group `i` holds only
/// pairs `(i, _)`. For even `N` the half-distance pairs go to the front
/// half of the groups when `front`, else to the back half.
pub fn even_dist_2d(n: usize, front: bool) -> Result<Vec<Vec<(usize, usize)>>> {
    if n < 2 {
        return Err(PlanError::TooFewDimensions {
            what: "even_dist_2d",
            min: 2,
            got: n,
        });
    }
    Ok(even_dist_2d_raw(n, front))
}

fn split_raw(n: usize, r: usize) -> Vec<Vec<[usize; 3]>> {
    if r >= n {
        return even_dist_3d_raw(n);
    }
    let mut groups = even_dist_3d_raw(r);
    for (dim, group) in groups.iter_mut().enumerate() {
        for i in r..n.saturating_sub(1) {
            for j in i + 1..n {
                group.push([dim, i, j]);
            }
        }
    }
    let front = even_dist_2d_raw(r, true);
    let back = even_dist_2d_raw(r, false);
    for (curr, dim) in (r..n).enumerate() {
        let pairs = if curr % 2 == 0 { &back } else { &front };
        for (i, group) in groups.iter_mut().enumerate() {
            for &(p, q) in &pairs[i] {
                group.push([p, q, dim]);
            }
        }
    }
    groups
}

/// Distributes every triple that touches dimensions `0..R` into `R`
/// groups (group `i` shares dimension `i`). With `R >= N` this is
/// [`even_dist_3d`] on `N` groups.
pub fn split(n: usize, r: usize) -> Result<Vec<Vec<Triple>>> {
    if r < 1 {
        return Err(PlanError::NoGroups);
    }
    if n < 3 {
        return Err(PlanError::TooFewDimensions {
            what: "split",
            min: 3,
            got: n,
        });
    }
    Ok(split_raw(n, r).into_iter().map(to_triples).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanGroup {
    /// The dimension every triple in this group contains.
    pub common_dim: usize,
    pub triples: Vec<Triple>,
}

/// One iteration of the recursive distribution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub iteration: usize,
    /// First dimension of this iteration's sub-problem.
    pub offset: usize,
    /// Dimensions in this iteration's sub-problem.
    pub num_dims: usize,
    pub groups: Vec<PlanGroup>,
}

impl GroupPlan {
    pub fn num_triples(&self) -> usize {
        self.groups.iter().map(|g| g.triples.len()).sum()
    }

    /// (min, max) group size.
    pub fn size_range(&self) -> (usize, usize) {
        let sizes = self.groups.iter().map(|g| g.triples.len());
        (sizes.clone().min().unwrap_or(0), sizes.max().unwrap_or(0))
    }
}

/// Plans all iterations for `n` dimensions, `num_bins` bins and `dpus`
/// units. Each iteration uses `R = dpus / num_bins` rows of units (or `n`
/// rows when `R >= n`); units beyond the nearest multiple of `num_bins`
/// idle.
pub fn dpu_dist(n: usize, num_bins: u32, dpus: usize) -> Result<Vec<GroupPlan>> {
    if n < 3 {
        return Err(PlanError::TooFewDimensions {
            what: "dpu_dist",
            min: 3,
            got: n,
        });
    }
    if num_bins == 0 || dpus < num_bins as usize {
        return Err(PlanError::TooFewDpus { dpus, bins: num_bins });
    }
    let rows = dpus / num_bins as usize;
    let mut iterations = Vec::new();
    let (mut remaining, mut offset) = (n, 0);
    loop {
        let groups = split_raw(remaining, rows)
            .into_iter()
            .enumerate()
            .map(|(i, g)| PlanGroup {
                common_dim: i + offset,
                triples: to_triples(g).into_iter().map(|t| t.offset(offset)).collect(),
            })
            .collect();
        iterations.push(GroupPlan {
            iteration: iterations.len(),
            offset,
            num_dims: remaining,
            groups,
        });
        if remaining <= rows || remaining - rows <= 2 {
            break;
        }
        remaining -= rows;
        offset += rows;
    }
    Ok(iterations)
}

/// Per-unit memory limits checked when assigning subgroups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBudget {
    pub mram_bytes: u64,
    pub host_buffer_bytes: u64,
}

impl Default for MemoryBudget {
    fn default() -> Self {
        Self {
            mram_bytes: 64 << 20,
            host_buffer_bytes: 320 << 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpuSlot {
    pub group: usize,
    /// Bin of the group's common dimension this unit accepts.
    pub bin: u32,
    pub replica: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationAssignment {
    pub iteration: usize,
    pub groups: Vec<PlanGroup>,
    /// Copies of every (group, bin) subgroup.
    pub replication: u32,
    /// Indexed by unit id; units past `slots.len()` idle this iteration.
    pub slots: Vec<DpuSlot>,
    /// Aggregate bytes held by each unit of a group, `|triples| * B^2 * elem`.
    pub group_footprints: Vec<u64>,
}

impl IterationAssignment {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn active_dpus(&self) -> usize {
        self.slots.len()
    }

    #[inline]
    pub fn dpu_id(&self, num_bins: u32, group: usize, bin: u32, replica: u32) -> usize {
        (group * num_bins as usize + bin as usize) * self.replication as usize + replica as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpuAssignment {
    pub num_bins: u32,
    pub dpu_count: usize,
    pub elem_size: usize,
    pub budget: MemoryBudget,
    pub iterations: Vec<IterationAssignment>,
}

impl DpuAssignment {
    pub fn max_footprint(&self) -> u64 {
        self.iterations
            .iter()
            .flat_map(|it| it.group_footprints.iter().copied())
            .max()
            .unwrap_or(0)
    }
}

/// Maps each (group, bin) subgroup of every iteration onto units,
/// replicating `floor(D / (R*B))` times, and rejects any unit whose
/// aggregates plus host buffer overflow MRAM.
pub fn assign_dpus(
    plan: &[GroupPlan],
    num_bins: u32,
    dpus: usize,
    elem_size: usize,
    budget: MemoryBudget,
) -> Result<DpuAssignment> {
    let b = num_bins as usize;
    let mut iterations = Vec::with_capacity(plan.len());
    for it in plan {
        let rows = it.groups.len();
        let needed = rows * b;
        if needed == 0 || dpus < needed {
            return Err(PlanError::TooFewDpus { dpus, bins: num_bins });
        }
        let replication = (dpus / needed) as u32;
        let mut group_footprints = Vec::with_capacity(rows);
        for (g, group) in it.groups.iter().enumerate() {
            let footprint = (group.triples.len() * b * b * elem_size) as u64;
            if footprint + budget.host_buffer_bytes > budget.mram_bytes {
                return Err(PlanError::MramExceeded {
                    iteration: it.iteration,
                    group: g,
                    footprint,
                    buffer: budget.host_buffer_bytes,
                    limit: budget.mram_bytes,
                });
            }
            group_footprints.push(footprint);
        }
        let mut slots = Vec::with_capacity(needed * replication as usize);
        for group in 0..rows {
            for bin in 0..num_bins {
                for replica in 0..replication {
                    slots.push(DpuSlot { group, bin, replica });
                }
            }
        }
        iterations.push(IterationAssignment {
            iteration: it.iteration,
            groups: it.groups.clone(),
            replication,
            slots,
            group_footprints,
        });
    }
    Ok(DpuAssignment {
        num_bins,
        dpu_count: dpus,
        elem_size,
        budget,
        iterations,
    })
}

/// Balance summary of one iteration, for plan dumps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationBalance {
    pub iteration: usize,
    pub groups: usize,
    pub triples: usize,
    pub min_group: usize,
    pub max_group: usize,
    pub replication: u32,
    pub active_dpus: usize,
    pub max_footprint_bytes: u64,
}

pub fn balance_report(assignment: &DpuAssignment) -> Vec<IterationBalance> {
    assignment
        .iterations
        .iter()
        .map(|it| {
            let sizes = it.groups.iter().map(|g| g.triples.len());
            IterationBalance {
                iteration: it.iteration,
                groups: it.groups.len(),
                triples: sizes.clone().sum(),
                min_group: sizes.clone().min().unwrap_or(0),
                max_group: sizes.max().unwrap_or(0),
                replication: it.replication,
                active_dpus: it.active_dpus(),
                max_footprint_bytes: it.group_footprints.iter().copied().max().unwrap_or(0),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::enumerate_triples;
    use std::collections::{BTreeSet, HashMap};

    /// Independent group-0 oracle: for each shift orbit of triples, keep the
    /// lexicographically smallest member that contains 0, skipping orbits
    /// shorter than `n` (the `(0, n/3, 2n/3)` orbit).
    fn group0_oracle(n: usize) -> Vec<[usize; 3]> {
        let mut chosen = BTreeSet::new();
        for t in enumerate_triples(n).unwrap() {
            let orbit: BTreeSet<[usize; 3]> = (0..n).map(|s| sorted_shift(t.0, s, n)).collect();
            if orbit.len() < n {
                continue;
            }
            chosen.insert(*orbit.iter().find(|o| o[0] == 0).unwrap());
        }
        chosen.into_iter().collect()
    }

    fn multiset(groups: impl IntoIterator<Item = Triple>) -> HashMap<Triple, usize> {
        let mut m = HashMap::new();
        for t in groups {
            *m.entry(t).or_default() += 1;
        }
        m
    }

    #[test]
    fn shift_examples() {
        let t = ShiftTriple::new([0, 1, 2], 5).unwrap();
        let s = t.shift(4);
        assert_eq!(s.dims, [4, 0, 1]);
        assert!(s.set_eq(&ShiftTriple::new([0, 1, 4], 5).unwrap()));
        assert_eq!(t.shift(0), t);
        assert!(t.shift(3).shift(5 - 3).set_eq(&t));
        assert!(ShiftTriple::new([1, 6, 2], 5).is_err());
    }

    #[test]
    fn group0_small_cases() {
        assert_eq!(group0(5).unwrap(), vec![Triple([0, 1, 2]), Triple([0, 1, 3])]);
        assert_eq!(group0(4).unwrap(), vec![Triple([0, 1, 2])]);
        let g6 = group0(6).unwrap();
        assert_eq!(g6.len(), 3);
        assert!(!g6.contains(&Triple([0, 2, 4])));
        assert!(group0(3).is_err());
    }

    #[test]
    fn group0_matches_orbit_oracle() {
        for n in 4..=33 {
            let got: Vec<[usize; 3]> = group0(n).unwrap().into_iter().map(|t| t.0).collect();
            assert_eq!(got, group0_oracle(n), "n={n}");
            let c3 = n * (n - 1) * (n - 2) / 6;
            assert_eq!(got.len(), c3 / n);
        }
    }

    #[test]
    fn group0_members_never_shift_overlap() {
        for n in 4..=20 {
            let g: Vec<ShiftTriple> = group0(n)
                .unwrap()
                .into_iter()
                .map(|t| ShiftTriple::new(t.0, n).unwrap())
                .collect();
            for i in 0..g.len() {
                for j in i + 1..g.len() {
                    assert!(!g[i].shift_overlaps(&g[j]), "n={n}: {:?} {:?}", g[i], g[j]);
                }
            }
        }
    }

    #[test]
    fn even_dist_3d_partitions_and_balances() {
        for n in 4..=33 {
            let groups = even_dist_3d(n).unwrap();
            assert_eq!(groups.len(), n);
            for (i, g) in groups.iter().enumerate() {
                assert!(g.iter().all(|t| t.contains(i)));
            }
            let all = multiset(groups.iter().flatten().copied());
            assert!(all.values().all(|&c| c == 1));
            assert_eq!(all.len(), enumerate_triples(n).unwrap().len());
            let min = groups.iter().map(Vec::len).min().unwrap();
            let max = groups.iter().map(Vec::len).max().unwrap();
            assert!(max - min <= 1);
        }
        let five = even_dist_3d(5).unwrap();
        assert!(five.iter().all(|g| g.len() == 2));
    }

    #[test]
    fn even_dist_3d_n24_sizes() {
        let sizes: Vec<usize> = even_dist_3d(24).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().filter(|&&s| s == 85).count(), 8);
        assert_eq!(sizes.iter().filter(|&&s| s == 84).count(), 16);
    }

    #[test]
    fn even_dist_2d_examples() {
        let front = even_dist_2d(4, true).unwrap();
        assert_eq!(
            front,
            vec![vec![(0, 1), (0, 2)], vec![(1, 2), (1, 3)], vec![(2, 3)], vec![(3, 0)]]
        );
        let back = even_dist_2d(4, false).unwrap();
        assert_eq!(back.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 1, 2, 2]);
        for n in 2..=16 {
            for flag in [true, false] {
                let groups = even_dist_2d(n, flag).unwrap();
                let mut pairs: Vec<(usize, usize)> = groups
                    .iter()
                    .flatten()
                    .map(|&(a, b)| (a.min(b), a.max(b)))
                    .collect();
                pairs.sort_unstable();
                let before = pairs.len();
                pairs.dedup();
                assert_eq!(before, pairs.len(), "n={n} duplicates");
                assert_eq!(pairs.len(), n * (n - 1) / 2);
            }
        }
    }

    #[test]
    fn split_n8_r4() {
        let groups = split(8, 4).unwrap();
        assert_eq!(groups.len(), 4);
        assert!(groups.iter().all(|g| g.len() == 13));
        let all = multiset(groups.iter().flatten().copied());
        assert_eq!(all.len(), 52);
        assert!(all.keys().all(|t| t.0[0] < 4));
        assert_eq!(split(5, 5).unwrap(), even_dist_3d(5).unwrap());
        assert_eq!(split(5, 0), Err(PlanError::NoGroups));
    }

    #[test]
    fn split_spread_even_remainder() {
        for n in 5..=20 {
            for r in 1..n {
                if (n - r) % 2 != 0 {
                    continue;
                }
                let sizes: Vec<usize> = split(n, r).unwrap().iter().map(Vec::len).collect();
                let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
                assert!(spread <= 1, "n={n} r={r} sizes={sizes:?}");
            }
        }
    }

    #[test]
    fn dpu_dist_examples() {
        let plan = dpu_dist(8, 128, 512).unwrap();
        assert_eq!(plan.len(), 2);
        assert!(plan[0].groups.iter().all(|g| g.triples.len() == 13));
        assert!(plan[1].groups.iter().all(|g| g.triples.len() == 1));
        assert!(plan[1].groups.iter().flat_map(|g| &g.triples).all(|t| t.0[0] >= 4));
        assert_eq!(plan[1].groups.iter().map(|g| g.common_dim).collect::<Vec<_>>(), vec![4, 5, 6, 7]);

        let plan = dpu_dist(16, 128, 2048).unwrap();
        assert_eq!(plan.len(), 1);
        assert!(plan[0].groups.iter().all(|g| g.triples.len() == 35));

        // 6 dims with 4 rows leaves 2 dims: no further iteration needed.
        let plan = dpu_dist(6, 2, 8).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].num_triples(), 20);

        assert!(matches!(dpu_dist(8, 128, 100), Err(PlanError::TooFewDpus { .. })));
    }

    #[test]
    fn dpu_dist_partitions_every_triple() {
        for n in 4..=20 {
            for r in 1..=n {
                let plan = dpu_dist(n, 2, 2 * r + 1).unwrap();
                let all = multiset(plan.iter().flat_map(|p| p.groups.iter().flat_map(|g| g.triples.clone())));
                assert!(all.values().all(|&c| c == 1), "n={n} r={r}");
                assert_eq!(all.len(), n * (n - 1) * (n - 2) / 6, "n={n} r={r}");
                for it in &plan {
                    for g in &it.groups {
                        assert!(g.triples.iter().all(|t| t.contains(g.common_dim)));
                    }
                }
            }
        }
    }

    #[test]
    fn assignment_replication_and_footprints() {
        let plan = dpu_dist(16, 128, 2048).unwrap();
        let a = assign_dpus(&plan, 128, 2048, 4, MemoryBudget::default()).unwrap();
        assert_eq!(a.iterations[0].replication, 1);
        assert_eq!(a.iterations[0].active_dpus(), 2048);
        let it = &a.iterations[0];
        let mut seen = vec![false; 2048];
        for g in 0..16 {
            for b in 0..128 {
                let id = it.dpu_id(128, g, b, 0);
                assert_eq!(it.slots[id], DpuSlot { group: g, bin: b, replica: 0 });
                assert!(!seen[id]);
                seen[id] = true;
            }
        }

        let plan = dpu_dist(8, 128, 2048).unwrap();
        let a = assign_dpus(&plan, 128, 2048, 4, MemoryBudget::default()).unwrap();
        assert_eq!(a.iterations[0].groups.len(), 8);
        assert_eq!(a.iterations[0].replication, 2);
        assert_eq!(a.iterations[0].active_dpus(), 2048);

        let plan = dpu_dist(32, 128, 4096).unwrap();
        let a = assign_dpus(&plan, 128, 4096, 4, MemoryBudget::default()).unwrap();
        assert_eq!(a.max_footprint(), 155 * 128 * 128 * 4);
    }

    #[test]
    fn assignment_rejects_oversized_plans() {
        let plan = dpu_dist(32, 256, 256).unwrap();
        let err = assign_dpus(&plan, 256, 256, 4, MemoryBudget::default()).unwrap_err();
        match err {
            PlanError::MramExceeded { footprint, limit, .. } => {
                assert_eq!(footprint, 465 * 256 * 256 * 4);
                assert_eq!(limit, 64 << 20);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
