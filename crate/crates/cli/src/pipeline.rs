//! Stages (bin, aggregate, render, rank) and the end-to-end job runner.
//!
//! A job lives in `<root>/jobs/<id>/` where `id` is derived from the
//! normalized request and the dataset fingerprint, so identical requests
//! on identical data share one directory. The directory is assembled
//! under a temporary name and renamed once `manifest.json` is written.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use divan_core::binning::{bin_boundaries, bin_dimension, BinBoundaries, BinMethod};
use divan_core::cpu_agg::{autotune_partitions, CpuAggregator};
use divan_core::cube::{enumerate_triples, AggSpec, AggregateCube, BinnedTable, Measure};
use divan_core::dataset::{Dataset, RowFilter, ValueWidth};
use divan_core::pim_plan::{balance_report, IterationBalance};
use divan_core::pim_sim::{self, ExecMode, PimConfig, RunStats};
use divan_core::rank::{rank, RankOptions, ScoredImage};
use divan_core::viz::{image_group, write_image};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::formats::{
    bin_bytes, boundaries_file, read_cube, read_cube_meta, write_binned, write_cubes, write_json, BinnedData,
    BinnedDim, BinnedMeta, CubeDirMeta, Manifest, ManifestDimension, ManifestGroup, ManifestImage, BINNED_FORMAT,
    CUBES_FORMAT, FORMAT_VERSION, MANIFEST_FORMAT,
};

/// Bin counts accepted unless a request sets `any_bins`.
pub const DEFAULT_BIN_POLICY: [u32; 4] = [32, 64, 128, 256];

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "function", rename_all = "lowercase")]
pub enum AggRequest {
    #[default]
    Count,
    Sum {
        column: String,
        #[serde(default = "default_sum_width")]
        width: ValueWidth,
    },
}

fn default_sum_width() -> ValueWidth {
    ValueWidth::Float64
}

impl AggRequest {
    /// Parses `count`, `sum:<column>`, or `sum:<column>:f32|f64`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["count"] => Ok(Self::Count),
            ["sum", column] => Ok(Self::Sum {
                column: column.to_string(),
                width: ValueWidth::Float64,
            }),
            ["sum", column, w] => Ok(Self::Sum {
                column: column.to_string(),
                width: match *w {
                    "f32" | "float32" => ValueWidth::Float32,
                    "f64" | "float64" => ValueWidth::Float64,
                    other => bail!("unknown sum width '{other}'"),
                },
            }),
            _ => bail!("aggregate must be count, sum:<column> or sum:<column>:f32|f64, got '{s}'"),
        }
    }

    pub fn spec(&self, ds: &Dataset) -> Result<AggSpec> {
        Ok(match self {
            Self::Count => AggSpec::count(),
            Self::Sum { column, width } => AggSpec::sum(ds.column_id(column)?, *width)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BackendRequest {
    Cpu {
        #[serde(default = "one")]
        partitions: u32,
        #[serde(default)]
        threads: usize,
    },
    PimSim {
        dpus: usize,
        #[serde(default)]
        mode: ExecMode,
    },
}

fn one() -> u32 {
    1
}

impl Default for BackendRequest {
    fn default() -> Self {
        Self::Cpu {
            partitions: 1,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    /// Preprocessed dataset directory.
    pub dataset: PathBuf,
    /// Dataset dimension ids to analyze.
    pub dims: Vec<usize>,
    #[serde(default)]
    pub agg: AggRequest,
    pub bins: u32,
    #[serde(default)]
    pub backend: BackendRequest,
    /// z partitions per image group.
    #[serde(default = "default_partitions")]
    pub partitions: u32,
    #[serde(default = "default_per_group")]
    pub per_group: usize,
    #[serde(default = "default_top_groups")]
    pub top_groups: usize,
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    #[serde(default)]
    pub reverse: bool,
    /// Row filter such as `fare>=10,passengers==2`.
    #[serde(default)]
    pub filter: Option<String>,
    #[serde(default)]
    pub exact: bool,
    /// Lifts the default bin-count policy.
    #[serde(default)]
    pub any_bins: bool,
}

fn default_partitions() -> u32 {
    4
}
fn default_per_group() -> usize {
    RankOptions::default().per_group
}
fn default_top_groups() -> usize {
    RankOptions::default().top_groups
}
fn default_penalty() -> f64 {
    RankOptions::default().penalty
}

impl JobRequest {
    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 3 {
            bail!("at least 3 dimensions are required, got {}", self.dims.len());
        }
        let mut sorted = self.dims.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            bail!("dimension list has duplicates: {:?}", self.dims);
        }
        if !self.any_bins && !DEFAULT_BIN_POLICY.contains(&self.bins) {
            bail!("bins must be one of {DEFAULT_BIN_POLICY:?} (set any_bins to override), got {}", self.bins);
        }
        if self.bins < 2 {
            bail!("bins must be at least 2");
        }
        if self.partitions == 0 || !self.bins.is_multiple_of(self.partitions) {
            bail!("partitions {} must divide bins {}", self.partitions, self.bins);
        }
        if self.per_group == 0 || self.top_groups == 0 {
            bail!("per_group and top_groups must be at least 1");
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            bail!("penalty must be a finite non-negative factor");
        }
        match self.backend {
            BackendRequest::Cpu { partitions, .. } if partitions == 0 || !self.bins.is_multiple_of(partitions) => {
                bail!("cpu partitions {partitions} must divide bins {}", self.bins)
            }
            BackendRequest::PimSim { .. } if self.bins > pim_sim::MAX_WIRE_BINS => {
                bail!("pim-sim supports at most {} bins", pim_sim::MAX_WIRE_BINS)
            }
            _ => Ok(()),
        }
    }

    pub fn normalized(&self) -> Self {
        let mut r = self.clone();
        r.dims.sort_unstable();
        r.filter = r.filter.map(|f| f.trim().to_string()).filter(|f| !f.is_empty());
        r
    }

    /// Content address of the normalized request on a dataset with the
    /// given fingerprint. The dataset path itself is not part of it.
    pub fn job_id(&self, fingerprint: &str) -> String {
        let mut r = self.normalized();
        r.dataset = PathBuf::new();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&r).expect("request serializes"));
        h.update(b"\0");
        h.update(fingerprint.as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    pub fn rank_options(&self) -> RankOptions {
        RankOptions {
            per_group: self.per_group,
            top_groups: self.top_groups,
            penalty: self.penalty,
            reverse: self.reverse,
        }
    }
}

pub fn select_rows(ds: &Dataset, filter: Option<&str>) -> Result<Vec<u32>> {
    match filter.map(str::trim).filter(|f| !f.is_empty()) {
        Some(f) => {
            let rows = RowFilter::parse(f)?.apply(ds)?;
            if rows.is_empty() {
                bail!("filter '{f}' selects no rows");
            }
            Ok(rows)
        }
        None => Ok((0..ds.row_count as u32).collect()),
    }
}

/// Bins `dims` (dataset dimension ids) over the filtered rows.
pub fn bin_stage(
    ds: &Dataset,
    dataset_dir: &Path,
    dims: &[usize],
    num_bins: u32,
    method: BinMethod,
    filter: Option<&str>,
) -> Result<(BinnedData, Vec<BinBoundaries>)> {
    let rows = select_rows(ds, filter)?;
    let mut columns = Vec::with_capacity(dims.len());
    let mut meta_dims = Vec::with_capacity(dims.len());
    let mut boundaries = Vec::with_capacity(dims.len());
    for (id, &d) in dims.iter().enumerate() {
        let spec = ds.dim(d)?;
        let outcome = bin_dimension(ds, d, &rows, num_bins, method).with_context(|| format!("dimension {d}"))?;
        boundaries.push(bin_boundaries(ds, &rows, &outcome.column)?);
        meta_dims.push(BinnedDim {
            id,
            dataset_dim: d,
            name: spec.name.clone(),
            method: outcome.method,
        });
        columns.push(outcome.column);
    }
    let meta = BinnedMeta {
        format: BINNED_FORMAT.into(),
        version: FORMAT_VERSION,
        dataset: dataset_dir.to_path_buf(),
        dataset_fingerprint: Dataset::fingerprint(dataset_dir).unwrap_or_default(),
        num_bins,
        num_rows: rows.len(),
        bin_bytes: bin_bytes(num_bins),
        filter: filter.map(str::to_string),
        dims: meta_dims,
    };
    Ok((
        BinnedData {
            meta,
            table: BinnedTable::new(columns)?,
            rows,
        },
        boundaries,
    ))
}

/// What the aggregation backend reports, written as `stats.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case")]
pub enum AggregateReport {
    Cpu {
        partitions: u32,
        threads: usize,
        seconds: f64,
        /// (partitions, seconds) per autotune candidate.
        autotune: Option<Vec<(u32, f64)>>,
    },
    PimSim {
        dpus: usize,
        seconds: f64,
        stats: RunStats,
        plan: Vec<IterationBalance>,
    },
}

pub struct AggregateOutput {
    /// Empty for accounting-only simulator runs.
    pub cubes: Vec<AggregateCube>,
    pub report: AggregateReport,
}

#[derive(Clone, Debug)]
pub enum Backend {
    Cpu {
        partitions: u32,
        threads: usize,
        autotune: bool,
    },
    PimSim(PimConfig),
}

impl From<&BackendRequest> for Backend {
    fn from(b: &BackendRequest) -> Self {
        match *b {
            BackendRequest::Cpu { partitions, threads } => Backend::Cpu {
                partitions,
                threads,
                autotune: false,
            },
            BackendRequest::PimSim { dpus, mode } => Backend::PimSim(PimConfig::new(dpus).with_mode(mode)),
        }
    }
}

pub fn aggregate_stage(table: &BinnedTable, measure: &Measure, backend: &Backend) -> Result<AggregateOutput> {
    let triples = enumerate_triples(table.num_dims())?;
    let start = Instant::now();
    match backend {
        Backend::Cpu {
            partitions,
            threads,
            autotune,
        } => {
            let (partitions, timings) = if *autotune {
                let candidates: Vec<u32> = [1, 2, 4, 8].into_iter().filter(|p| table.num_bins.is_multiple_of(*p)).collect();
                let (best, t) = autotune_partitions(table, measure, &triples, &candidates, *threads)?;
                (best, Some(t))
            } else {
                (*partitions, None)
            };
            let start = Instant::now();
            let cubes = CpuAggregator::new(partitions, *threads).aggregate(table, measure, &triples)?;
            Ok(AggregateOutput {
                cubes,
                report: AggregateReport::Cpu {
                    partitions,
                    threads: *threads,
                    seconds: start.elapsed().as_secs_f64(),
                    autotune: timings,
                },
            })
        }
        Backend::PimSim(config) => {
            let run = pim_sim::run(table, measure, config)?;
            Ok(AggregateOutput {
                cubes: run.cubes.unwrap_or_default(),
                report: AggregateReport::PimSim {
                    dpus: config.dpu_count,
                    seconds: start.elapsed().as_secs_f64(),
                    plan: balance_report(&run.assignment),
                    stats: run.stats,
                },
            })
        }
    }
}

pub fn cube_meta(binned: &BinnedMeta, out: &AggregateOutput, measure: &Measure, backend: &Backend) -> CubeDirMeta {
    CubeDirMeta {
        format: CUBES_FORMAT.into(),
        version: FORMAT_VERSION,
        num_bins: binned.num_bins,
        elem: measure.elem(),
        backend: match backend {
            Backend::Cpu { .. } => "cpu".into(),
            Backend::PimSim(_) => "pim-sim".into(),
        },
        dims: binned.dims.clone(),
        triples: out.cubes.iter().map(|c| c.triple).collect(),
    }
}

/// Renders every cube in `cubes_dir` into `k` images per z choice under
/// `<out>/images` and returns an unranked manifest.
pub fn render_stage(cubes_dir: &Path, out: &Path, k: u32, job_id: &str, config: serde_json::Value) -> Result<Manifest> {
    let meta = read_cube_meta(cubes_dir)?;
    if k == 0 || meta.num_bins % k != 0 {
        bail!("partitions {k} must divide bins {}", meta.num_bins);
    }
    let images_dir = out.join("images");
    fs::create_dir_all(&images_dir).with_context(|| format!("creating {}", images_dir.display()))?;
    let mut images = Vec::new();
    for &t in &meta.triples {
        let cube = read_cube(cubes_dir, t)?;
        for img in image_group(&cube, k)? {
            let side = write_image(&img, &images_dir)?;
            images.push(ManifestImage {
                url: format!("/api/images/{job_id}--{}", side.id),
                file: format!("images/{}", side.file),
                sidecar: format!("images/{}.json", side.id),
                id: side.id,
                triple: side.triple,
                x_dim: side.x_dim,
                y_dim: side.y_dim,
                z_dim: side.z_dim,
                z_range: side.z_range,
                score: side.score,
                degenerate: side.degenerate,
                group: [side.x_dim.min(side.y_dim), side.x_dim.max(side.y_dim)],
                rank: None,
                effective_score: None,
            });
        }
    }
    Ok(Manifest {
        format: MANIFEST_FORMAT.into(),
        version: FORMAT_VERSION,
        job_id: job_id.into(),
        config,
        num_bins: meta.num_bins,
        partitions: k,
        dimensions: meta
            .dims
            .iter()
            .map(|d| ManifestDimension {
                id: d.id,
                dataset_dim: d.dataset_dim,
                name: d.name.clone(),
                bins: format!("bins/{}", boundaries_file(d.id)),
            })
            .collect(),
        images,
        groups: Vec::new(),
        ranking: None,
        stats: None,
    })
}

/// Fills the manifest's presentation order from image scores.
pub fn rank_manifest(manifest: &mut Manifest, opts: &RankOptions) {
    let scored: Vec<ScoredImage> = manifest
        .images
        .iter()
        .map(|m| ScoredImage {
            id: m.id.clone(),
            triple: m.triple,
            x_dim: m.x_dim,
            y_dim: m.y_dim,
            z_dim: m.z_dim,
            z_lo: m.z_range[0],
            score: m.score,
            degenerate: m.degenerate,
        })
        .collect();
    let ranked = rank(&scored, opts);
    let index: std::collections::HashMap<String, usize> =
        manifest.images.iter().enumerate().map(|(i, m)| (m.id.clone(), i)).collect();
    for img in &mut manifest.images {
        img.rank = None;
        img.effective_score = None;
    }
    let mut position = 0;
    manifest.groups = ranked
        .into_iter()
        .map(|g| {
            let ids = g
                .images
                .iter()
                .map(|r| {
                    let m = &mut manifest.images[index[&r.id]];
                    m.rank = Some(position);
                    m.effective_score = Some(r.effective_score);
                    position += 1;
                    r.id.clone()
                })
                .collect();
            ManifestGroup {
                key: [g.key.0, g.key.1],
                score: g.score,
                images: ids,
            }
        })
        .collect();
    manifest.ranking = Some(*opts);
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub job_id: String,
    pub job_dir: PathBuf,
    pub manifest: Manifest,
    pub cache_hit: bool,
}

pub fn jobs_dir(root: &Path) -> PathBuf {
    root.join("jobs")
}

/// Runs bin, aggregate, render and rank for `req` under `root/jobs`.
/// An existing manifest for the same job id is returned as a cache hit.
pub fn run_pipeline(req: &JobRequest, root: &Path) -> Result<PipelineOutcome> {
    req.validate().context("stage validate")?;
    let req = req.normalized();
    let fingerprint = Dataset::fingerprint(&req.dataset)
        .with_context(|| format!("stage load: {} is not a preprocessed dataset", req.dataset.display()))?;
    let job_id = req.job_id(&fingerprint);
    let jobs = jobs_dir(root);
    let job_dir = jobs.join(&job_id);
    let manifest_path = job_dir.join("manifest.json");
    if manifest_path.exists() {
        return Ok(PipelineOutcome {
            manifest: crate::formats::read_manifest(&manifest_path)?,
            job_id,
            job_dir,
            cache_hit: true,
        });
    }

    let tmp = jobs.join(format!(".tmp-{job_id}-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).with_context(|| format!("clearing {}", tmp.display()))?;
    }
    fs::create_dir_all(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    let result = build_job(&req, &job_id, &tmp);
    let manifest = match result {
        Ok(m) => m,
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
    };
    if let Err(e) = fs::rename(&tmp, &job_dir) {
        // Another run finished the same job first.
        let _ = fs::remove_dir_all(&tmp);
        if !manifest_path.exists() {
            return Err(e).with_context(|| format!("publishing {}", job_dir.display()));
        }
    }
    Ok(PipelineOutcome {
        job_id,
        job_dir,
        manifest,
        cache_hit: false,
    })
}

fn build_job(req: &JobRequest, job_id: &str, dir: &Path) -> Result<Manifest> {
    let ds = Dataset::load_preprocessed(&req.dataset, true).context("stage load")?;
    for &d in &req.dims {
        ds.dim(d).with_context(|| format!("stage validate: dataset has no dimension {d}"))?;
    }
    let method = if req.exact { BinMethod::Exact } else { BinMethod::Approximate };
    let (binned, boundaries) =
        bin_stage(&ds, &req.dataset, &req.dims, req.bins, method, req.filter.as_deref()).context("stage bin")?;
    write_binned(&dir.join("bins"), &binned, &boundaries).context("stage bin")?;

    let backend = Backend::from(&req.backend);
    let measure = req
        .agg
        .spec(&ds)
        .and_then(|s| Ok(s.measure(&ds, &binned.rows)?))
        .context("stage aggregate")?;
    let out = aggregate_stage(&binned.table, &measure, &backend).context("stage aggregate")?;
    write_cubes(&dir.join("cubes"), &cube_meta(&binned.meta, &out, &measure, &backend), &out.cubes)
        .context("stage aggregate")?;
    write_json(&dir.join("stats.json"), &out.report).context("stage aggregate")?;
    drop(out);

    let config = serde_json::to_value(req)?;
    let mut manifest = render_stage(&dir.join("cubes"), dir, req.partitions, job_id, config).context("stage render")?;
    manifest.stats = Some("stats.json".into());
    rank_manifest(&mut manifest, &req.rank_options());
    write_json(&dir.join("request.json"), req).context("stage rank")?;
    write_json(&dir.join("manifest.json"), &manifest).context("stage rank")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> JobRequest {
        serde_json::from_str(r#"{"dataset":"/data/taxi","dims":[4,1,2],"bins":32}"#).unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let r = request();
        assert_eq!(r.agg, AggRequest::Count);
        assert_eq!(r.partitions, 4);
        assert_eq!(r.backend, BackendRequest::default());
        assert_eq!(r.penalty, 0.5);
        r.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_requests() {
        let mut r = request();
        r.dims = vec![0, 1];
        assert!(r.validate().is_err());
        let mut r = request();
        r.dims = vec![0, 1, 1];
        assert!(r.validate().is_err());
        let mut r = request();
        r.bins = 16;
        assert!(r.validate().is_err());
        r.any_bins = true;
        r.validate().unwrap();
        r.partitions = 3;
        assert!(r.validate().is_err());
        let mut r = request();
        r.bins = 512;
        r.backend = BackendRequest::PimSim {
            dpus: 1024,
            mode: ExecMode::Sync,
        };
        assert!(r.validate().is_err());
    }

    #[test]
    fn job_id_ignores_dim_order_and_path() {
        let a = request();
        let mut b = request();
        b.dims = vec![1, 2, 4];
        b.dataset = "/elsewhere".into();
        b.filter = Some("  ".into());
        assert_eq!(a.job_id("fp"), b.job_id("fp"));
        assert_ne!(a.job_id("fp"), a.job_id("other"));
        let mut c = request();
        c.bins = 64;
        assert_ne!(a.job_id("fp"), c.job_id("fp"));
        assert_eq!(a.job_id("fp").len(), 16);
    }

    #[test]
    fn agg_parsing() {
        assert_eq!(AggRequest::parse("count").unwrap(), AggRequest::Count);
        assert_eq!(
            AggRequest::parse("sum:fare:f32").unwrap(),
            AggRequest::Sum {
                column: "fare".into(),
                width: ValueWidth::Float32
            }
        );
        assert!(AggRequest::parse("avg:fare").is_err());
        let json = serde_json::to_string(&AggRequest::parse("sum:tip").unwrap()).unwrap();
        assert_eq!(json, r#"{"function":"sum","column":"tip","width":"float64"}"#);
    }
}
