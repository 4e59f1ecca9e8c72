use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use divan::formats::{read_binned, read_json, read_manifest, write_binned, write_cubes, write_json};
use divan::ingest::{preprocess, SchemaFile};
use divan::pipeline::{
    aggregate_stage, bin_stage, cube_meta, rank_manifest, render_stage, run_pipeline, AggRequest, Backend, JobRequest,
};
use divan_core::binning::BinMethod;
use divan_core::dataset::Dataset;
use divan_core::pim_plan::{assign_dpus, balance_report, dpu_dist, MemoryBudget};
use divan_core::pim_sim::{ExecMode, PimConfig};
use divan_core::rank::RankOptions;

#[derive(Parser)]
#[command(name = "divan", version, about = "Equidepth binning, 3D group-by cubes and heatmap galleries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum BackendKind {
    Cpu,
    PimSim,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a CSV/TSV file, sort every dimension and save a dataset directory.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bin dimensions of a preprocessed dataset.
    Bin {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated dimension ids.
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long)]
        bins: u32,
        /// Skip the histogram path and sort the subset directly.
        #[arg(long)]
        exact: bool,
        /// Row filter such as `fare>=10,passengers==2`.
        #[arg(long)]
        subset: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute every triple cube of a binned directory.
    Aggregate {
        #[arg(long)]
        binned: PathBuf,
        #[arg(long, value_enum, default_value = "cpu")]
        backend: BackendKind,
        /// `count`, `sum:<column>` or `sum:<column>:f32|f64`.
        #[arg(long, default_value = "count")]
        agg: String,
        /// Scan-major slabs along the first bin axis (cpu).
        #[arg(long, default_value_t = 1)]
        partitions: u32,
        /// Time partitions 1,2,4,8 and keep the fastest (cpu).
        #[arg(long)]
        autotune: bool,
        /// Worker threads, 0 for all cores.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value_t = 2048)]
        dpus: usize,
        #[arg(long, default_value = "sync")]
        mode: ExecMode,
        /// Simulate routing and transfers only; no cubes are written.
        #[arg(long)]
        accounting_only: bool,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show how triples are distributed over DPUs.
    Plan {
        #[arg(long)]
        dims: usize,
        #[arg(long)]
        bins: u32,
        #[arg(long)]
        dpus: usize,
        /// Bytes per aggregate cell.
        #[arg(long, default_value_t = 4)]
        elem_bytes: usize,
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Render heatmaps for every cube.
    Render {
        #[arg(long)]
        cubes: PathBuf,
        #[arg(long, default_value_t = 4)]
        partitions: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank a rendered gallery and write the order into its manifest.
    Rank {
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long, default_value_t = 30)]
        top_groups: usize,
        #[arg(long, default_value_t = 4)]
        per_group: usize,
        #[arg(long, default_value_t = 0.5)]
        penalty: f64,
        /// Lowest scoring groups first.
        #[arg(long)]
        reverse: bool,
    },
    /// Run bin, aggregate, render and rank for a job file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        root: PathBuf,
    },
    /// Serve galleries and accept jobs over HTTP.
    Serve {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Preprocess { input, schema, out } => {
            let schema: SchemaFile = read_json(&schema)?;
            let ds = preprocess(&input, &schema, &out)?;
            println!("{} rows, {} dimensions -> {}", ds.row_count, ds.num_dims(), out.display());
        }
        Command::Bin {
            dataset,
            dims,
            bins,
            exact,
            subset,
            out,
        } => {
            let ds = Dataset::load_preprocessed(&dataset, true)?;
            let method = if exact { BinMethod::Exact } else { BinMethod::Approximate };
            let (data, bounds) = bin_stage(&ds, &dataset, &dims, bins, method, subset.as_deref())?;
            write_binned(&out, &data, &bounds)?;
            for d in &data.meta.dims {
                println!("dim {} ({}) -> {:?}", d.dataset_dim, d.name, d.method);
            }
            println!("{} rows binned into {} bins -> {}", data.meta.num_rows, bins, out.display());
        }
        Command::Aggregate {
            binned,
            backend,
            agg,
            partitions,
            autotune,
            threads,
            dpus,
            mode,
            accounting_only,
            stats,
            out,
        } => {
            let data = read_binned(&binned)?;
            let agg = AggRequest::parse(&agg)?;
            let measure = match agg {
                AggRequest::Count => divan_core::cube::Measure::Count,
                _ => {
                    let ds = Dataset::load_preprocessed(&data.meta.dataset, true)
                        .with_context(|| format!("loading {}", data.meta.dataset.display()))?;
                    agg.spec(&ds)?.measure(&ds, &data.rows)?
                }
            };
            let backend = match backend {
                BackendKind::Cpu => Backend::Cpu {
                    partitions,
                    threads,
                    autotune,
                },
                BackendKind::PimSim => {
                    let mut c = PimConfig::new(dpus).with_mode(mode);
                    c.materialize = !accounting_only;
                    Backend::PimSim(c)
                }
            };
            if out.is_none() && !accounting_only {
                bail!("--out is required unless --accounting-only is set");
            }
            let result = aggregate_stage(&data.table, &measure, &backend)?;
            if let Some(path) = &stats {
                write_json(path, &result.report)?;
            }
            if let Some(out) = out.filter(|_| !result.cubes.is_empty()) {
                write_cubes(&out, &cube_meta(&data.meta, &result, &measure, &backend), &result.cubes)?;
                println!("{} cubes -> {}", result.cubes.len(), out.display());
            }
            println!("{}", serde_json::to_string_pretty(&summary(&result.report))?);
        }
        Command::Plan {
            dims,
            bins,
            dpus,
            elem_bytes,
            dump,
        } => {
            let plan = dpu_dist(dims, bins, dpus)?;
            let assignment = assign_dpus(&plan, bins, dpus, elem_bytes, MemoryBudget::default())?;
            let balance = balance_report(&assignment);
            for b in &balance {
                println!(
                    "iteration {}: {} groups, {} triples, group size {}..={}, replication {}, {} active DPUs, max footprint {} B",
                    b.iteration, b.groups, b.triples, b.min_group, b.max_group, b.replication, b.active_dpus, b.max_footprint_bytes
                );
            }
            if let Some(path) = dump {
                write_json(&path, &serde_json::json!({ "assignment": assignment, "balance": balance }))?;
            }
        }
        Command::Render { cubes, partitions, out } => {
            let config = serde_json::json!({ "cubes": cubes, "partitions": partitions });
            let manifest = render_stage(&cubes, &out, partitions, "local", config)?;
            write_json(&out.join("manifest.json"), &manifest)?;
            println!("{} images -> {}", manifest.images.len(), out.display());
        }
        Command::Rank {
            gallery,
            top_groups,
            per_group,
            penalty,
            reverse,
        } => {
            let path = gallery.join("manifest.json");
            let mut manifest = read_manifest(&path)?;
            let opts = RankOptions {
                per_group,
                top_groups,
                penalty,
                reverse,
            };
            rank_manifest(&mut manifest, &opts);
            write_json(&path, &manifest)?;
            for g in &manifest.groups {
                println!("({},{}) score {:.4}: {}", g.key[0], g.key[1], g.score, g.images.join(" "));
            }
        }
        Command::Pipeline { config, root } => {
            let req: JobRequest = read_json(&config)?;
            let outcome = run_pipeline(&req, &root)?;
            println!(
                "job {} ({}): {} images, {} groups -> {}",
                outcome.job_id,
                if outcome.cache_hit { "cached" } else { "computed" },
                outcome.manifest.images.len(),
                outcome.manifest.groups.len(),
                outcome.job_dir.join("manifest.json").display()
            );
        }
        Command::Serve { root, port, host } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let app = divan::service::app(root.clone());
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .with_context(|| format!("binding {host}:{port}"))?;
                tracing::info!(root = %root.display(), "listening on http://{}", listener.local_addr()?);
                axum::serve(listener, app).await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
    }
    Ok(())
}

/// Aggregation report without per-DPU arrays.
fn summary(report: &divan::pipeline::AggregateReport) -> serde_json::Value {
    let mut v = serde_json::to_value(report).unwrap_or_default();
    if let Some(its) = v.pointer_mut("/stats/iterations").and_then(|i| i.as_array_mut()) {
        for it in its {
            if let Some(o) = it.as_object_mut() {
                o.remove("dpu_tuples");
            }
        }
    }
    v
}
