//! On-disk layouts shared by the commands and the service.
//!
//! Binned directory (`divan bin --out`, `<job>/bins` in a job):
//! - `meta.json`: [`BinnedMeta`]
//! - `col_<i>.bin`: bins of local dimension `i`, `bin_bytes` little-endian bytes per row
//! - `rows.bin`: analyzed dataset row ids, `u32` little endian
//! - `dim_<i>.json`: per-bin value ranges of local dimension `i`
//!
//! Cube directory: `meta.json` ([`CubeDirMeta`]) plus one `cube_a_b_c.bin`
//! per triple. Gallery directory: `images/<id>.png`, `images/<id>.json`
//! and `manifest.json` ([`Manifest`]).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use divan_core::binning::{BinBoundaries, BinMethod, BinnedColumn};
use divan_core::cube::{AggregateCube, BinnedTable, ElemType, Triple};
use divan_core::rank::RankOptions;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

pub const BINNED_FORMAT: &str = "divan-binned";
pub const CUBES_FORMAT: &str = "divan-cubes";
pub const MANIFEST_FORMAT: &str = "divan-manifest";
pub const FORMAT_VERSION: u32 = 1;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn check_format(path: &Path, format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected || version != FORMAT_VERSION {
        bail!(
            "{}: expected {expected} v{FORMAT_VERSION}, found {format} v{version}",
            path.display()
        );
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedDim {
    /// Index within the binned table; image and cube dims refer to this.
    pub id: usize,
    pub dataset_dim: usize,
    pub name: String,
    pub method: BinMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedMeta {
    pub format: String,
    pub version: u32,
    pub dataset: PathBuf,
    pub dataset_fingerprint: String,
    pub num_bins: u32,
    pub num_rows: usize,
    pub bin_bytes: usize,
    pub filter: Option<String>,
    pub dims: Vec<BinnedDim>,
}

pub struct BinnedData {
    pub meta: BinnedMeta,
    pub table: BinnedTable,
    pub rows: Vec<u32>,
}

pub fn bin_bytes(num_bins: u32) -> usize {
    match num_bins {
        0..=256 => 1,
        257..=65536 => 2,
        _ => 4,
    }
}

pub fn boundaries_file(local_dim: usize) -> String {
    format!("dim_{local_dim}.json")
}

pub fn write_binned(dir: &Path, data: &BinnedData, boundaries: &[BinBoundaries]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let width = data.meta.bin_bytes;
    for (i, col) in data.table.columns.iter().enumerate() {
        let mut bytes = Vec::with_capacity(col.bins.len() * width);
        for &b in &col.bins {
            bytes.extend_from_slice(&b.to_le_bytes()[..width]);
        }
        let path = dir.join(format!("col_{i}.bin"));
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    let rows: Vec<u8> = data.rows.iter().flat_map(|r| r.to_le_bytes()).collect();
    fs::write(dir.join("rows.bin"), rows).context("writing rows.bin")?;
    for (i, b) in boundaries.iter().enumerate() {
        write_json(&dir.join(boundaries_file(i)), b)?;
    }
    write_json(&dir.join("meta.json"), &data.meta)
}

pub fn read_binned(dir: &Path) -> Result<BinnedData> {
    let meta_path = dir.join("meta.json");
    let meta: BinnedMeta = read_json(&meta_path)?;
    check_format(&meta_path, &meta.format, meta.version, BINNED_FORMAT)?;
    let width = meta.bin_bytes;
    let mut columns = Vec::with_capacity(meta.dims.len());
    for d in &meta.dims {
        let path = dir.join(format!("col_{}.bin", d.id));
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        if bytes.len() != meta.num_rows * width {
            bail!("{}: expected {} rows", path.display(), meta.num_rows);
        }
        let bins = bytes
            .chunks_exact(width)
            .map(|c| {
                let mut w = [0u8; 4];
                w[..width].copy_from_slice(c);
                u32::from_le_bytes(w)
            })
            .collect();
        columns.push(BinnedColumn {
            dim: d.dataset_dim,
            num_bins: meta.num_bins,
            bins,
        });
    }
    let table = BinnedTable::new(columns).context("binned columns")?;
    let rows_bytes = fs::read(dir.join("rows.bin")).context("reading rows.bin")?;
    if rows_bytes.len() != meta.num_rows * 4 {
        bail!("rows.bin: expected {} rows", meta.num_rows);
    }
    let rows = rows_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(BinnedData { meta, table, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeDirMeta {
    pub format: String,
    pub version: u32,
    pub num_bins: u32,
    pub elem: ElemType,
    pub backend: String,
    pub dims: Vec<BinnedDim>,
    pub triples: Vec<Triple>,
}

pub fn write_cubes(dir: &Path, meta: &CubeDirMeta, cubes: &[AggregateCube]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for cube in cubes {
        let path = dir.join(cube.file_name());
        let mut file = std::io::BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        cube.write_to(&mut file).with_context(|| format!("writing {}", path.display()))?;
    }
    write_json(&dir.join("meta.json"), meta)
}

pub fn read_cube_meta(dir: &Path) -> Result<CubeDirMeta> {
    let path = dir.join("meta.json");
    let meta: CubeDirMeta = read_json(&path)?;
    check_format(&path, &meta.format, meta.version, CUBES_FORMAT)?;
    Ok(meta)
}

pub fn read_cube(dir: &Path, triple: Triple) -> Result<AggregateCube> {
    let [a, b, c] = triple.0;
    let path = dir.join(format!("cube_{a}_{b}_{c}.bin"));
    let mut file = std::io::BufReader::new(fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?);
    let cube = AggregateCube::read_from(&mut file).with_context(|| format!("reading {}", path.display()))?;
    if cube.triple != triple {
        bail!("{} holds triple {}", path.display(), cube.triple);
    }
    Ok(cube)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestDimension {
    pub id: usize,
    pub dataset_dim: usize,
    pub name: String,
    /// Bin boundary file relative to the gallery directory.
    pub bins: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub id: String,
    /// Raster path relative to the gallery directory.
    pub file: String,
    pub sidecar: String,
    pub url: String,
    pub triple: Triple,
    pub x_dim: usize,
    pub y_dim: usize,
    pub z_dim: usize,
    pub z_range: [u32; 2],
    pub score: f64,
    pub degenerate: bool,
    pub group: [usize; 2],
    /// Position in the presentation order; `None` if not presented.
    pub rank: Option<usize>,
    pub effective_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestGroup {
    pub key: [usize; 2],
    pub score: f64,
    /// Image ids in presentation order.
    pub images: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub job_id: String,
    /// Echo of the request or command options that produced the gallery.
    pub config: serde_json::Value,
    pub num_bins: u32,
    pub partitions: u32,
    pub dimensions: Vec<ManifestDimension>,
    pub images: Vec<ManifestImage>,
    /// Presented groups in order; empty until ranked.
    pub groups: Vec<ManifestGroup>,
    pub ranking: Option<RankOptions>,
    /// Aggregation stats file relative to the gallery directory.
    pub stats: Option<String>,
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let m: Manifest = read_json(path)?;
    check_format(path, &m.format, m.version, MANIFEST_FORMAT)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binned_round_trip_wide_bins() {
        let dir = tempfile::tempdir().unwrap();
        for num_bins in [4u32, 300] {
            let table = BinnedTable::from_bins(num_bins, vec![vec![0, num_bins - 1, 2], vec![1, 1, 0]]).unwrap();
            let meta = BinnedMeta {
                format: BINNED_FORMAT.into(),
                version: FORMAT_VERSION,
                dataset: "ds".into(),
                dataset_fingerprint: "f".into(),
                num_bins,
                num_rows: 3,
                bin_bytes: bin_bytes(num_bins),
                filter: None,
                dims: (0..2)
                    .map(|i| BinnedDim {
                        id: i,
                        dataset_dim: i,
                        name: format!("d{i}"),
                        method: BinMethod::Exact,
                    })
                    .collect(),
            };
            let data = BinnedData {
                meta,
                table: table.clone(),
                rows: vec![5, 6, 9],
            };
            let sub = dir.path().join(num_bins.to_string());
            write_binned(&sub, &data, &[]).unwrap();
            let back = read_binned(&sub).unwrap();
            assert_eq!(back.table.columns[0].bins, table.columns[0].bins);
            assert_eq!(back.rows, vec![5, 6, 9]);
            assert_eq!(back.meta, data.meta);
        }
    }
}
