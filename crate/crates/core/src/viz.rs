//! Heatmaps from cubes.
//!
//! An image fixes one dim of a triple as `z`, sums the cube over a
//! contiguous range of z bins, and colors each `(x, y)` cell against the
//! expected value `S = region total / B^2`: blue below `S`, red above,
//! saturating at `2S`. `x` is the smaller remaining dim id. In the raster
//! y-bin 0 is the bottom row.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::{AggregateCube, Triple};

#[derive(Debug, Error)]
pub enum VizError {
    #[error("invalid image spec: {0}")]
    Spec(String),
    #[error("{partitions} partitions do not divide {num_bins} bins")]
    BadPartitions { partitions: u32, num_bins: u32 },
    #[error("cube {cube} does not match image spec for {spec}")]
    CubeMismatch { cube: Triple, spec: Triple },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("sidecar json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = VizError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelIntensity {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl PixelIntensity {
    pub const BLACK: Self = Self { r: 0.0, g: 0.0, b: 0.0 };

    pub fn to_rgb8(self) -> Rgb<u8> {
        Rgb([quantize(self.r), quantize(self.g), quantize(self.b)])
    }
}

/// Color of a cell with value `v` against expected value `s > 0`.
pub fn intensity(v: f64, s: f64) -> PixelIntensity {
    if v <= s {
        PixelIntensity {
            r: 0.0,
            g: 0.0,
            b: 1.0 - v / s,
        }
    } else {
        PixelIntensity {
            r: (v / s - 1.0).min(1.0),
            g: 0.0,
            b: 0.0,
        }
    }
}

/// `[0,1]` to 8 bits, rounding half up.
pub fn quantize(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSpec {
    pub triple: Triple,
    pub z_dim: usize,
    /// Inclusive lower z bin.
    pub z_lo: u32,
    /// Exclusive upper z bin.
    pub z_hi: u32,
    pub x_dim: usize,
    pub y_dim: usize,
    pub num_bins: u32,
}

impl ImageSpec {
    pub fn new(triple: Triple, z_dim: usize, z_lo: u32, z_hi: u32, num_bins: u32) -> Result<Self> {
        if !triple.contains(z_dim) {
            return Err(VizError::Spec(format!("z dim {z_dim} not in {triple}")));
        }
        if z_lo >= z_hi || z_hi > num_bins {
            return Err(VizError::Spec(format!("z range [{z_lo},{z_hi}) outside 0..{num_bins}")));
        }
        let mut rest = triple.0.into_iter().filter(|&d| d != z_dim);
        let (x_dim, y_dim) = (rest.next().unwrap(), rest.next().unwrap());
        Ok(Self {
            triple,
            z_dim,
            z_lo,
            z_hi,
            x_dim,
            y_dim,
            num_bins,
        })
    }

    /// Stable identifier, also the file stem.
    pub fn id(&self) -> String {
        let [a, b, c] = self.triple.0;
        format!("t{a}-{b}-{c}_z{}_{}-{}", self.z_dim, self.z_lo, self.z_hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub spec: ImageSpec,
    /// Region sums indexed `y * B + x`.
    pub cells: Vec<f64>,
    /// Expected cell value of this region.
    pub expected: f64,
    pub total: f64,
    /// Expected cell value if the whole cube were shown, `cube total / B^2`.
    pub dataset_expected: f64,
    /// Region total is not positive; rendered black.
    pub degenerate: bool,
}

impl RenderedImage {
    pub fn pixel(&self, x: u32, y: u32) -> PixelIntensity {
        if self.degenerate {
            return PixelIntensity::BLACK;
        }
        let b = self.spec.num_bins as usize;
        intensity(self.cells[y as usize * b + x as usize], self.expected)
    }

    pub fn intensities(&self) -> impl Iterator<Item = PixelIntensity> + '_ {
        let b = self.spec.num_bins;
        (0..b).flat_map(move |y| (0..b).map(move |x| self.pixel(x, y)))
    }

    pub fn raster(&self) -> RgbImage {
        let b = self.spec.num_bins;
        RgbImage::from_fn(b, b, |px, py| self.pixel(px, b - 1 - py).to_rgb8())
    }
}

/// Collapses `cube` over the spec's z range.
pub fn render(cube: &AggregateCube, spec: &ImageSpec) -> Result<RenderedImage> {
    if cube.triple != spec.triple || cube.num_bins != spec.num_bins {
        return Err(VizError::CubeMismatch {
            cube: cube.triple,
            spec: spec.triple,
        });
    }
    let b = spec.num_bins as usize;
    let t = spec.triple;
    let (pz, px, py) = (
        t.position(spec.z_dim).unwrap(),
        t.position(spec.x_dim).unwrap(),
        t.position(spec.y_dim).unwrap(),
    );
    let mut cells = vec![0.0; b * b];
    let mut coord = [0u32; 3];
    for z in spec.z_lo..spec.z_hi {
        coord[pz] = z;
        for y in 0..b {
            coord[py] = y as u32;
            for x in 0..b {
                coord[px] = x as u32;
                cells[y * b + x] += cube.cells.get_f64(cube.index(coord[0], coord[1], coord[2]));
            }
        }
    }
    let total: f64 = cells.iter().sum();
    let area = (b * b) as f64;
    let expected = total / area;
    Ok(RenderedImage {
        spec: *spec,
        cells,
        expected,
        total,
        dataset_expected: cube.total() / area,
        degenerate: expected <= 0.0,
    })
}

/// `k` contiguous z ranges for each of the three z choices: `3k` images.
pub fn image_specs(triple: Triple, num_bins: u32, k: u32) -> Result<Vec<ImageSpec>> {
    if k == 0 || !num_bins.is_multiple_of(k) {
        return Err(VizError::BadPartitions {
            partitions: k,
            num_bins,
        });
    }
    let width = num_bins / k;
    let mut specs = Vec::with_capacity(3 * k as usize);
    for z in triple.0 {
        for i in 0..k {
            specs.push(ImageSpec::new(triple, z, i * width, (i + 1) * width, num_bins)?);
        }
    }
    Ok(specs)
}

pub fn image_group(cube: &AggregateCube, k: u32) -> Result<Vec<RenderedImage>> {
    image_specs(cube.triple, cube.num_bins, k)?
        .par_iter()
        .map(|s| render(cube, s))
        .collect()
}

/// Per-image metadata written next to the PNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSidecar {
    pub id: String,
    pub file: String,
    pub triple: Triple,
    pub x_dim: usize,
    pub y_dim: usize,
    pub z_dim: usize,
    pub z_range: [u32; 2],
    pub num_bins: u32,
    pub expected: f64,
    pub total: f64,
    pub dataset_expected: f64,
    pub degenerate: bool,
    /// Mean unquantized red, the ranking score.
    pub score: f64,
    /// Bin boundary files for each axis, relative to the job directory.
    pub axis_bins: AxisBins,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisBins {
    pub x: String,
    pub y: String,
    pub z: String,
}

impl AxisBins {
    pub fn for_spec(spec: &ImageSpec) -> Self {
        let f = |d: usize| format!("bins/dim_{d}.json");
        Self {
            x: f(spec.x_dim),
            y: f(spec.y_dim),
            z: f(spec.z_dim),
        }
    }
}

/// Mean red over all pixels; degenerate images score 0.
pub fn red_mean(img: &RenderedImage) -> f64 {
    if img.degenerate {
        return 0.0;
    }
    let n = img.cells.len() as f64;
    img.intensities().map(|p| p.r).sum::<f64>() / n
}

pub fn sidecar(img: &RenderedImage) -> ImageSidecar {
    let id = img.spec.id();
    ImageSidecar {
        file: format!("{id}.png"),
        id,
        triple: img.spec.triple,
        x_dim: img.spec.x_dim,
        y_dim: img.spec.y_dim,
        z_dim: img.spec.z_dim,
        z_range: [img.spec.z_lo, img.spec.z_hi],
        num_bins: img.spec.num_bins,
        expected: img.expected,
        total: img.total,
        dataset_expected: img.dataset_expected,
        degenerate: img.degenerate,
        score: red_mean(img),
        axis_bins: AxisBins::for_spec(&img.spec),
    }
}

/// Writes `<id>.png` and `<id>.json` into `dir`.
pub fn write_image(img: &RenderedImage, dir: &Path) -> Result<ImageSidecar> {
    let meta = sidecar(img);
    let png = dir.join(&meta.file);
    img.raster()
        .save_with_format(&png, image::ImageFormat::Png)
        .map_err(|source| VizError::Image { path: png.clone(), source })?;
    let json = dir.join(format!("{}.json", meta.id));
    fs::write(&json, serde_json::to_vec_pretty(&meta)?).map_err(|source| VizError::Io { path: json, source })?;
    Ok(meta)
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|source| VizError::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_sidecar(path: &Path) -> Result<ImageSidecar> {
    let bytes = fs::read(path).map_err(|source| VizError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}
