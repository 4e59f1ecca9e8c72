#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};

use divan::ingest::{preprocess, SchemaFile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Taxi-like CSV: pickup time, distance, fare (tracks distance), tip (30%
/// zeros), passengers, zone. Dimensions are every column, in that order.
pub fn write_csv(path: &Path, rows: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    writeln!(f, "pickup,distance,fare,tip,passengers,zone").unwrap();
    for i in 0..rows {
        let distance: f64 = rng.gen_range(0.1..30.0);
        let fare = 2.5 + 2.0 * distance + rng.gen_range(0.0..3.0);
        let tip = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.5..12.0) };
        writeln!(
            f,
            "{},{distance:.3},{fare:.2},{tip:.2},{},z{}",
            1_600_000_000 + i as i64 * 37,
            rng.gen_range(1..=6),
            rng.gen_range(0..40)
        )
        .unwrap();
    }
}

pub fn schema() -> SchemaFile {
    serde_json::from_value(serde_json::json!({
        "columns": [
            {"name": "pickup", "kind": "timestamp"},
            {"name": "distance", "kind": "float64"},
            {"name": "fare", "kind": "float64"},
            {"name": "tip", "kind": "float64"},
            {"name": "passengers", "kind": "integer"},
            {"name": "zone", "kind": "text"}
        ],
        "values": [{"column": "fare", "width": "float64"}]
    }))
    .unwrap()
}

/// Writes and preprocesses a dataset under `root/name`; returns its directory.
pub fn dataset(root: &Path, name: &str, rows: usize, seed: u64) -> PathBuf {
    let csv = root.join(format!("{name}.csv"));
    write_csv(&csv, rows, seed);
    let out = root.join(name);
    preprocess(&csv, &schema(), &out).unwrap();
    out
}
