mod common;

use std::path::Path;
use std::process::Command;

use divan::formats::{read_cube_meta, read_manifest, write_json};

fn divan(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_divan")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "divan {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn commands_chain_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let csv = root.join("taxi.csv");
    common::write_csv(&csv, 5_000, 4);
    let schema = root.join("schema.json");
    write_json(&schema, &common::schema()).unwrap();
    let ds = root.join("ds");
    let out = divan(&["preprocess", "--input", p(&csv), "--schema", p(&schema), "--out", p(&ds)]);
    assert!(out.contains("5000 rows, 6 dimensions"));

    let bins = root.join("bins");
    divan(&["bin", "--dataset", p(&ds), "--dims", "0,1,2,3", "--bins", "16", "--subset", "passengers>=2", "--out", p(&bins)]);

    let cubes = root.join("cubes");
    let stats = root.join("stats.json");
    divan(&["aggregate", "--binned", p(&bins), "--agg", "sum:fare:f32", "--partitions", "4", "--out", p(&cubes)]);
    assert_eq!(read_cube_meta(&cubes).unwrap().triples.len(), 4);
    divan(&[
        "aggregate", "--binned", p(&bins), "--backend", "pim-sim", "--dpus", "64", "--mode", "async",
        "--accounting-only", "--stats", p(&stats),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&stats).unwrap()).unwrap();
    assert_eq!(report["backend"], "pim-sim");
    assert_eq!(report["stats"]["iterations"][0]["dpu_tuples"].as_array().unwrap().len(), 64);

    let gallery = root.join("gallery");
    divan(&["render", "--cubes", p(&cubes), "--partitions", "2", "--out", p(&gallery)]);
    assert_eq!(read_manifest(&gallery.join("manifest.json")).unwrap().images.len(), 4 * 6);
    divan(&["rank", "--gallery", p(&gallery), "--top-groups", "3", "--per-group", "2"]);
    let m = read_manifest(&gallery.join("manifest.json")).unwrap();
    assert_eq!(m.groups.len(), 3);
    assert_eq!(m.images.iter().filter(|i| i.rank.is_some()).count(), 6);

    let plan = root.join("plan.json");
    let out = divan(&["plan", "--dims", "16", "--bins", "128", "--dpus", "2048", "--dump", p(&plan)]);
    assert!(out.contains("iteration 0: 16 groups, 560 triples, group size 35..=35"));
    assert!(plan.exists());

    let job = root.join("job.json");
    write_json(&job, &serde_json::json!({"dataset": ds, "dims": [1, 2, 3], "bins": 32})).unwrap();
    let first = divan(&["pipeline", "--config", p(&job), "--root", p(root)]);
    assert!(first.contains("(computed): 12 images"), "{first}");
    let second = divan(&["pipeline", "--config", p(&job), "--root", p(root)]);
    assert!(second.contains("(cached)"));
}

#[test]
fn plan_rejects_oversized_footprint() {
    let out = Command::new(env!("CARGO_BIN_EXE_divan"))
        .args(["plan", "--dims", "32", "--bins", "256", "--dpus", "256"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
}
