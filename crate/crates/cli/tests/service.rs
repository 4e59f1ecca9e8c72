mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use divan::formats::Manifest;
use divan::service::{app, JobState, JobStatus};
use http_body_util::BodyExt;
use tower::ServiceExt;

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: serde_json::Value) -> (StatusCode, Vec<u8>) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

async fn wait_done(app: &Router, id: &str) -> JobStatus {
    for _ in 0..600 {
        let (code, body) = get(app, &format!("/api/jobs/{id}")).await;
        assert_eq!(code, StatusCode::OK);
        let status: JobStatus = serde_json::from_slice(&body).unwrap();
        if matches!(status.state, JobState::Done | JobState::Failed) {
            return status;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    panic!("job {id} did not finish");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn job_round_trip_and_read_endpoints() {
    let tmp = tempfile::tempdir().unwrap();
    common::dataset(tmp.path(), "taxi", 10_000, 7);
    let app = app(tmp.path().to_path_buf());

    // dims 0,1,3 = pickup, distance, tip; dataset path relative to the root
    let job = serde_json::json!({"dataset": "taxi", "dims": [3, 0, 1], "bins": 32, "partitions": 4});
    let (code, body) = post_json(&app, "/api/jobs", job.clone()).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let queued: JobStatus = serde_json::from_slice(&body).unwrap();
    assert_eq!(queued.state, JobState::Queued);

    let done = wait_done(&app, &queued.id).await;
    assert_eq!(done.error, None);
    assert_eq!(done.history, vec![JobState::Queued, JobState::Running, JobState::Done]);
    let manifest_url = done.manifest.clone().unwrap();

    let (code, body) = get(&app, &manifest_url).await;
    assert_eq!(code, StatusCode::OK);
    let on_disk = std::fs::read(tmp.path().join("jobs").join(&queued.id).join("manifest.json")).unwrap();
    assert_eq!(body, on_disk);
    let manifest: Manifest = serde_json::from_slice(&body).unwrap();
    assert_eq!(manifest.images.len(), 12);

    for img in &manifest.images {
        let (code, png) = get(&app, &img.url).await;
        assert_eq!(code, StatusCode::OK, "{}", img.url);
        assert_eq!(&png[1..4], b"PNG");
    }

    // local dim 2 is the tip column; 30% zeros fill the lowest bins
    let tip = manifest.dimensions.iter().find(|d| d.name == "tip").unwrap();
    let (code, body) = get(&app, &format!("/api/bins/{}/{}", queued.id, tip.id)).await;
    assert_eq!(code, StatusCode::OK);
    let bins: serde_json::Value = serde_json::from_slice(&body).unwrap();
    let ranges = bins["ranges"].as_array().unwrap();
    assert_eq!(ranges.len(), 32);
    assert_eq!(ranges[0]["lo"], serde_json::json!(0.0));
    assert_eq!(ranges[0]["hi"], serde_json::json!(0.0));
    assert_eq!(ranges[8]["hi"], serde_json::json!(0.0));

    // resubmitting is a no-op on the same id
    let (code, body) = post_json(&app, "/api/jobs", job).await;
    assert_eq!(code, StatusCode::OK);
    let again: JobStatus = serde_json::from_slice(&body).unwrap();
    assert_eq!(again.id, queued.id);
    assert_eq!(again.state, JobState::Done);

    // a fresh service over the same root sees the finished job as cached
    let fresh = divan::service::app(tmp.path().to_path_buf());
    let (code, body) = get(&fresh, &format!("/api/jobs/{}", queued.id)).await;
    assert_eq!(code, StatusCode::OK);
    let cached: JobStatus = serde_json::from_slice(&body).unwrap();
    assert!(cached.cached && cached.state == JobState::Done);
}

#[tokio::test]
async fn errors_and_not_found() {
    let tmp = tempfile::tempdir().unwrap();
    common::dataset(tmp.path(), "taxi", 500, 8);
    let app = app(tmp.path().to_path_buf());

    let (code, body) = post_json(&app, "/api/jobs", serde_json::json!({"dataset": "taxi", "dims": [0, 1], "bins": 32})).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(String::from_utf8_lossy(&body).contains("at least 3 dimensions"));

    let (code, _) = post_json(&app, "/api/jobs", serde_json::json!({"dataset": "nope", "dims": [0, 1, 2], "bins": 32})).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);

    assert_eq!(get(&app, "/api/jobs/deadbeef").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/api/manifest/deadbeef").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/api/images/deadbeef--t0-1-2_z0_0-8").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/api/images/noseparator").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/api/bins/deadbeef/0").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/api/manifest/..%2Fetc").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn failing_job_reports_stage() {
    let tmp = tempfile::tempdir().unwrap();
    common::dataset(tmp.path(), "taxi", 500, 9);
    let app = app(tmp.path().to_path_buf());
    let job = serde_json::json!({
        "dataset": "taxi", "dims": [0, 1, 2], "bins": 32,
        "agg": {"function": "sum", "column": "zone"}
    });
    let (code, body) = post_json(&app, "/api/jobs", job).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let id = serde_json::from_slice::<JobStatus>(&body).unwrap().id;
    let status = wait_done(&app, &id).await;
    assert_eq!(status.state, JobState::Failed);
    assert!(status.error.unwrap().contains("stage aggregate"));
}
