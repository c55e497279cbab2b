mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vitatlas::atlas::export_atlas;
use vitatlas_cli::server::{router, AppState};
use vitatlas_cli::store::AnnotationStore;

fn app(dir: &Path, blind: bool) -> (Router, Arc<AppState>) {
    let atlas_dir = dir.join("atlas");
    let atlas = common::grid_atlas(10);
    if !atlas_dir.exists() {
        export_atlas(&atlas, &atlas_dir).unwrap();
    }
    let store = AnnotationStore::open(&dir.join("store.jsonl")).unwrap();
    let state = Arc::new(AppState::new(atlas, atlas_dir, blind, store));
    (router(state.clone()), state)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn get_json(app: &Router, uri: &str) -> Value {
    let (status, body) = get(app, uri).await;
    assert_eq!(status, StatusCode::OK, "{uri}: {}", String::from_utf8_lossy(&body));
    serde_json::from_slice(&body).unwrap()
}

async fn post(app: &Router, body: Value) -> (StatusCode, Value) {
    let req = Request::post("/api/annotations")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

#[tokio::test]
async fn blind_mode_hides_ground_truth_fields() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), true);
    let blind = get_json(&app, "/api/cells/0/0").await;
    let open = get_json(&app, "/api/cells/0/0?blind=false").await;
    let expected: BTreeSet<String> = ["i", "j", "n", "image_url", "blind"].iter().map(|s| s.to_string()).collect();
    assert_eq!(keys(&blind), expected);
    let hidden: BTreeSet<String> = keys(&open).difference(&keys(&blind)).cloned().collect();
    for field in ["class_histogram", "mean_attribution", "majority_gt", "members", "purity"] {
        assert!(hidden.contains(field), "{field} missing from non-blind view");
    }
    let summary = get_json(&app, "/api/atlas").await;
    assert_eq!(summary["cells"].as_array().unwrap().len(), 100);
    for cell in summary["cells"].as_array().unwrap() {
        assert!(cell.get("majority_gt").is_none() && cell.get("purity").is_none());
    }
    let open_summary = get_json(&app, "/api/atlas?blind=false").await;
    assert!(open_summary["cells"][0].get("majority_gt").is_some());
}

#[tokio::test]
async fn submit_fetch_and_last_write_wins() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), true);
    let (status, ev) = post(&app, json!({"i": 2, "j": 3, "rater": "r1", "label": "A"})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(ev["label"], "A");
    let list = get_json(&app, "/api/annotations?rater=r1").await;
    assert_eq!(list[0]["label"], "A");
    post(&app, json!({"i": 2, "j": 3, "rater": "r1", "label": "???"})).await;
    let (_, csv) = get(&app, "/api/annotations/export").await;
    assert_eq!(String::from_utf8(csv).unwrap(), "item_id,rater_id,label\ncell_2_3,r1,???\n");
    let progress = get_json(&app, "/api/progress?rater=r1").await;
    assert_eq!((progress["annotated"].as_u64(), progress["total"].as_u64()), (Some(1), Some(100)));
}

#[tokio::test]
async fn invalid_writes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (app, state) = app(dir.path(), true);
    let (status, body) = post(&app, json!({"i": 0, "j": 0, "rater": "r1", "label": "Z"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["vocabulary"], json!(["A", "B", "C", "???"]));
    let (status, _) = post(&app, json!({"i": 10, "j": 0, "rater": "r1", "label": "A"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post(&app, json!({"i": 0, "j": 0, "rater": " ", "label": "A"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/api/cells/10/10").await.0, StatusCode::NOT_FOUND);
    assert!(state.store.lock().unwrap().events().is_empty());
}

#[tokio::test]
async fn images_and_vocabulary_are_served() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), true);
    let (status, png) = get(&app, "/api/cells/0/0/image").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    assert_eq!(get(&app, "/api/cells/0/1/image").await.0, StatusCode::NOT_FOUND);
    let vocab = get_json(&app, "/api/vocabulary").await;
    assert_eq!(vocab["labels"], json!(["A", "B", "C", "???"]));
}

#[tokio::test]
async fn full_annotation_exports_every_row_and_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let (app, _) = app(dir.path(), true);
        let codes = ["A", "B", "C", "???"];
        for r in 0..4 {
            for i in 0..10 {
                for j in 0..10 {
                    let label = codes[(i + j + r) % 4];
                    let (status, _) = post(&app, json!({"i": i, "j": j, "rater": format!("rater{r}"), "label": label})).await;
                    assert_eq!(status, StatusCode::CREATED);
                }
            }
        }
        let (_, csv) = get(&app, "/api/annotations/export").await;
        csv
    };
    let text = String::from_utf8(before.clone()).unwrap();
    assert_eq!(text.lines().count(), 401);
    assert_eq!(text.lines().next(), Some("item_id,rater_id,label"));
    let (app, _) = app(dir.path(), true);
    let (_, after) = get(&app, "/api/annotations/export").await;
    assert_eq!(before, after);
}
