//! HTTP service behind the annotation UI.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/atlas` | grid summary |
//! | GET | `/api/cells/{i}/{j}?blind=` | one cell |
//! | GET | `/api/cells/{i}/{j}/image` | generated PNG |
//! | GET | `/api/vocabulary` | allowed labels |
//! | GET | `/api/progress?rater=` | annotated counts |
//! | GET | `/api/annotations?rater=` | current labels |
//! | GET | `/api/annotations/export` | `item_id,rater_id,label` CSV |
//! | POST | `/api/annotations` | submit `{i, j, rater, label}` |
//!
//! Blind mode hides everything derived from ground truth or the model
//! (histogram, attribution, majority class, member ids).

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vitatlas::atlas::{Atlas, AtlasCell};
use vitatlas::fingerprint::Fingerprint;
use vitatlas::UNCERTAIN_CODE;

use crate::error::{CliError, Result};
use crate::stages::{load_atlas, Context};
use crate::store::{AnnotationEvent, AnnotationStore};

pub struct AppState {
    pub atlas: Atlas,
    pub atlas_dir: PathBuf,
    pub atlas_id: String,
    pub blind: bool,
    pub store: Mutex<AnnotationStore>,
}

impl AppState {
    pub fn new(atlas: Atlas, atlas_dir: PathBuf, blind: bool, store: AnnotationStore) -> Self {
        let mut fp = Fingerprint::new();
        fp.str(&atlas.dataset_fingerprint)
            .str(&atlas.model_fingerprint)
            .str(&atlas.config_hash)
            .u64(atlas.grid_size as u64)
            .u64(atlas.layer as u64);
        Self {
            atlas_id: fp.finish()[..16].to_string(),
            atlas,
            atlas_dir,
            blind,
            store: Mutex::new(store),
        }
    }

    /// Class codes followed by the uncertain code.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v = self.atlas.class_codes.clone();
        v.push(UNCERTAIN_CODE.to_string());
        v
    }

    fn annotatable(&self, i: usize, j: usize) -> Option<&AtlasCell> {
        self.atlas.cell(i, j).filter(|c| !c.is_empty())
    }
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Default, Deserialize)]
struct BlindQuery {
    blind: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
struct RaterQuery {
    rater: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Submission {
    pub i: usize,
    pub j: usize,
    pub rater: String,
    pub label: String,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/atlas", get(atlas_summary))
        .route("/api/cells/{i}/{j}", get(cell_view))
        .route("/api/cells/{i}/{j}/image", get(cell_image))
        .route("/api/vocabulary", get(vocabulary))
        .route("/api/progress", get(progress))
        .route("/api/annotations", get(list_annotations).post(submit))
        .route("/api/annotations/export", get(export))
        .with_state(state)
}

fn image_url(cell: &AtlasCell) -> Option<String> {
    cell.image_file
        .as_ref()
        .map(|_| format!("/api/cells/{}/{}/image", cell.i, cell.j))
}

async fn atlas_summary(State(s): State<Arc<AppState>>, Query(q): Query<BlindQuery>) -> Json<Value> {
    let blind = q.blind.unwrap_or(s.blind);
    let codes = &s.atlas.class_codes;
    let cells: Vec<Value> = s
        .atlas
        .cells
        .iter()
        .map(|c| {
            let mut v = json!({ "i": c.i, "j": c.j, "n": c.n(), "image_url": image_url(c) });
            if !blind {
                v["majority_gt"] = json!(c.majority_gt.map(|k| &codes[k]));
                v["purity"] = json!(c.purity());
            }
            v
        })
        .collect();
    Json(json!({
        "atlas_id": s.atlas_id,
        "grid_size": s.atlas.grid_size,
        "layer": s.atlas.layer,
        "class_codes": codes,
        "blind": blind,
        "cells": cells,
    }))
}

async fn cell_view(
    State(s): State<Arc<AppState>>,
    UrlPath((i, j)): UrlPath<(usize, usize)>,
    Query(q): Query<BlindQuery>,
) -> ApiResult<Json<Value>> {
    let cell = s
        .atlas
        .cell(i, j)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no cell ({i}, {j})")))?;
    let blind = q.blind.unwrap_or(s.blind);
    let codes = &s.atlas.class_codes;
    let mut v = json!({
        "i": i,
        "j": j,
        "n": cell.n(),
        "image_url": image_url(cell),
        "blind": blind,
    });
    if !blind && !cell.is_empty() {
        let histogram: BTreeMap<&str, usize> = codes.iter().map(String::as_str).zip(cell.class_histogram.iter().copied()).collect();
        let attribution: BTreeMap<&str, f64> = codes.iter().map(String::as_str).zip(cell.mean_attribution.iter().copied()).collect();
        v["class_histogram"] = json!(histogram);
        v["mean_attribution"] = json!(attribution);
        v["majority_gt"] = json!(cell.majority_gt.map(|k| &codes[k]));
        v["majority_tie"] = json!(cell.majority_tie);
        v["purity"] = json!(cell.purity());
        v["inversion_loss"] = json!(cell.inversion_loss);
        v["members"] = cell
            .members
            .iter()
            .map(|m| json!({ "patch_id": m.patch_id, "gt": codes[m.gt_class] }))
            .collect();
    }
    Ok(Json(v))
}

async fn cell_image(State(s): State<Arc<AppState>>, UrlPath((i, j)): UrlPath<(usize, usize)>) -> ApiResult<Response> {
    let file = s
        .atlas
        .cell(i, j)
        .and_then(|c| c.image_file.as_ref())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no image for cell ({i}, {j})")))?;
    let path = s.atlas_dir.join(file);
    let bytes = tokio::fs::read(&path).await.map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn vocabulary(State(s): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "labels": s.vocabulary(), "uncertain": UNCERTAIN_CODE }))
}

async fn progress(State(s): State<Arc<AppState>>, Query(q): Query<RaterQuery>) -> ApiResult<Json<Value>> {
    let total = s.atlas.non_empty().count();
    let store = s.store.lock().map_err(ApiError::internal)?;
    let mut per_rater: BTreeMap<String, usize> = BTreeMap::new();
    for e in store.current(&s.atlas_id) {
        *per_rater.entry(e.rater).or_default() += 1;
    }
    if let Some(r) = q.rater {
        let done = per_rater.get(&r).copied().unwrap_or(0);
        return Ok(Json(json!({ "rater": r, "annotated": done, "total": total })));
    }
    Ok(Json(json!({ "total": total, "annotated": per_rater })))
}

async fn list_annotations(
    State(s): State<Arc<AppState>>,
    Query(q): Query<RaterQuery>,
) -> ApiResult<Json<Vec<AnnotationEvent>>> {
    let store = s.store.lock().map_err(ApiError::internal)?;
    let events = store
        .current(&s.atlas_id)
        .into_iter()
        .filter(|e| q.rater.as_ref().is_none_or(|r| *r == e.rater))
        .collect();
    Ok(Json(events))
}

async fn submit(State(s): State<Arc<AppState>>, Json(sub): Json<Submission>) -> ApiResult<(StatusCode, Json<AnnotationEvent>)> {
    if s.annotatable(sub.i, sub.j).is_none() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("cell ({}, {}) does not exist or is empty", sub.i, sub.j),
        ));
    }
    let rater = sub.rater.trim();
    if rater.is_empty() || rater.contains([',', '\n', '\r', '"']) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "rater id must be non-empty plain text"));
    }
    let vocabulary = s.vocabulary();
    if !vocabulary.contains(&sub.label) {
        return Err(ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!({ "error": format!("unknown label `{}`", sub.label), "vocabulary": vocabulary }),
        });
    }
    let mut store = s.store.lock().map_err(ApiError::internal)?;
    let event = store
        .append(&s.atlas_id, sub.i, sub.j, rater, &sub.label)
        .map_err(ApiError::internal)?;
    Ok((StatusCode::CREATED, Json(event)))
}

async fn export(State(s): State<Arc<AppState>>) -> ApiResult<Response> {
    let store = s.store.lock().map_err(ApiError::internal)?;
    let mut out = Vec::new();
    store
        .export_csv(&s.atlas_id, s.atlas.class_codes.clone(), &mut out)
        .map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], out).into_response())
}

/// Loads the atlas and store and serves until Ctrl-C.
pub async fn serve(ctx: &Context) -> Result<()> {
    let atlas = load_atlas(ctx)?;
    let store = AnnotationStore::open(&ctx.config.store_path())?;
    let state = Arc::new(AppState::new(atlas, ctx.layout.atlas_dir(), ctx.config.serve.blind, store));
    let addr = ctx.config.bind_address();
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| CliError::Invalid(format!("cannot bind {addr}: {e}")))?;
    info!("serving atlas {} on http://{addr}", state.atlas_id);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::io(addr, e))
}
