use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dataqual::corpus::Sample;
use dataqual::dqi::DqiReport;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::state::{DraftRecord, Stats, Verdict};
use crate::{ServiceError, Store};

pub const VALIDATOR_HEADER: &str = "x-validator-id";

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({"error": self.kind(), "message": self.to_string()}))).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

#[derive(Debug, Default, Deserialize)]
struct Granularity {
    #[serde(default)]
    granularity: Option<String>,
}

impl Granularity {
    fn shape(&self, record: DraftRecord) -> DraftRecord {
        if self.granularity.as_deref() == Some("term") {
            record
        } else {
            record.component_level()
        }
    }

    fn shape_report(&self, report: DqiReport) -> DqiReport {
        if self.granularity.as_deref() == Some("term") {
            report
        } else {
            report.component_level()
        }
    }
}

#[derive(Debug, Deserialize)]
struct DraftPayload {
    fields: BTreeMap<String, String>,
    label: String,
    #[serde(default)]
    revises: Option<String>,
}

#[derive(Debug, Deserialize)]
struct DecisionPayload {
    verdict: Verdict,
    #[serde(default)]
    feedback: String,
    #[serde(default)]
    validator_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct QueueItem {
    sample: Sample,
    report: DqiReport,
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::BadRequest(e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Corrupt(format!("worker panicked: {e}")))?
}

async fn post_draft(
    State(store): State<Arc<Store>>,
    Query(g): Query<Granularity>,
    payload: Result<Json<DraftPayload>, JsonRejection>,
) -> ApiResult<Json<DraftRecord>> {
    let p = body(payload)?;
    let sample = Sample {
        id: String::new(),
        fields: p.fields,
        label: p.label,
        split: None,
    };
    let record = blocking(move || store.post_draft(sample, p.revises)).await?;
    Ok(Json(g.shape(record)))
}

async fn submit(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let sample_id = blocking(move || store.submit(&id)).await?;
    Ok(Json(json!({ "sample_id": sample_id })))
}

async fn discard(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    blocking(move || store.discard(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn queue(State(store): State<Arc<Store>>, Query(g): Query<Granularity>) -> Json<Vec<QueueItem>> {
    let state = store.snapshot();
    Json(
        state
            .queue
            .iter()
            .map(|id| {
                let r = &state.drafts[id];
                QueueItem {
                    sample: r.sample.clone(),
                    report: g.shape_report(r.report.clone()),
                }
            })
            .collect(),
    )
}

async fn decide(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Query(g): Query<Granularity>,
    headers: HeaderMap,
    payload: Result<Json<DecisionPayload>, JsonRejection>,
) -> ApiResult<Json<DraftRecord>> {
    let p = body(payload)?;
    let validator = p
        .validator_id
        .or_else(|| {
            headers
                .get(VALIDATOR_HEADER)
                .and_then(|v| v.to_str().ok())
                .map(str::to_owned)
        })
        .unwrap_or_default();
    let record = blocking(move || store.decide(&id, p.verdict, p.feedback, validator)).await?;
    Ok(Json(g.shape(record)))
}

async fn stats(State(store): State<Arc<Store>>) -> Json<Stats> {
    Json(store.snapshot().stats())
}

async fn sample(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Query(g): Query<Granularity>,
) -> ApiResult<Json<DraftRecord>> {
    let record = store.snapshot().draft(&id)?.clone();
    Ok(Json(g.shape(record)))
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/api/drafts", post(post_draft))
        .route("/api/drafts/{id}/submit", post(submit))
        .route("/api/drafts/{id}/discard", post(discard))
        .route("/api/queue", get(queue))
        .route("/api/samples/{id}/decision", post(decide))
        .route("/api/samples/{id}", get(sample))
        .route("/api/dataset/stats", get(stats))
        .with_state(store)
}
