use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use dataqual::corpus::{Dataset, Sample, TaskSchema};
use dataqual::dqi::{component_scores, DqiConfig};
use dataqual_service::{router, Store};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const SUBJECTS: &[&str] = &["a man", "two kids", "a woman", "the old dog", "a chef", "three girls"];
const VERBS: &[&str] = &["walks along", "plays near", "sits beside", "runs past"];
const PLACES: &[&str] = &["the river", "a market", "the stadium", "an empty road", "a small cafe"];

fn seed() -> Dataset {
    let labels = ["entailment", "neutral", "contradiction"];
    let mut samples = Vec::new();
    for i in 0..24 {
        let s = SUBJECTS[i % SUBJECTS.len()];
        let v = VERBS[(i / 2) % VERBS.len()];
        let p = PLACES[(i * 7) % PLACES.len()];
        let premise = format!("{s} {v} {p} at dawn number {i}.");
        let hypothesis = match i % 3 {
            0 => format!("{s} is outside."),
            1 => format!("{s} waits for a friend {i}."),
            _ => format!("{s} is asleep at home."),
        };
        samples.push(Sample::new(
            format!("seed-{i:02}"),
            [("premise", premise), ("hypothesis", hypothesis)],
            labels[i % 3],
        ));
    }
    Dataset::new(TaskSchema::nli(), samples).unwrap()
}

fn app(dir: &std::path::Path) -> (Router, Arc<Store>) {
    let store = Arc::new(Store::open(dir, Some(seed()), DqiConfig::default()).unwrap());
    (router(store.clone()), store)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn draft_body(premise: &str, hypothesis: &str, label: &str) -> Value {
    json!({"fields": {"premise": premise, "hypothesis": hypothesis}, "label": label})
}

#[tokio::test]
async fn full_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let (app, store) = app(dir.path());

    let (status, stats) = call(&app, "GET", "/api/dataset/stats", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(stats["size"], 24);
    assert_eq!(stats["trajectory"].as_array().unwrap().len(), 0);

    // Draft and feedback.
    let (status, draft) = call(
        &app,
        "POST",
        "/api/drafts",
        Some(draft_body(
            "A pilot lands a plane in heavy fog.",
            "Someone flies.",
            "entailment",
        )),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{draft}");
    let id = draft["draft_id"].as_str().unwrap().to_owned();
    assert_eq!(draft["status"], "draft");
    for c in ["C1", "C2", "C3", "C4", "C5", "C6"] {
        let color = draft["report"]["components"][c]["color"].as_str().unwrap();
        assert!(["red", "yellow", "green"].contains(&color));
        assert!(draft["report"]["components"][c].get("terms").is_none());
    }

    // Submit (idempotent), then reject without and with feedback.
    let (status, sub) = call(&app, "POST", &format!("/api/drafts/{id}/submit"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(sub["sample_id"], id.as_str());
    let (_, again) = call(&app, "POST", &format!("/api/drafts/{id}/submit"), None).await;
    assert_eq!(again["sample_id"], id.as_str());
    let (_, queue) = call(&app, "GET", "/api/queue", None).await;
    assert_eq!(queue.as_array().unwrap().len(), 1);

    let decision = format!("/api/samples/{id}/decision");
    let (status, err) = call(
        &app,
        "POST",
        &decision,
        Some(json!({"verdict": "reject", "feedback": "  "})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "MissingFeedback");
    let (status, rejected) = call(
        &app,
        "POST",
        &decision,
        Some(json!({"verdict": "reject", "feedback": "hypothesis is too vague", "validator_id": "v1"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rejected["status"], "rejected");

    // The creator sees the feedback, then revises.
    let (_, polled) = call(&app, "GET", &format!("/api/samples/{id}"), None).await;
    assert_eq!(polled["decision"]["feedback"], "hypothesis is too vague");
    let mut revised = draft_body(
        "A pilot lands a plane in heavy fog.",
        "An aircraft reaches the ground.",
        "entailment",
    );
    revised["revises"] = json!(id);
    let (status, rev) = call(&app, "POST", "/api/drafts?granularity=term", Some(revised)).await;
    assert_eq!(status, StatusCode::OK);
    assert!(rev["report"]["components"]["C2"]["terms"].as_array().unwrap().len() >= 2);
    let rev_id = rev["draft_id"].as_str().unwrap().to_owned();
    assert_ne!(rev_id, id);
    assert_eq!(rev["revises"], id.as_str());

    call(&app, "POST", &format!("/api/drafts/{rev_id}/submit"), None).await;
    let (status, accepted) = call(
        &app,
        "POST",
        &format!("/api/samples/{rev_id}/decision"),
        Some(json!({"verdict": "accept", "validator_id": "v1"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(accepted["status"], "accepted");

    let (_, stats) = call(&app, "GET", "/api/dataset/stats", None).await;
    assert_eq!(stats["size"], 25);
    assert_eq!(stats["accepted"], 1);
    assert_eq!(stats["rejected"], 1);
    assert_eq!(stats["acceptance_rate"], 0.5);
    assert_eq!(stats["trajectory"].as_array().unwrap().len(), 1);

    // Re-deciding is a state error.
    let (status, err) = call(
        &app,
        "POST",
        &format!("/api/samples/{rev_id}/decision"),
        Some(json!({"verdict": "reject", "feedback": "changed my mind"})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "WrongState");

    // Replaying the log gives the same state, byte for byte.
    let live = serde_json::to_string(&*store.snapshot()).unwrap();
    let replayed = serde_json::to_string(&Store::replay_log(dir.path()).unwrap()).unwrap();
    assert_eq!(live, replayed);
    drop(app);
    drop(store);
    let reopened = Store::open(dir.path(), None, DqiConfig::default()).unwrap();
    assert_eq!(serde_json::to_string(&*reopened.snapshot()).unwrap(), live);
}

#[tokio::test]
async fn duplicate_draft_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let seed = seed();
    let twin = &seed.samples()[5];
    let (status, draft) = call(
        &app,
        "POST",
        "/api/drafts",
        Some(json!({"fields": twin.fields, "label": twin.label})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let c3 = &draft["report"]["components"]["C3"];
    assert_eq!(c3["color"], "red");
    let recs = c3["recommendations"].as_array().unwrap();
    assert!(
        recs.iter()
            .any(|r| r["kind"] == "near_duplicate" && r["target"] == twin.id.as_str()),
        "{recs:?}"
    );
}

#[tokio::test]
async fn error_mapping() {
    let dir = tempfile::tempdir().unwrap();
    let (app, store) = app(dir.path());

    let (status, err) = call(
        &app,
        "POST",
        "/api/drafts",
        Some(json!({"fields": {"premise": "x"}, "label": "neutral"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "SchemaMismatch");
    assert_eq!(store.snapshot().drafts.len(), 0);

    let (status, _) = call(&app, "POST", "/api/drafts", Some(json!({"nonsense": true}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, err) = call(&app, "POST", "/api/drafts/draft-999999/submit", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "UnknownDraft");

    let (_, d) = call(
        &app,
        "POST",
        "/api/drafts",
        Some(draft_body("A cook stirs soup.", "Food is made.", "entailment")),
    )
    .await;
    let id = d["draft_id"].as_str().unwrap().to_owned();
    let (status, _) = call(
        &app,
        "POST",
        &format!("/api/samples/{id}/decision"),
        Some(json!({"verdict": "accept"})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", &format!("/api/drafts/{id}/discard"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, err) = call(&app, "POST", &format!("/api/drafts/{id}/submit"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "WrongState");
}

#[tokio::test]
async fn trajectory_matches_recomputed_scores() {
    let dir = tempfile::tempdir().unwrap();
    let (app, store) = app(dir.path());
    let texts = [
        ("A baker slices warm bread.", "Bread is cut."),
        ("Four friends hike a steep trail.", "People are indoors."),
        ("A violinist tunes her instrument.", "Music may follow."),
    ];
    for (p, h) in texts {
        let (_, d) = call(&app, "POST", "/api/drafts", Some(draft_body(p, h, "neutral"))).await;
        let id = d["draft_id"].as_str().unwrap().to_owned();
        call(&app, "POST", &format!("/api/drafts/{id}/submit"), None).await;
        let (status, _) = call(
            &app,
            "POST",
            &format!("/api/samples/{id}/decision"),
            Some(json!({"verdict": "accept", "validator_id": "v2"})),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
    }
    let state = store.snapshot();
    assert_eq!(state.trajectory.len(), 3);
    let cfg = DqiConfig::default();
    let mut history = seed();
    for point in &state.trajectory {
        history.push(state.drafts[&point.sample_id].sample.clone()).unwrap();
        assert_eq!(point.size, history.len());
        assert_eq!(point.scores, component_scores(&history, None, &cfg).unwrap());
    }
}

#[test]
fn seed_needs_two_samples() {
    let dir = tempfile::tempdir().unwrap();
    let one = seed().select(&[0]);
    assert!(Store::open(dir.path(), Some(one), DqiConfig::default()).is_err());
    let empty_dir = tempfile::tempdir().unwrap();
    assert!(Store::open(empty_dir.path(), None, DqiConfig::default()).is_err());
}

#[test]
fn snapshot_plus_tail_matches_full_replay() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path(), Some(seed()), DqiConfig::default()).unwrap();
    for i in 0..40 {
        let sample = Sample::new(
            "",
            [
                ("premise", format!("a kite number {i} rises")),
                ("hypothesis", "wind blows".to_owned()),
            ],
            "neutral",
        );
        let d = store.post_draft(sample, None).unwrap();
        store.submit(&d.draft_id).unwrap();
    }
    assert!(dir.path().join(dataqual_service::SNAPSHOT_FILE).exists());
    let live = serde_json::to_string(&*store.snapshot()).unwrap();
    drop(store);
    assert_eq!(
        serde_json::to_string(&Store::replay(dir.path()).unwrap()).unwrap(),
        live
    );
    assert_eq!(
        serde_json::to_string(&Store::replay_log(dir.path()).unwrap()).unwrap(),
        live
    );
}
