use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use icr::gallery::{generate_synthetic, Dataset, SyntheticConfig};
use icr::interaction::{oracle_confirm, run_episode, EpisodeConfig, PolicySource, RetrievalEnv};
use icr::policy::{PolicyModel, StateLayout};
use icr::service::{router, AppState, ServiceConfig, ServicePolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

fn dataset(seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig::small(seed)).unwrap()
}

fn app_with(ds: Dataset, policy: ServicePolicy, config: ServiceConfig) -> (Arc<AppState>, Router) {
    let state = Arc::new(AppState::new(ds, policy, config).unwrap());
    (state.clone(), router(state))
}

fn app(ds: Dataset) -> Router {
    app_with(ds, ServicePolicy::QaSim, ServiceConfig::default()).1
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => builder.body(Body::from(b.to_string())).unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router, body: Value) -> Value {
    let (status, view) = call(app, "POST", "/api/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{view}");
    view
}

fn words(v: &Value) -> Vec<String> {
    v.as_array().unwrap().iter().map(|w| w.as_str().unwrap().to_owned()).collect()
}

#[tokio::test]
async fn health_reports_gallery() {
    let app = app(dataset(1));
    let (status, body) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["images"], 50);
    assert_eq!(body["policy"], "qasim");
}

#[tokio::test]
async fn demo_single_image_ranks_first() {
    let ds = generate_synthetic(&SyntheticConfig { n_images: 1, ..SyntheticConfig::small(2) }).unwrap();
    let id = ds.images[0].id.clone();
    let app = app(ds);
    let view = create(&app, json!({"queries": ["anything"], "mode": "demo", "target_id": id})).await;
    assert_eq!(view["target_rank"], 1);
    assert_eq!(view["round"], 0);
}

#[tokio::test]
async fn live_mode_has_no_target_rank() {
    let app = app(dataset(3));
    let view = create(&app, json!({"queries": ["man"]})).await;
    assert!(view.get("target_rank").is_none());
    assert_eq!(view["mode"], "live");
    let (status, err) =
        call(&app, "POST", "/api/sessions", Some(json!({"queries": ["man"], "target_id": "img00001"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "BadRequest");
}

#[tokio::test]
async fn identical_requests_give_distinct_sessions_with_identical_rankings() {
    let ds = dataset(4);
    let query = ds.images[3].captions[0].clone();
    let app = app(ds);
    let a = create(&app, json!({"queries": [query]})).await;
    let b = create(&app, json!({"queries": [query]})).await;
    assert_ne!(a["session_id"], b["session_id"]);
    assert_eq!(a["top_images"], b["top_images"]);
    assert_eq!(a["candidates"], b["candidates"]);
}

#[tokio::test]
async fn create_errors() {
    let app = app(dataset(5));
    let cases = [
        (json!({"queries": []}), "EmptyQuery"),
        (json!({"queries": ["  "]}), "EmptyQuery"),
        (json!({"queries": ["man"], "ranker": "bm25"}), "BadRanker"),
        (json!({"queries": ["man"], "mode": "demo"}), "UnknownTarget"),
        (json!({"queries": ["man"], "mode": "demo", "target_id": "nope"}), "UnknownTarget"),
        (json!({"queries": ["man"], "n_candidates": 0}), "BadRequest"),
    ];
    for (body, code) in cases {
        let (status, err) = call(&app, "POST", "/api/sessions", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(err["code"], code, "{body}");
        assert!(err["message"].is_string());
    }
    let (status, err) = call(&app, "POST", "/api/sessions", Some(json!("not an object"))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "BadRequest");
}

#[tokio::test]
async fn missing_policy_is_unavailable() {
    let (_, app) = app_with(dataset(6), ServicePolicy::None, ServiceConfig::default());
    let (status, err) = call(&app, "POST", "/api/sessions", Some(json!({"queries": ["man"]}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(err["code"], "PolicyNotLoaded");
}

#[tokio::test]
async fn all_negative_confirmation_damps_images() {
    let app = app(dataset(7));
    let view = create(&app, json!({"queries": ["man"], "n_candidates": 3})).await;
    let id = view["session_id"].as_str().unwrap();
    let negatives = words(&view["candidates"]);
    let (status, next) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/confirm"),
        Some(json!({"positive": [], "negative": negatives})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{next}");
    assert_eq!(next["round"], 1);
    let before: std::collections::HashMap<String, f64> = view["top_images"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| (t["id"].as_str().unwrap().to_owned(), t["score"].as_f64().unwrap()))
        .collect();
    for img in next["top_images"].as_array().unwrap() {
        let id = img["id"].as_str().unwrap();
        let Some(&old) = before.get(id) else { continue };
        let hit = words(&img["objects"]).iter().any(|o| negatives.contains(o));
        let expected = if hit { old * 0.9 } else { old };
        assert_eq!(img["score"].as_f64().unwrap(), expected, "{id}");
    }
}

#[tokio::test]
async fn skip_all_keeps_queries_and_issues_new_candidates() {
    let app = app(dataset(8));
    let view = create(&app, json!({"queries": ["man"], "n_candidates": 2})).await;
    let id = view["session_id"].as_str().unwrap();
    let (status, next) =
        call(&app, "POST", &format!("/api/sessions/{id}/confirm"), Some(json!({"positive": [], "negative": []}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(next["queries"], view["queries"]);
    assert_eq!(next["round"], 1);
    assert_eq!(next["candidates"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn confirm_errors() {
    let cfg = ServiceConfig { max_rounds: 1, ..Default::default() };
    let (_, app) = app_with(dataset(9), ServicePolicy::QaSim, cfg);
    let view = create(&app, json!({"queries": ["man"], "n_candidates": 2})).await;
    let id = view["session_id"].as_str().unwrap();
    let url = format!("/api/sessions/{id}/confirm");
    let cands = words(&view["candidates"]);

    let (status, err) = call(&app, "POST", &url, Some(json!({"positive": ["not-a-candidate"]}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidFeedback")));
    let (status, err) =
        call(&app, "POST", &url, Some(json!({"positive": [cands[0]], "negative": [cands[0]]}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidFeedback")));

    let body = json!({"positive": [cands[0]], "negative": [cands[1]], "round": 0});
    let (status, _) = call(&app, "POST", &url, Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (status, err) = call(&app, "POST", &url, Some(body)).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("RoundConflict")));
    let (status, err) = call(&app, "POST", &url, Some(json!({}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("MaxRoundsReached")));

    let (status, err) = call(&app, "POST", "/api/sessions/unknown/confirm", Some(json!({}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("SessionNotFound")));
}

#[tokio::test]
async fn get_and_delete() {
    let app = app(dataset(10));
    let view = create(&app, json!({"queries": ["man"]})).await;
    let url = format!("/api/sessions/{}", view["session_id"].as_str().unwrap());
    let (status, got) = call(&app, "GET", &url, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got, view);
    let (status, _) = call(&app, "DELETE", &url, None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, "GET", &url, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "DELETE", &url, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn gallery_images_round_trip() {
    let ds = dataset(11);
    let app = app(ds.clone());
    for img in ds.images.iter().take(5) {
        let (status, body) = call(&app, "GET", &format!("/api/gallery/images/{}", img.id), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["id"], img.id.as_str());
        assert_eq!(body["captions"], json!(img.captions));
        let objects: Vec<&str> = img.objects.iter().map(|&a| ds.vocab[a].as_str()).collect();
        assert_eq!(body["objects"], json!(objects));
    }
    let (status, err) = call(&app, "GET", "/api/gallery/images/missing", None).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("ImageNotFound")));
}

#[tokio::test]
async fn interleaved_sessions_do_not_interfere() {
    let ds = dataset(12);
    let (qa, qb) = (ds.images[0].captions[0].clone(), ds.images[9].captions[0].clone());
    let app = app(ds);
    let solo = {
        let a = create(&app, json!({"queries": [qa], "n_candidates": 3})).await;
        let url = format!("/api/sessions/{}/confirm", a["session_id"].as_str().unwrap());
        let neg = words(&a["candidates"]);
        call(&app, "POST", &url, Some(json!({"negative": neg}))).await.1
    };
    let a = create(&app, json!({"queries": [qa], "n_candidates": 3})).await;
    let b = create(&app, json!({"queries": [qb], "n_candidates": 3})).await;
    let url_b = format!("/api/sessions/{}/confirm", b["session_id"].as_str().unwrap());
    call(&app, "POST", &url_b, Some(json!({"positive": words(&b["candidates"])}))).await;
    let url_a = format!("/api/sessions/{}/confirm", a["session_id"].as_str().unwrap());
    let (_, after) = call(&app, "POST", &url_a, Some(json!({"negative": words(&a["candidates"])}))).await;
    assert_eq!(after["top_images"], solo["top_images"]);
    assert_eq!(after["candidates"], solo["candidates"]);
}

// Appending a confirmed word can lift a competitor that shares it, so only
// refinement-only rounds are guaranteed not to hurt the target.
#[tokio::test]
async fn zero_noise_demo_rank_improves_under_refinement() {
    let cfg = SyntheticConfig { n_images: 20, noise_sigma: 0.0, ..SyntheticConfig::small(13) };
    let ds = generate_synthetic(&cfg).unwrap();
    let app = app(ds.clone());
    for target in &ds.images {
        let mut view = create(
            &app,
            json!({"queries": [target.captions[0]], "mode": "demo", "target_id": target.id, "n_candidates": 3}),
        )
        .await;
        let url = format!("/api/sessions/{}/confirm", view["session_id"].as_str().unwrap());
        let target_words: Vec<&str> = target.objects.iter().map(|&a| ds.vocab[a].as_str()).collect();
        let initial = view["target_rank"].as_u64().unwrap();
        let mut rank = initial;
        while !view["finished"].as_bool().unwrap() {
            let (pos, neg): (Vec<String>, Vec<String>) =
                words(&view["candidates"]).into_iter().partition(|w| target_words.contains(&w.as_str()));
            let refinement_only = pos.is_empty();
            let (status, next) = call(&app, "POST", &url, Some(json!({"positive": pos, "negative": neg}))).await;
            assert_eq!(status, StatusCode::OK);
            let r = next["target_rank"].as_u64().unwrap();
            if refinement_only {
                assert!(r <= rank, "{}: rank went {rank} -> {r} on a negatives-only round", target.id);
            }
            rank = r;
            view = next;
        }
        assert!(rank <= initial, "{}: final rank {rank} worse than initial {initial}", target.id);
    }
}

#[tokio::test]
async fn scripted_oracle_client_replays_run_episode() {
    let ds = dataset(14);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let model = PolicyModel::init(StateLayout::TextMeanPlusDist, ds.feature_dim, ds.vocab_size(), 16, &mut rng);
    let env = RetrievalEnv::new(ds.clone()).unwrap();
    let (state, app) =
        app_with(ds.clone(), ServicePolicy::learned(model.clone(), &ds).unwrap(), ServiceConfig { max_rounds: 3, ..Default::default() });
    let config = EpisodeConfig { rounds: 3, n_candidates: 4, ..Default::default() };
    let cooc = icr::learning::build_cooccurrence(&ds).unwrap();
    let policy = PolicySource::Learned { model: &model, cooccurrence: Some(&cooc) };
    for t in [0usize, 7, 21, 33, 49] {
        let target = &ds.images[t];
        let trace = run_episode(&env, &target.id, 1, &policy, &config, t as u64).unwrap();
        let view = create(
            &app,
            json!({"queries": trace.initial_queries, "mode": "demo", "target_id": target.id, "n_candidates": 4}),
        )
        .await;
        assert_eq!(view["target_rank"].as_u64().unwrap() as usize, trace.initial_rank);
        let url = format!("/api/sessions/{}/confirm", view["session_id"].as_str().unwrap());
        let mut view = view;
        for record in &trace.rounds {
            let cands: Vec<usize> = words(&view["candidates"])
                .iter()
                .map(|w| ds.vocab.iter().position(|v| v == w).unwrap())
                .collect();
            assert_eq!(cands, record.proposed);
            let (pos, neg) = oracle_confirm(&cands, target);
            let to_words = |v: &[usize]| v.iter().map(|&a| ds.vocab[a].clone()).collect::<Vec<_>>();
            let (_, next) =
                call(&app, "POST", &url, Some(json!({"positive": to_words(&pos), "negative": to_words(&neg)}))).await;
            assert_eq!(next["target_rank"].as_u64().unwrap() as usize, record.target_rank);
            view = next;
        }
    }
    assert_eq!(state.session_count(), 5);
}

#[tokio::test]
async fn expired_sessions_are_evicted() {
    let cfg = ServiceConfig { session_ttl: Duration::ZERO, ..Default::default() };
    let (state, app) = app_with(dataset(15), ServicePolicy::Random, cfg);
    let view = create(&app, json!({"queries": ["man"]})).await;
    std::thread::sleep(Duration::from_millis(5));
    let (status, _) = call(&app, "GET", &format!("/api/sessions/{}", view["session_id"].as_str().unwrap()), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    create(&app, json!({"queries": ["man"]})).await;
    std::thread::sleep(Duration::from_millis(5));
    assert_eq!(state.evict_expired(), 1);
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn session_log_appends_events() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.jsonl");
    let cfg = ServiceConfig { session_log: Some(path.clone()), ..Default::default() };
    let (_, app) = app_with(dataset(16), ServicePolicy::QaSim, cfg);
    let view = create(&app, json!({"queries": ["man"]})).await;
    let id = view["session_id"].as_str().unwrap();
    call(&app, "POST", &format!("/api/sessions/{id}/confirm"), Some(json!({}))).await;
    call(&app, "DELETE", &format!("/api/sessions/{id}"), None).await;
    let text = std::fs::read_to_string(path).unwrap();
    let events: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["event"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(events, vec!["create", "confirm", "delete"]);
}

#[tokio::test]
async fn unknown_routes_use_the_error_shape() {
    let app = app(dataset(17));
    let (status, err) = call(&app, "GET", "/api/nothing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "NotFound");
}
