use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use partbridge::imaging::GrayImage;
use partbridge::pipeline::{run_all, run_data, ModelSet, RunConfig, Workspace};
use partbridge_service::api::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

const BUDGET: Duration = Duration::from_secs(2);

fn smoke_workspace(dir: &std::path::Path) -> Workspace {
    let mut c = RunConfig::smoke();
    c.paths.data = dir.join("data");
    c.paths.models = dir.join("models");
    Workspace::new(c).unwrap()
}

/// One trained smoke workspace per test binary.
fn trained() -> &'static Workspace {
    static WS: OnceLock<(tempfile::TempDir, Workspace)> = OnceLock::new();
    &WS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let ws = smoke_workspace(dir.path());
        run_all(&ws).unwrap();
        (dir, ws)
    })
    .1
}

fn app() -> Router {
    static STATE: OnceLock<Arc<AppState>> = OnceLock::new();
    router(STATE.get_or_init(|| Arc::new(AppState::load(trained(), false))).clone())
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let start = Instant::now();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    assert!(start.elapsed() < BUDGET, "{method} {uri} took {:?}", start.elapsed());
    (status, bytes)
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = send(app, "GET", uri, None).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, b) = send(app, "POST", uri, Some(body.to_string())).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn fetch_png(app: &Router, url: &str) -> GrayImage {
    let (s, b) = send(app, "GET", url, None).await;
    assert_eq!(s, StatusCode::OK);
    GrayImage::from_png(&b).unwrap()
}

async fn first_test_latent(app: &Router) -> (String, String) {
    let (_, shapes) = get_json(app, "/api/shapes?split=test").await;
    let id = shapes["shapes"][0]["id"].as_u64().unwrap();
    let (s, inv) = post(app, "/api/invert", json!({ "shape_id": id })).await;
    assert_eq!(s, StatusCode::OK, "{inv}");
    (inv["latent_id"].as_str().unwrap().to_string(), inv["image"].as_str().unwrap().to_string())
}

#[tokio::test]
async fn meta_describes_the_model_set() {
    let (s, meta) = get_json(&app(), "/api/meta").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(meta["category"], "chair");
    assert_eq!(meta["views"], 12);
    assert_eq!(meta["dims"]["image_size"], 16);
    assert_eq!(meta["resizable_parts"], json!(["back", "seat"]));
    assert!(meta["parts"].as_array().unwrap().len() >= 3);
}

#[tokio::test]
async fn gallery_lists_split_with_byte_exact_thumbnails() {
    let app = app();
    let ws = trained();
    let (s, shapes) = get_json(&app, "/api/shapes?split=test").await;
    assert_eq!(s, StatusCode::OK);
    let list = shapes["shapes"].as_array().unwrap();
    let models = ModelSet::load(ws).unwrap();
    let expected = models.manifest.records.iter().filter(|r| r.split == partbridge::shapegen::Split::Test).count();
    assert_eq!(list.len(), expected);
    let id = list[0]["id"].as_u64().unwrap() as usize;
    let thumb = fetch_png(&app, list[0]["thumbnail"].as_str().unwrap()).await;
    assert_eq!(thumb, models.shape_image(id).unwrap().unwrap());
    let (s, _) = get_json(&app, "/api/shapes?split=validation").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn invert_then_view_round_trip() {
    let app = app();
    let (latent, _) = first_test_latent(&app).await;
    let (s, out) = post(&app, "/api/view", json!({ "latent_id": latent, "view_index": 3 })).await;
    assert_eq!(s, StatusCode::OK, "{out}");
    assert_eq!(out["view_index"], 3);
    let img = fetch_png(&app, out["image"].as_str().unwrap()).await;
    assert_eq!((img.width(), img.height()), (16, 16));
}

#[tokio::test]
async fn invert_accepts_base64_png() {
    let app = app();
    let models = ModelSet::load(trained()).unwrap();
    let id = models.manifest.records[0].id;
    let png = models.shape_image(id).unwrap().unwrap().to_png().unwrap();
    let b64 = base64::engine::general_purpose::STANDARD.encode(png);
    let (s, by_image) = post(&app, "/api/invert", json!({ "image": b64 })).await;
    assert_eq!(s, StatusCode::OK, "{by_image}");
    let (_, by_id) = post(&app, "/api/invert", json!({ "shape_id": id })).await;
    assert_eq!(by_image["latent_id"], by_id["latent_id"]);
}

#[tokio::test]
async fn invalid_requests_map_to_documented_statuses() {
    let app = app();
    let (latent, _) = first_test_latent(&app).await;
    let cases = [
        ("/api/view", json!({ "latent_id": latent, "view_index": 12 }), StatusCode::UNPROCESSABLE_ENTITY),
        ("/api/view", json!({ "latent_id": "nope", "view_index": 1 }), StatusCode::NOT_FOUND),
        ("/api/view", json!({ "latent_id": latent }), StatusCode::BAD_REQUEST),
        ("/api/replace", json!({ "src_latent_id": latent, "tgt_latent_id": latent, "part": "wing" }), StatusCode::UNPROCESSABLE_ENTITY),
        ("/api/replace", json!({ "src_latent_id": latent, "tgt_latent_id": "nope", "part": "back" }), StatusCode::NOT_FOUND),
        ("/api/resize", json!({ "latent_id": latent, "part": "leg", "weight": 1.0 }), StatusCode::UNPROCESSABLE_ENTITY),
        ("/api/resize", json!({ "latent_id": latent, "part": "back", "weight": 1.0, "mode": "sideways" }), StatusCode::BAD_REQUEST),
        ("/api/invert", json!({ "shape_id": 100000 }), StatusCode::NOT_FOUND),
        ("/api/invert", json!({ "image": "***" }), StatusCode::BAD_REQUEST),
        ("/api/invert", json!({}), StatusCode::BAD_REQUEST),
    ];
    for (uri, body, expected) in cases {
        let (s, out) = post(&app, uri, body.clone()).await;
        assert_eq!(s, expected, "{uri} {body}: {out}");
        assert!(out["error"].is_string());
    }
    let (s, _) = send(&app, "POST", "/api/view", Some("{not json".into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = send(&app, "GET", "/api/image/0000", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn wrong_image_size_is_unprocessable() {
    let png = GrayImage::zeros(8, 8).to_png().unwrap();
    let b64 = base64::engine::general_purpose::STANDARD.encode(png);
    let (s, _) = post(&app(), "/api/invert", json!({ "image": b64 })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn zero_weight_raw_resize_keeps_the_image() {
    let app = app();
    let (latent, image) = first_test_latent(&app).await;
    let (s, out) = post(&app, "/api/resize", json!({ "latent_id": latent, "part": "back", "weight": 0.0, "mode": "raw" })).await;
    assert_eq!(s, StatusCode::OK, "{out}");
    assert_eq!(out["latent_id"], latent);
    assert_eq!(out["image"], image);
    let (s, moved) = post(&app, "/api/resize", json!({ "latent_id": latent, "part": "seat", "weight": 1.0 })).await;
    assert_eq!(s, StatusCode::OK);
    assert_ne!(moved["latent_id"], latent);
}

#[tokio::test]
async fn replace_is_pure_and_replayable() {
    let app = app();
    let (_, shapes) = get_json(&app, "/api/shapes?split=train").await;
    let ids: Vec<u64> = shapes["shapes"].as_array().unwrap().iter().take(2).map(|s| s["id"].as_u64().unwrap()).collect();
    let mut latents = Vec::new();
    for id in ids {
        let (_, inv) = post(&app, "/api/invert", json!({ "shape_id": id })).await;
        latents.push(inv["latent_id"].as_str().unwrap().to_string());
    }
    let body = json!({ "src_latent_id": latents[0], "tgt_latent_id": latents[1], "part": "back" });
    let (s, a) = post(&app, "/api/replace", body.clone()).await;
    assert_eq!(s, StatusCode::OK, "{a}");
    let (_, b) = post(&app, "/api/replace", body).await;
    assert_eq!(a, b);
    assert!(a["view_index"].as_u64().unwrap() < 12);
    fetch_png(&app, a["image"].as_str().unwrap()).await;
}

#[tokio::test]
async fn incomplete_model_set_is_a_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let ws = smoke_workspace(dir.path());
    run_data(&ws).unwrap();
    let app = router(Arc::new(AppState::load(&ws, false)));
    let (s, out) = get_json(&app, "/api/meta").await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(out["error"].as_str().unwrap().contains("partvae"), "{out}");
    let (s, _) = post(&app, "/api/view", json!({ "latent_id": "x", "view_index": 0 })).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn debug_mode_echoes_latents() {
    let app = router(Arc::new(AppState::load(trained(), true)));
    let (_, out) = post(&app, "/api/invert", json!({ "shape_id": 0 })).await;
    assert_eq!(out["latent"].as_array().unwrap().len(), 8);
}
