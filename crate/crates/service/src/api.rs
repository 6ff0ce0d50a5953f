//! JSON-over-HTTP access to a trained model set. Latents live server side
//! under content-derived ids; every edit is pure and returns a new id.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use partbridge::imaging::GrayImage;
use partbridge::manipulate::{replace_part, set_view, ResizeMode};
use partbridge::mapping::{ViewVector, VIEW_COUNT};
use partbridge::pipeline::{ModelSet, Workspace};
use partbridge::shapegen::Split;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cache::{content_id, ContentStore};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Loaded models plus the content-addressed caches shared by all requests.
pub struct AppState {
    models: Result<Arc<ModelSet>, String>,
    latents: ContentStore<Vec<f32>>,
    images: ContentStore<Vec<u8>>,
    /// Pixel digest of an inverted image -> latent id.
    inversions: ContentStore<String>,
    /// Shape id -> thumbnail image id.
    thumbnails: ContentStore<String>,
    debug: bool,
}

impl AppState {
    /// Never fails: an unusable model set is reported as 409 per request.
    pub fn load(ws: &Workspace, debug: bool) -> Self {
        let models = ModelSet::load(ws).map(Arc::new).map_err(|e| format!("model set incomplete: {e}"));
        if let Err(e) = &models {
            log::warn!("{e}");
        }
        Self {
            models,
            latents: ContentStore::default(),
            images: ContentStore::default(),
            inversions: ContentStore::default(),
            thumbnails: ContentStore::default(),
            debug,
        }
    }

    fn models(&self) -> ApiResult<Arc<ModelSet>> {
        self.models.clone().map_err(|e| ApiError::new(StatusCode::CONFLICT, e))
    }

    fn latent(&self, id: &str) -> ApiResult<Arc<Vec<f32>>> {
        self.latents.get(id).ok_or_else(|| ApiError::not_found(format!("unknown latent id `{id}`")))
    }

    fn store_latent(&self, w: Vec<f32>) -> String {
        let bytes: Vec<u8> = w.iter().flat_map(|v| v.to_le_bytes()).collect();
        let id = content_id(&bytes);
        self.latents.insert(id.clone(), w);
        id
    }

    fn store_png(&self, png: Vec<u8>) -> String {
        let id = content_id(&png);
        self.images.insert(id.clone(), png);
        id
    }

    fn edit_response(&self, latent: Vec<f32>, image: &GrayImage, view: Option<usize>) -> ApiResult<EditResponse> {
        let png = image.to_png().map_err(ApiError::internal)?;
        let image_id = self.store_png(png);
        let echo = self.debug.then(|| latent.clone());
        Ok(EditResponse {
            latent_id: self.store_latent(latent),
            image: format!("/api/image/{image_id}"),
            image_id,
            view_index: view,
            latent: echo,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditResponse {
    pub latent_id: String,
    pub image: String,
    pub image_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub view_index: Option<usize>,
    /// Raw latent, only when the server runs with debugging enabled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f32>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InvertRequest {
    image: Option<String>,
    shape_id: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplaceRequest {
    src_latent_id: String,
    tgt_latent_id: String,
    part: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResizeRequest {
    latent_id: String,
    part: String,
    weight: f64,
    #[serde(default = "default_mode")]
    mode: ResizeMode,
}

fn default_mode() -> ResizeMode {
    ResizeMode::Finetuner
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewRequest {
    latent_id: String,
    view_index: usize,
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn part_index(models: &ModelSet, name: &str) -> ApiResult<usize> {
    let category = models.manifest.category;
    category.part_index(name).ok_or_else(|| {
        ApiError::unprocessable(format!("`{name}` is not a part; expected one of {:?}", category.part_names()))
    })
}

/// Runs model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

async fn meta(State(state): State<Arc<AppState>>) -> ApiResult<Json<serde_json::Value>> {
    let m = state.models()?;
    let category = m.manifest.category;
    let resizable: Vec<&str> = m.finetuners.iter().map(|f| category.part_names()[f.part]).collect();
    Ok(Json(json!({
        "category": category.name(),
        "parts": category.part_names(),
        "resizable_parts": resizable,
        "modes": ["finetuner", "raw"],
        "views": VIEW_COUNT,
        "view_step_degrees": 360 / VIEW_COUNT,
        "dims": {
            "latent": m.generator.latent_dim(),
            "part_code": m.mapping.z,
            "parts": m.mapping.n_c,
            "image_size": m.generator.size,
        },
    })))
}

async fn shapes(State(state): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<serde_json::Value>> {
    let m = state.models()?;
    let split = match q.get("split").map(String::as_str).unwrap_or("test") {
        "test" => Split::Test,
        "train" => Split::Train,
        other => return Err(ApiError::bad_request(format!("unknown split `{other}`"))),
    };
    let ids: Vec<usize> = m.manifest.records.iter().filter(|r| r.split == split).map(|r| r.id).collect();
    let st = state.clone();
    let listed = blocking(move || {
        ids.into_iter()
            .map(|id| {
                let image_id = thumbnail(&st, &m, id)?.ok_or_else(|| ApiError::internal("manifest record vanished"))?;
                Ok(json!({ "id": id, "thumbnail": format!("/api/image/{image_id}") }))
            })
            .collect::<ApiResult<Vec<_>>>()
    })
    .await?;
    let name = if split == Split::Test { "test" } else { "train" };
    Ok(Json(json!({ "split": name, "shapes": listed })))
}

/// Canonical-view dataset render of shape `id`, served byte for byte.
fn thumbnail(state: &AppState, m: &ModelSet, id: usize) -> ApiResult<Option<String>> {
    let key = id.to_string();
    if let Some(image_id) = state.thumbnails.get(&key) {
        return Ok(Some((*image_id).clone()));
    }
    let Some(record) = m.manifest.record(id) else {
        return Ok(None);
    };
    let entry = record.images.iter().find(|e| e.yaw == id % VIEW_COUNT).unwrap_or(&record.images[0]);
    let png = std::fs::read(m.data_dir.join(&entry.path)).map_err(ApiError::internal)?;
    let image_id = state.store_png(png);
    state.thumbnails.insert(key, image_id.clone());
    Ok(Some(image_id))
}

async fn invert(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<EditResponse>> {
    let m = state.models()?;
    let req: InvertRequest = parse(&body)?;
    let image = match (req.image, req.shape_id) {
        (Some(b64), None) => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| ApiError::bad_request(format!("image is not base64: {e}")))?;
            GrayImage::from_png(&bytes).map_err(|e| ApiError::bad_request(format!("image is not a PNG: {e}")))?
        }
        (None, Some(id)) => m.shape_image(id).map_err(ApiError::internal)?.ok_or_else(|| ApiError::not_found(format!("unknown shape id {id}")))?,
        _ => return Err(ApiError::bad_request("give exactly one of `image` and `shape_id`")),
    };
    let size = m.generator.size;
    if image.width() != size || image.height() != size {
        return Err(ApiError::unprocessable(format!("image must be {size}x{size}, got {}x{}", image.width(), image.height())));
    }
    blocking(move || {
        let key = content_id(&image.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>());
        let latent = match state.inversions.get(&key).and_then(|id| state.latents.get(&id)) {
            Some(w) => (*w).clone(),
            None => {
                let (w, _) = m.invert(&image).map_err(ApiError::internal)?;
                w
            }
        };
        let image = m.generator.synthesize(&latent).map_err(ApiError::internal)?;
        let out = state.edit_response(latent, &image, None)?;
        state.inversions.insert(key, out.latent_id.clone());
        Ok(Json(out))
    })
    .await
}

async fn replace(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<EditResponse>> {
    let m = state.models()?;
    let req: ReplaceRequest = parse(&body)?;
    let part = part_index(&m, &req.part)?;
    let (src, tgt) = (state.latent(&req.src_latent_id)?, state.latent(&req.tgt_latent_id)?);
    blocking(move || {
        let out = replace_part(&m.generator, &m.mapping, &m.views, &src, &tgt, part).map_err(ApiError::internal)?;
        Ok(Json(state.edit_response(out.latent, &out.image, Some(out.view.index()))?))
    })
    .await
}

async fn resize(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<EditResponse>> {
    let m = state.models()?;
    let req: ResizeRequest = parse(&body)?;
    let part = part_index(&m, &req.part)?;
    if m.finetuner(part).is_none() {
        return Err(ApiError::unprocessable(format!("no resize trajectory is trained for `{}`", req.part)));
    }
    if !req.weight.is_finite() {
        return Err(ApiError::unprocessable("weight must be finite"));
    }
    let w = state.latent(&req.latent_id)?;
    blocking(move || {
        let finetuner = m.finetuner(part).expect("checked above");
        let latent = finetuner.resized_latent(&w, req.weight, req.mode).map_err(ApiError::internal)?;
        let image = m.generator.synthesize(&latent).map_err(ApiError::internal)?;
        Ok(Json(state.edit_response(latent, &image, None)?))
    })
    .await
}

async fn view(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<EditResponse>> {
    let m = state.models()?;
    let req: ViewRequest = parse(&body)?;
    let view = ViewVector::new(req.view_index).map_err(|_| ApiError::unprocessable(format!("view_index must be below {VIEW_COUNT}")))?;
    let w = state.latent(&req.latent_id)?;
    blocking(move || {
        let out = set_view(&m.generator, &m.mapping, &w, view).map_err(ApiError::internal)?;
        Ok(Json(state.edit_response(out.latent, &out.image, Some(view.index()))?))
    })
    .await
}

async fn image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let png = state.images.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown image id `{id}`")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], (*png).clone()).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/shapes", get(shapes))
        .route("/api/invert", post(invert))
        .route("/api/replace", post(replace))
        .route("/api/resize", post(resize))
        .route("/api/view", post(view))
        .route("/api/image/{id}", get(image))
        .with_state(state)
}
