//! HTTP front end for a loaded denoiser.
//!
//! Routes: `POST /api/denoise`, `GET /api/model`, `GET /api/health`, and the
//! browser UI at `/`. Images travel as base64-encoded PNM inside JSON.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use gtcnn_core::eval::denoise_image;
use gtcnn_core::model::{format_count, param_count};
use gtcnn_core::{weights, GateKind, GtcnnModel, Modulation, PnmImage};
use serde::Serialize;
use serde_json::{Map, Value};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

pub const DEFAULT_MAX_PIXELS: usize = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("loading model: {0}")]
    Model(#[from] gtcnn_core::Error),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shared, read-only request context.
#[derive(Clone)]
pub struct AppState {
    model: Option<Arc<GtcnnModel<f32>>>,
    max_pixels: usize,
}

impl AppState {
    pub fn new(model: Option<GtcnnModel<f32>>, max_pixels: usize) -> Self {
        AppState {
            model: model.map(Arc::new),
            max_pixels,
        }
    }
}

/// Error body: `{"error": message, "field": name-or-null}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    field: Option<&'static str>,
    message: String,
}

impl ApiError {
    fn bad(field: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            field: Some(field),
            message: message.into(),
        }
    }

    fn status(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            field: None,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message, "field": self.field });
        (self.status, Json(body)).into_response()
    }
}

fn loaded(state: &AppState) -> Result<&Arc<GtcnnModel<f32>>, ApiError> {
    state
        .model
        .as_ref()
        .ok_or_else(|| ApiError::status(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"))
}

#[derive(Serialize)]
struct ConfigInfo {
    c_in: usize,
    channels: usize,
    depth: usize,
    stages: usize,
    gate: &'static str,
    use_1x1: bool,
}

#[derive(Serialize)]
struct LambdaRange {
    min: f64,
    max: f64,
    default: f64,
}

#[derive(Serialize)]
struct ModelInfo {
    config: ConfigInfo,
    param_count: usize,
    param_count_display: String,
    stages: Vec<usize>,
    layers: Vec<usize>,
    default_stage: Option<usize>,
    default_layer: usize,
    lambda: LambdaRange,
}

fn default_stage(stages: usize) -> Option<usize> {
    stages.checked_sub(1).map(|last| Modulation::DEFAULT_STAGE.min(last))
}

async fn model_info(State(state): State<AppState>) -> Result<Json<ModelInfo>, ApiError> {
    let model = loaded(&state)?;
    let c = *model.config();
    let count = param_count(&c);
    Ok(Json(ModelInfo {
        config: ConfigInfo {
            c_in: c.c_in,
            channels: c.channels,
            depth: c.depth,
            stages: c.stages,
            gate: match c.gate {
                GateKind::ChannelSoftmax => "softmax",
                GateKind::Sigmoid => "sigmoid",
            },
            use_1x1: c.use_1x1,
        },
        param_count: count,
        param_count_display: format_count(count),
        stages: (0..c.stages).collect(),
        layers: (0..c.depth).collect(),
        default_stage: default_stage(c.stages),
        default_layer: Modulation::DEFAULT_LAYER,
        lambda: LambdaRange {
            min: Modulation::LAMBDA_MIN,
            max: Modulation::LAMBDA_MAX,
            default: 0.0,
        },
    }))
}

/// A validated `/api/denoise` body.
#[derive(Clone, Debug, PartialEq)]
struct DenoiseRequest {
    image: PnmImage,
    sigma: Option<f64>,
    lambda: f64,
    stage: Option<usize>,
    layer: usize,
    seed: u64,
}

fn number(obj: &Map<String, Value>, field: &'static str) -> Result<Option<f64>, ApiError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .map(Some)
            .ok_or_else(|| ApiError::bad(field, format!("{field} must be a finite number"))),
    }
}

fn index(obj: &Map<String, Value>, field: &'static str) -> Result<Option<u64>, ApiError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| ApiError::bad(field, format!("{field} must be a non-negative integer"))),
    }
}

fn parse_request(body: &[u8]) -> Result<DenoiseRequest, ApiError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError::bad("body", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ApiError::bad("body", "request body must be a JSON object"))?;

    let encoded = match obj.get("image") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(ApiError::bad("image", "image must be a base64 string")),
        None => return Err(ApiError::bad("image", "missing field image")),
    };
    let bytes = BASE64
        .decode(encoded.trim())
        .map_err(|e| ApiError::bad("image", format!("image is not valid base64: {e}")))?;
    let image = PnmImage::decode(&bytes).map_err(|e| ApiError::bad("image", e.to_string()))?;

    let sigma = number(obj, "sigma")?;
    if sigma.is_some_and(|s| s < 0.0) {
        return Err(ApiError::bad("sigma", "sigma must be >= 0"));
    }
    let lambda = number(obj, "lambda")?.unwrap_or(0.0);
    if !(Modulation::LAMBDA_MIN..=Modulation::LAMBDA_MAX).contains(&lambda) {
        return Err(ApiError::bad(
            "lambda",
            format!(
                "lambda {lambda} outside [{}, {}]",
                Modulation::LAMBDA_MIN,
                Modulation::LAMBDA_MAX
            ),
        ));
    }
    Ok(DenoiseRequest {
        image,
        sigma,
        lambda,
        stage: index(obj, "stage")?.map(|s| s as usize),
        layer: index(obj, "layer")?.unwrap_or(0) as usize,
        seed: index(obj, "seed")?.unwrap_or(0),
    })
}

#[derive(Serialize)]
struct DenoiseResponse {
    image: String,
    /// The synthesized noisy input, present when `sigma` was given.
    #[serde(skip_serializing_if = "Option::is_none")]
    noisy_image: Option<String>,
    psnr_noisy: Option<f64>,
    psnr_denoised: Option<f64>,
    width: usize,
    height: usize,
    channels: usize,
    elapsed_ms: f64,
}

async fn denoise(State(state): State<AppState>, body: Bytes) -> Result<Json<DenoiseResponse>, ApiError> {
    let model = Arc::clone(loaded(&state)?);
    let req = parse_request(&body)?;
    let config = *model.config();

    let pixels = req.image.width * req.image.height;
    if pixels > state.max_pixels {
        return Err(ApiError::status(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("image has {pixels} pixels; the limit is {}", state.max_pixels),
        ));
    }
    if req.image.channels != config.c_in {
        return Err(ApiError::bad(
            "image",
            format!(
                "image has {} channels; the model expects {}",
                req.image.channels, config.c_in
            ),
        ));
    }
    if req.layer >= config.depth {
        return Err(ApiError::bad(
            "layer",
            format!("layer {} out of range 0..{}", req.layer, config.depth),
        ));
    }
    if let Some(stage) = req.stage {
        if stage >= config.stages {
            return Err(ApiError::bad(
                "stage",
                format!("stage {stage} out of range 0..{}", config.stages),
            ));
        }
    }
    let modulation = if req.lambda == 0.0 {
        None
    } else {
        let stage = req
            .stage
            .or(default_stage(config.stages))
            .ok_or_else(|| ApiError::bad("stage", "model has no texture-layer stages to modulate"))?;
        Some(Modulation::new(req.lambda, stage, req.layer))
    };

    let start = Instant::now();
    let (width, height, channels) = (req.image.width, req.image.height, req.image.channels);
    let outcome = tokio::task::spawn_blocking(move || {
        denoise_image(&model, &req.image, req.sigma, req.seed, modulation.as_ref())
    })
    .await
    .map_err(|e| ApiError::status(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(|e| ApiError::status(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;

    Ok(Json(DenoiseResponse {
        image: BASE64.encode(outcome.output.encode()),
        noisy_image: outcome.noisy.map(|n| BASE64.encode(n.encode())),
        psnr_noisy: outcome.psnr_noisy,
        psnr_denoised: outcome.psnr_denoised,
        width,
        height,
        channels,
        elapsed_ms,
    }))
}

async fn health() -> &'static str {
    "ok"
}

const PLACEHOLDER_UI: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>GTCNN denoiser</title></head>
<body>
<h1>GTCNN denoiser</h1>
<p>No UI bundle is configured. Start the server with <code>--ui-dir</code> pointing at built assets,
or use the JSON API directly:</p>
<ul>
<li><code>GET /api/health</code></li>
<li><code>GET /api/model</code></li>
<li><code>POST /api/denoise</code></li>
</ul>
</body></html>
";

/// Base64 inflates by 4/3; the rest covers the JSON envelope and PNM header.
fn body_limit(max_pixels: usize) -> usize {
    let raw = max_pixels * 3;
    raw.div_ceil(3) * 4 + (64 << 10)
}

/// Builds the application. `ui_dir`, when given, is served at `/`.
pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    let limit = body_limit(state.max_pixels);
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/model", get(model_info))
        .route("/api/denoise", post(denoise))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state);
    let app = match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER_UI) })),
    };
    app.layer(cors)
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    /// Weights file; without one every model route answers 503.
    pub model: Option<PathBuf>,
    pub bind: SocketAddr,
    pub max_pixels: usize,
    pub ui_dir: Option<PathBuf>,
}

/// Loads the model, then listens until Ctrl-C.
pub async fn serve(opts: ServeOptions) -> Result<(), ServiceError> {
    let model = opts.model.as_ref().map(weights::load).transpose()?;
    let app = router(AppState::new(model, opts.max_pixels), opts.ui_dir);
    let listener = tokio::net::TcpListener::bind(opts.bind)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: opts.bind,
            source,
        })?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(opts: ServeOptions) -> Result<(), ServiceError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(opts))
}
