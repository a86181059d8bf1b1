//! HTTP view server for a trained radiance field.
//!
//! | method | path          | body                                  |
//! |--------|---------------|---------------------------------------|
//! | GET    | `/api/meta`   | JSON [`SceneMeta`]                    |
//! | POST   | `/api/render` | JSON [`RenderRequest`] → PNG          |
//! | GET    | `/api/cloud`  | PLY overlay, byte-identical to disk   |
//!
//! Everything else is served from the optional static directory. Render
//! responses carry the render time in the `x-render-ms` header; invalid
//! requests get `400` with a JSON `{"field", "error"}` body.

use std::io::Cursor;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::ImageFormat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use panorad_core::geometry::{Aabb, EquirectCamera, PinholeCamera, Pose};
use panorad_core::imaging::to_u8;
use panorad_core::nerf::{checkpoint, render_panorama_view, render_pinhole_view, RadianceField};

pub const MIN_DIM: u32 = 16;
pub const MAX_DIM: u32 = 2048;
pub const MIN_SAMPLES: u32 = 4;
pub const MAX_SAMPLES: u32 = 256;
pub const RENDER_MS_HEADER: &str = "x-render-ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirePose {
    /// `(w, x, y, z)`, camera → world.
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    #[default]
    Panorama,
    Perspective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub pose: WirePose,
    #[serde(default)]
    pub mode: RenderMode,
    /// Full-resolution size; the image is `width / rung` × `height / rung`.
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view in degrees, perspective mode only.
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    pub samples: u32,
    #[serde(default = "default_rung")]
    pub rung: u32,
}

fn default_fov() -> f64 {
    90.0
}

fn default_rung() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub bounds: Aabb,
    pub start_pose: WirePose,
    /// First 16 hex digits of the checkpoint's SHA-256.
    pub checkpoint_id: String,
    pub overlays: Vec<String>,
    pub t_near: f64,
    pub t_far: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub error: String,
}

impl FieldError {
    fn new(field: &str, error: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            error: error.into(),
        }
    }
}

enum Camera {
    Panorama(EquirectCamera),
    Perspective(PinholeCamera),
}

struct Job {
    pose: Pose,
    camera: Camera,
    samples: usize,
}

impl RenderRequest {
    fn check(&self) -> Result<Job, FieldError> {
        let p = &self.pose;
        if !p.quaternion.iter().chain(&p.translation).all(|x| x.is_finite()) {
            return Err(FieldError::new("pose", "pose values must be finite"));
        }
        let norm = p.quaternion.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            return Err(FieldError::new("pose.quaternion", "quaternion must be non-zero"));
        }
        let q = p.quaternion.map(|x| x / norm);
        let pose = Pose::from_wxyz(q, p.translation).map_err(|e| FieldError::new("pose", e.to_string()))?;
        for (name, v) in [("width", self.width), ("height", self.height)] {
            if !(MIN_DIM..=MAX_DIM).contains(&v) {
                return Err(FieldError::new(
                    name,
                    format!("{name} {v} outside [{MIN_DIM}, {MAX_DIM}]"),
                ));
            }
        }
        if !(MIN_SAMPLES..=MAX_SAMPLES).contains(&self.samples) {
            return Err(FieldError::new(
                "samples",
                format!("samples {} outside [{MIN_SAMPLES}, {MAX_SAMPLES}]", self.samples),
            ));
        }
        if ![1, 2, 4].contains(&self.rung) {
            return Err(FieldError::new("rung", format!("rung {} must be 1, 2 or 4", self.rung)));
        }
        if self.width % self.rung != 0 || self.height % self.rung != 0 {
            return Err(FieldError::new(
                "rung",
                format!("{}x{} is not divisible by rung {}", self.width, self.height, self.rung),
            ));
        }
        let (w, h) = (self.width / self.rung, self.height / self.rung);
        let camera = match self.mode {
            RenderMode::Panorama => {
                if self.width != 2 * self.height {
                    return Err(FieldError::new("width", "panorama width must be twice the height"));
                }
                Camera::Panorama(EquirectCamera::new(w, h).map_err(|e| FieldError::new("width", e.to_string()))?)
            }
            RenderMode::Perspective => {
                if self.width != self.height {
                    return Err(FieldError::new("width", "perspective images must be square"));
                }
                if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
                    return Err(FieldError::new(
                        "fov_deg",
                        format!("fov {} outside (0, 180)", self.fov_deg),
                    ));
                }
                Camera::Perspective(
                    PinholeCamera::new(w, h, self.fov_deg.to_radians())
                        .map_err(|e| FieldError::new("fov_deg", e.to_string()))?,
                )
            }
        };
        Ok(Job {
            pose,
            camera,
            samples: self.samples as usize,
        })
    }
}

/// Read-only state shared by all handlers.
pub struct Scene {
    pub field: RadianceField<f32>,
    pub meta: SceneMeta,
    pub cloud: Option<Bytes>,
    pub static_dir: Option<PathBuf>,
}

impl Scene {
    pub fn new(
        checkpoint_bytes: &[u8],
        cloud: Option<Vec<u8>>,
        static_dir: Option<PathBuf>,
    ) -> panorad_core::Result<Self> {
        let field = checkpoint::from_bytes(checkpoint_bytes)?;
        let digest = Sha256::digest(checkpoint_bytes);
        let checkpoint_id: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        let c = field.bounds.center();
        let meta = SceneMeta {
            bounds: field.bounds,
            start_pose: WirePose {
                quaternion: [1.0, 0.0, 0.0, 0.0],
                translation: [c.x, c.y, c.z],
            },
            checkpoint_id,
            overlays: cloud.iter().map(|_| "cloud".to_string()).collect(),
            t_near: field.t_near,
            t_far: field.t_far,
        };
        Ok(Self {
            field,
            meta,
            cloud: cloud.map(Bytes::from),
            static_dir,
        })
    }

    pub fn load(checkpoint: &Path, cloud: Option<&Path>, static_dir: Option<PathBuf>) -> panorad_core::Result<Self> {
        let bytes = std::fs::read(checkpoint)?;
        let cloud = match cloud {
            Some(p) => {
                let bytes = std::fs::read(p)?;
                // refuse to serve something the viewer cannot parse
                panorad_core::pointcloud::PointCloud::from_ply(&bytes, p)?;
                Some(bytes)
            }
            None => None,
        };
        Self::new(&bytes, cloud, static_dir)
    }
}

#[derive(Clone)]
struct AppState {
    scene: Arc<Scene>,
    workers: Arc<Semaphore>,
}

/// Build the router. At most `workers` renders run at once; further
/// requests wait in arrival order.
pub fn router(scene: Arc<Scene>, workers: usize) -> Router {
    let static_dir = scene.static_dir.clone();
    let state = AppState {
        scene,
        workers: Arc::new(Semaphore::new(workers.max(1))),
    };
    let api = Router::new()
        .route("/api/meta", get(meta))
        .route("/api/render", post(render))
        .route("/api/cloud", get(cloud))
        .route("/api/{*rest}", axum::routing::any(not_found))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

async fn not_found() -> StatusCode {
    StatusCode::NOT_FOUND
}

async fn meta(State(s): State<AppState>) -> Json<SceneMeta> {
    Json(s.scene.meta.clone())
}

async fn cloud(State(s): State<AppState>) -> Response {
    match &s.scene.cloud {
        Some(bytes) => ([(header::CONTENT_TYPE, "application/octet-stream")], bytes.clone()).into_response(),
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

fn bad_request(e: FieldError) -> Response {
    (StatusCode::BAD_REQUEST, Json(e)).into_response()
}

fn internal(msg: &str) -> Response {
    (StatusCode::INTERNAL_SERVER_ERROR, Json(FieldError::new("", msg))).into_response()
}

async fn render(State(s): State<AppState>, body: Result<Json<RenderRequest>, JsonRejection>) -> Response {
    let req = match body {
        Ok(Json(r)) => r,
        Err(e) => return bad_request(FieldError::new("body", e.body_text())),
    };
    let job = match req.check() {
        Ok(j) => j,
        Err(e) => return bad_request(e),
    };
    let _permit = s.workers.acquire().await.expect("semaphore never closes");
    let scene = s.scene.clone();
    run_blocking(move || {
        let view = match job.camera {
            Camera::Panorama(c) => render_panorama_view(&scene.field, &job.pose, &c, job.samples)?,
            Camera::Perspective(c) => render_pinhole_view(&scene.field, &job.pose, &c, job.samples)?,
        };
        let mut png = Vec::new();
        to_u8(&view.image).write_to(&mut Cursor::new(&mut png), ImageFormat::Png)?;
        Ok(png)
    })
    .await
}

/// Run a PNG-producing job off the async workers; panics become `500`.
async fn run_blocking(job: impl FnOnce() -> panorad_core::Result<Vec<u8>> + Send + 'static) -> Response {
    let start = Instant::now();
    let out = tokio::task::spawn_blocking(job).await;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    match out {
        Ok(Ok(png)) => {
            let mut resp = ([(header::CONTENT_TYPE, "image/png")], png).into_response();
            resp.headers_mut().insert(
                RENDER_MS_HEADER,
                HeaderValue::from_str(&format!("{ms:.3}")).expect("ascii"),
            );
            resp
        }
        Ok(Err(e)) => internal(&e.to_string()),
        Err(e) if e.is_panic() => internal("render panicked"),
        Err(_) => internal("render cancelled"),
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    /// Radiance-field checkpoint to serve.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Optional PLY overlay exposed at /api/cloud.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Concurrent renders; further requests queue.
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    /// Directory of viewer assets served under `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

/// Load the scene and serve until interrupted.
pub fn serve(args: &ServeArgs) -> panorad_core::Result<()> {
    let scene = Arc::new(Scene::load(
        &args.checkpoint,
        args.cloud.as_deref(),
        args.static_dir.clone(),
    )?);
    let app = router(scene, args.workers);
    let addr = SocketAddr::from(([0, 0, 0, 0], args.port));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("serving on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}
