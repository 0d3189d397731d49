//! Teacher inference server.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use activemix::checkpoint::{load_model, model_id};
use activemix::{Error, Image, Model, Result, TeacherInfo};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::oneshot;

use crate::wire::{ErrorBody, PredictRequest, PredictResponse};

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: String,
    pub checkpoint: PathBuf,
    pub max_batch: usize,
    pub log: Option<PathBuf>,
}

/// A loaded model plus the request log. Shared read-only across requests.
#[derive(Debug)]
pub struct Service {
    model: Model,
    info: TeacherInfo,
    max_batch: usize,
    log: Option<Mutex<File>>,
}

impl Service {
    pub fn new(model: Model, max_batch: usize, log: Option<&Path>) -> Result<Self> {
        if max_batch == 0 {
            return Err(Error::input("max_batch must be at least 1"));
        }
        // Smoke test: a blank image must yield a probability vector.
        let blank = Image::zeros(model.spec().input_shape);
        let p = model.probabilities(blank.pixels())?;
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(
                "checkpoint",
                "model does not produce probabilities",
            ));
        }
        let log = match log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?,
            )),
            None => None,
        };
        let info = TeacherInfo {
            num_classes: model.num_classes(),
            input_shape: model.spec().input_shape,
            model_id: model_id(&model),
        };
        Ok(Service {
            model,
            info,
            max_batch,
            log,
        })
    }

    pub fn from_config(cfg: &ServiceConfig) -> Result<Self> {
        let (model, _) = load_model(&cfg.checkpoint)?;
        Self::new(model, cfg.max_batch, cfg.log.as_deref())
    }

    pub fn info(&self) -> &TeacherInfo {
        &self.info
    }

    /// Validates a request body and computes probabilities.
    pub fn predict(
        &self,
        body: &[u8],
    ) -> std::result::Result<PredictResponse, (StatusCode, String)> {
        let bad = |m: String| (StatusCode::BAD_REQUEST, m);
        let req: PredictRequest =
            serde_json::from_slice(body).map_err(|e| bad(format!("malformed body: {e}")))?;
        let &[b, h, w, c] = req.shape.as_slice() else {
            return Err(bad(format!("shape must be [B,H,W,C], got {:?}", req.shape)));
        };
        if b > self.max_batch {
            return Err((
                StatusCode::PAYLOAD_TOO_LARGE,
                format!("batch of {b} exceeds limit {}", self.max_batch),
            ));
        }
        if b == 0 || [h, w, c] != self.info.input_shape {
            return Err(bad(format!(
                "shape {:?} does not match [B>=1, {:?}]",
                req.shape, self.info.input_shape
            )));
        }
        let len = h * w * c;
        if req.pixels.len() != b * len {
            return Err(bad(format!(
                "expected {} pixels, got {}",
                b * len,
                req.pixels.len()
            )));
        }
        let probs = req
            .pixels
            .chunks(len)
            .map(|px| {
                let im = Image::new([h, w, c], px.to_vec()).map_err(|e| bad(e.to_string()))?;
                self.model
                    .probabilities(im.pixels())
                    .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(PredictResponse { probs })
    }

    fn log_request(&self, batch: Option<usize>, status: StatusCode, started: Instant) {
        let Some(log) = &self.log else { return };
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis());
        let batch = batch.map_or_else(|| "-".to_string(), |b| b.to_string());
        let line = format!(
            "{ts}\tPOST /predict\t{}\tbatch={batch}\tlatency_us={}\n",
            status.as_u16(),
            started.elapsed().as_micros()
        );
        if let Ok(mut f) = log.lock() {
            let _ = f.write_all(line.as_bytes());
        }
    }

    /// Request body ceiling: generous for `max_batch` images of JSON floats.
    fn body_limit(&self) -> usize {
        let px: usize = self.info.input_shape.iter().product();
        self.max_batch
            .saturating_mul(px)
            .saturating_mul(32)
            .saturating_add(1 << 16)
    }
}

fn error_response(status: StatusCode, msg: String) -> Response {
    (status, Json(ErrorBody { error: msg })).into_response()
}

async fn info(State(svc): State<Arc<Service>>) -> Json<TeacherInfo> {
    Json(svc.info.clone())
}

async fn predict(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    let started = Instant::now();
    let worker = Arc::clone(&svc);
    let result = tokio::task::spawn_blocking(move || worker.predict(&body))
        .await
        .unwrap_or_else(|e| Err((StatusCode::INTERNAL_SERVER_ERROR, e.to_string())));
    match result {
        Ok(resp) => {
            svc.log_request(Some(resp.probs.len()), StatusCode::OK, started);
            Json(resp).into_response()
        }
        Err((status, msg)) => {
            svc.log_request(None, status, started);
            error_response(status, msg)
        }
    }
}

pub fn router(svc: Arc<Service>) -> Router {
    let limit = svc.body_limit();
    Router::new()
        .route("/info", get(info))
        .route("/predict", post(predict))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(svc)
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Transport(format!("cannot start runtime: {e}")))
}

async fn bind(addr: &str) -> Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Transport(format!("cannot bind {addr}: {e}")))
}

/// Serves until Ctrl-C. `on_ready` receives the bound address.
pub fn serve(svc: Service, addr: &str, on_ready: impl FnOnce(SocketAddr)) -> Result<()> {
    runtime()?.block_on(async {
        let listener = bind(addr).await?;
        let local = listener
            .local_addr()
            .map_err(|e| Error::Transport(e.to_string()))?;
        on_ready(local);
        axum::serve(listener, router(Arc::new(svc)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::Transport(e.to_string()))
    })
}

/// Server running on a background thread; stops when dropped.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Starts a server on `addr` (use port 0 for an ephemeral port) in a background thread.
pub fn spawn(svc: Service, addr: &str) -> Result<ServerHandle> {
    let rt = runtime()?;
    let listener = rt.block_on(bind(addr))?;
    let local = listener
        .local_addr()
        .map_err(|e| Error::Transport(e.to_string()))?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(Arc::new(svc));
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(ServerHandle {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
