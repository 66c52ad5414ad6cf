//! HTTP facade over the reefseg pipeline.
//!
//! Jobs cluster a registered dataset once; refine requests then turn a
//! finished job into immutable revisions (map, labels, legend, provenance)
//! using the same refine stage as the command-line runner.

mod api;
pub mod error;
pub mod model;
pub mod store;
mod worker;

use std::path::PathBuf;
use std::sync::Arc;

use axum::http::HeaderValue;
use axum::Router;
use reefseg_core::Exec;
use tokio::sync::mpsc;
use tower_http::cors::{Any, CorsLayer};

use store::Store;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_root: PathBuf,
    pub workers: usize,
    /// Accept server-local file paths in `POST /datasets`.
    pub allow_local_paths: bool,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
    pub exec: Exec,
}

impl ServiceConfig {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        Self {
            data_root: data_root.into(),
            workers: 1,
            allow_local_paths: true,
            cors_origin: None,
            exec: Exec::Sequential,
        }
    }

    /// Reads `REEFSEG_DATA_ROOT`, `REEFSEG_WORKERS`, `REEFSEG_ALLOW_LOCAL_PATHS`,
    /// `REEFSEG_CORS_ORIGIN` and `REEFSEG_THREADS`.
    pub fn from_env() -> reefseg_core::Result<Self> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let mut cfg = Self::new(var("REEFSEG_DATA_ROOT").unwrap_or_else(|| "reefseg-data".into()));
        if let Some(w) = var("REEFSEG_WORKERS") {
            cfg.workers = w
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| reefseg_core::Error::Config(vec![format!("REEFSEG_WORKERS must be a positive integer, got {w:?}")]))?;
        }
        if let Some(v) = var("REEFSEG_ALLOW_LOCAL_PATHS") {
            cfg.allow_local_paths = !matches!(v.as_str(), "0" | "false" | "no");
        }
        cfg.cors_origin = var("REEFSEG_CORS_ORIGIN");
        cfg.exec = Exec::from_env()?;
        Ok(cfg)
    }
}

pub(crate) struct AppState {
    pub store: Store,
    pub queue: mpsc::UnboundedSender<String>,
    pub config: ServiceConfig,
}

/// A running service: store loaded, workers started.
#[derive(Clone)]
pub struct Service {
    state: Arc<AppState>,
}

impl Service {
    /// Opens the data root and starts the workers. Must be called inside a
    /// tokio runtime.
    pub fn start(config: ServiceConfig) -> std::io::Result<Self> {
        let (store, requeue) = Store::open(&config.data_root)?;
        let (tx, rx) = mpsc::unbounded_channel();
        let state = Arc::new(AppState {
            store,
            queue: tx,
            config,
        });
        worker::spawn(state.clone(), rx);
        for id in requeue {
            let _ = state.queue.send(id);
        }
        Ok(Self { state })
    }

    pub fn data_root(&self) -> &std::path::Path {
        self.state.store.root()
    }

    pub fn router(&self) -> Router {
        let cors = match &self.state.config.cors_origin {
            Some(origin) => match HeaderValue::from_str(origin) {
                Ok(v) => CorsLayer::new().allow_origin(v),
                Err(_) => CorsLayer::new(),
            },
            None => CorsLayer::new().allow_origin(Any),
        }
        .allow_methods(Any)
        .allow_headers(Any);
        api::routes(self.state.clone()).layer(cors)
    }
}
