#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use gemrec::catalog::{load_catalog, Catalog, LoadOptions};
use gemrec::server::{router, AppState, ServerConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini")
}

pub fn mini() -> Arc<Catalog> {
    Arc::new(load_catalog(&fixture_root(), LoadOptions::default()).unwrap())
}

pub fn open_state(catalog: Arc<Catalog>, dir: &Path, precompute: bool) -> Arc<AppState> {
    let mut cfg = ServerConfig::new(dir);
    cfg.seed = 17;
    cfg.precompute_layouts = precompute;
    Arc::new(AppState::open(catalog, cfg).unwrap())
}

pub struct Api {
    pub app: Router,
}

impl Api {
    pub fn new(state: Arc<AppState>) -> Self {
        Self { app: router(state) }
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, value)
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call("GET", uri, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call("POST", uri, Some(&body.to_string())).await
    }

    /// Create sessions for `user` until one lands in `mode`.
    pub async fn session_in_mode(&self, user: &str, mode: &str) -> Value {
        for _ in 0..64 {
            let (status, s) = self
                .post(
                    "/api/v1/sessions",
                    serde_json::json!({"user_id": user, "prompt_id": 1, "selected_models": []}),
                )
                .await;
            assert_eq!(status, StatusCode::CREATED, "{s}");
            if s["mode"] == mode {
                return s;
            }
        }
        panic!("no {mode} session drawn");
    }
}
