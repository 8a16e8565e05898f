//! Drive the HTTP API in-process: fetch a gallery, select models, run a battle
//! session to the end and read its summary. Pass `--listen` to serve the
//! fixture on 127.0.0.1:8080 instead.
//!
//! ```text
//! cargo run --example serve_api
//! cargo run --example serve_api -- --listen
//! ```

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use gemrec::catalog::{load_catalog, LoadOptions};
use gemrec::server::{router, serve, AppState, ServerConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> Value {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value: Value = serde_json::from_slice(&bytes).unwrap();
    println!("{method} {uri} -> {status}");
    value
}

#[tokio::main]
async fn main() -> gemrec::Result<()> {
    let root = std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini"));
    let catalog = Arc::new(load_catalog(root, LoadOptions::default())?);
    let state_dir = std::env::temp_dir().join(format!("gemrec-serve-{}", std::process::id()));
    let state = Arc::new(AppState::open(catalog, ServerConfig::new(&state_dir))?);

    if std::env::args().any(|a| a == "--listen") {
        println!("serving on http://127.0.0.1:8080/api/v1 (state in {})", state_dir.display());
        return serve(state, ([127, 0, 0, 1], 8080).into()).await;
    }

    let app = router(state);
    let gallery = call(&app, "GET", "/api/v1/gallery?prompt_id=1&session_id=g1", None).await;
    let picks: Vec<u64> = gallery["entries"].as_array().unwrap()[..2]
        .iter()
        .map(|e| e["model_id"].as_u64().unwrap())
        .collect();
    for &m in &picks {
        call(&app, "POST", "/api/v1/selections", Some(json!({"session_id": "g1", "prompt_id": 1, "model_id": m}))).await;
    }

    let mut session = call(
        &app,
        "POST",
        "/api/v1/sessions",
        Some(json!({"user_id": "carol", "prompt_id": 1, "selected_models": picks})),
    )
    .await;
    let id = session["session_id"].as_str().unwrap().to_string();
    println!("session {id}: mode {}, pool {}", session["mode"], session["pool"]);

    if session["mode"] == "battle" {
        while session["status"] == "active" {
            // always keep the left-hand model
            let chosen = session["current_pair"][0].clone();
            let round = session["next_round"].clone();
            let resp = call(&app, "POST", &format!("/api/v1/sessions/{id}/battle"), Some(json!({"chosen": chosen, "round": round}))).await;
            session = resp["session"].clone();
        }
    } else {
        let batches = session["batches"].as_array().unwrap().clone();
        for (i, batch) in batches.iter().enumerate() {
            let mut order = batch.as_array().unwrap().clone();
            order.reverse();
            call(&app, "POST", &format!("/api/v1/sessions/{id}/dragsort"), Some(json!({"batch_index": i, "final_order": order}))).await;
        }
    }

    let summary = call(&app, "GET", &format!("/api/v1/sessions/{id}/summary"), None).await;
    println!("final ranking {}", summary["final_ranking"]);
    let rank = call(&app, "GET", "/api/v1/rank?user_id=carol&prompt_id=1&top=3", None).await;
    println!("cold-start ranking ({}): {}", rank["source"], rank["ranking"]);
    Ok(())
}
