#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use energy_arena::api::{router, ArenaState, SharedState};
use energy_arena::config::ArenaConfig;
use energy_arena::gateway::MockOptions;
use energy_arena::store::LogWriter;

pub const QUESTION: &str = "¿Qué modelo gasta menos energía?";

/// Mock-backed arena writing to `log`.
pub fn mock_arena(log: &Path, mock: MockOptions) -> (SharedState, Router) {
    let mut cfg = ArenaConfig::mock();
    cfg.providers[0].mock = Some(mock);
    cfg.providers[0].max_retries = 0;
    let validated = cfg.validate().expect("mock config is valid");
    let writer = LogWriter::open(log).expect("log opens");
    let state = Arc::new(ArenaState::from_config(&validated, writer).expect("state builds"));
    let app = router(Arc::clone(&state), Some("http://localhost:5173"));
    (state, app)
}

pub struct Reply {
    pub status: StatusCode,
    pub raw: String,
    pub json: Value,
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(Body::from(body.unwrap_or("").to_string())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let raw = String::from_utf8(bytes.to_vec()).unwrap();
    let json = serde_json::from_str(&raw).unwrap_or(Value::Null);
    Reply { status, raw, json }
}

pub async fn post(app: &Router, uri: &str, body: &str) -> Reply {
    call(app, Method::POST, uri, Some(body)).await
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None).await
}

/// Creates a battle and returns its id.
pub async fn create(app: &Router) -> String {
    let r = call(app, Method::POST, "/api/v1/battles", None).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.raw);
    r.json["session_id"].as_str().unwrap().to_string()
}

/// Identifiers that must not appear before a battle is revealed.
pub fn forbidden(state: &ArenaState) -> Vec<String> {
    state.registry.identifying_strings()
}

pub fn leaks<'a>(payload: &str, forbidden: &'a [String]) -> Vec<&'a str> {
    forbidden
        .iter()
        .filter(|s| payload.contains(s.as_str()))
        .map(String::as_str)
        .collect()
}

pub fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).map(|s| s.lines().count()).unwrap_or(0)
}
