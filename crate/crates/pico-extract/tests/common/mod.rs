#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use pico_extract::checkpoint::{self, Model};
use pico_extract::demo;
use pico_extract::service::{AppState, ServiceConfig};

pub struct Checkpoints {
    _dir: tempfile::TempDir,
    pub pico: PathBuf,
    pub dner: PathBuf,
}

/// Fixture-trained checkpoints, built once per test binary.
pub fn checkpoints() -> &'static Checkpoints {
    static CELL: OnceLock<Checkpoints> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let pico = dir.path().join("pico.ckpt");
        let dner = dir.path().join("dner.ckpt");
        checkpoint::save(&pico, &Model::Pico(demo::fixture_pico(13).unwrap())).unwrap();
        checkpoint::save(&dner, &Model::Dner(demo::fixture_dner(None, 17).unwrap())).unwrap();
        Checkpoints { _dir: dir, pico, dner }
    })
}

pub fn config(data_dir: &Path, builtin_rules: bool, threshold: usize) -> ServiceConfig {
    let c = checkpoints();
    ServiceConfig {
        data_dir: data_dir.to_path_buf(),
        pico_checkpoint: Some(c.pico.clone()),
        dner_checkpoint: Some(c.dner.clone()),
        retrain_threshold: threshold,
        retrain_epochs: 2,
        builtin_rules,
        ..ServiceConfig::default()
    }
}

pub fn app(data_dir: &Path, builtin_rules: bool, threshold: usize) -> (Arc<AppState>, Router) {
    let state = AppState::open(config(data_dir, builtin_rules, threshold)).unwrap();
    let router = pico_extract::service::router(state.clone());
    (state, router)
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

pub async fn post_paper(app: &Router, title: &str, abstract_text: &str) -> String {
    let body = serde_json::json!({ "title": title, "abstract": abstract_text }).to_string();
    let (s, v) = call(app, "POST", "/papers", Some(&body)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["doc_id"].as_str().unwrap().to_string()
}

pub async fn analysis(app: &Router, id: &str) -> Value {
    let (s, v) = call(app, "GET", &format!("/papers/{id}/analysis"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v
}

/// Entities of both lists whose surface equals `surface`.
pub fn entities_named<'a>(view: &'a Value, surface: &str) -> Vec<&'a Value> {
    ["population", "outcome"]
        .iter()
        .flat_map(|k| view[*k].as_array().unwrap())
        .filter(|e| e["surface"] == surface)
        .collect()
}
