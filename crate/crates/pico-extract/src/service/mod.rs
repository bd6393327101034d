//! HTTP service: paper submission and analysis, reviewer corrections, rule
//! management, background retraining and the model registry.
//!
//! | method | path | success |
//! |---|---|---|
//! | POST | `/papers` | 201 `{doc_id}` |
//! | GET | `/papers/{id}/analysis` | 200 analysis |
//! | POST | `/papers/{id}/corrections` | 201 `{correction_id}` |
//! | POST | `/rules` | 201 rule |
//! | GET | `/rules` | 200 rule list |
//! | DELETE | `/rules/{id}` | 204 |
//! | POST | `/retrain` | 202 `{job_id}` |
//! | GET | `/retrain/{job_id}` | 200 job |
//! | GET | `/health` | 200 version block |
//!
//! Errors are JSON `{"error": "..."}` with the status codes listed in the
//! README.

pub mod registry;
pub mod retrain;
pub mod store;
pub mod view;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use pico_core::corpus::BioCorpus;
use pico_core::mapping::{normalize_surface, EntityClass, LinguisticRule, MappingConfig, RuleOrigin, RuleSet};
use pico_core::pico::PicoDataset;

use crate::checkpoint::{self, Model};
use crate::error::{read_to_string, write_file, Error, Result};
use crate::formats;
use registry::{ModelSnapshot, Registry};
use retrain::{Job, JobState};
use store::{CorrectionError, Store};
use view::{Correction, Versions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub pico_checkpoint: Option<PathBuf>,
    pub dner_checkpoint: Option<PathBuf>,
    pub graph_checkpoint: Option<PathBuf>,
    pub retrain_threshold: usize,
    pub retrain_epochs: usize,
    pub lambda: f64,
    /// Seed the rule file with the builtin rules when it does not exist yet.
    pub builtin_rules: bool,
    /// Base PICO corpus (`LABEL<TAB>sentence`) mixed into retraining.
    pub base_pico: Option<PathBuf>,
    /// Base BIO corpus mixed into retraining.
    pub base_bio: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("pico-data"),
            pico_checkpoint: None,
            dner_checkpoint: None,
            graph_checkpoint: None,
            retrain_threshold: 20,
            retrain_epochs: 5,
            lambda: 0.5,
            builtin_rules: true,
            base_pico: None,
            base_bio: None,
        }
    }
}

impl ServiceConfig {
    /// JSON file; missing fields keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_to_string(path)?)?)
    }

    /// Overrides fields from `PICO_*` variables (`PICO_PORT`, `PICO_DATA_DIR`,
    /// `PICO_PICO_CHECKPOINT`, `PICO_DNER_CHECKPOINT`, `PICO_GRAPH_CHECKPOINT`,
    /// `PICO_RETRAIN_THRESHOLD`, `PICO_LAMBDA`).
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        fn parsed<T: std::str::FromStr>(key: &str, v: String) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("{key}: cannot parse `{v}`")))
        }
        if let Some(v) = var("PICO_PORT") {
            self.port = parsed("PICO_PORT", v)?;
        }
        if let Some(v) = var("PICO_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = var("PICO_PICO_CHECKPOINT") {
            self.pico_checkpoint = Some(v.into());
        }
        if let Some(v) = var("PICO_DNER_CHECKPOINT") {
            self.dner_checkpoint = Some(v.into());
        }
        if let Some(v) = var("PICO_GRAPH_CHECKPOINT") {
            self.graph_checkpoint = Some(v.into());
        }
        if let Some(v) = var("PICO_RETRAIN_THRESHOLD") {
            self.retrain_threshold = parsed("PICO_RETRAIN_THRESHOLD", v)?;
        }
        if let Some(v) = var("PICO_LAMBDA") {
            self.lambda = parsed("PICO_LAMBDA", v)?;
        }
        Ok(())
    }

    pub fn mapping(&self) -> MappingConfig {
        MappingConfig {
            lambda: self.lambda,
            ..MappingConfig::default()
        }
    }
}

pub struct RuleSnapshot {
    pub set: RuleSet,
    pub version: String,
}

pub struct AppState {
    config: ServiceConfig,
    store: Store,
    registry: Mutex<Registry>,
    models: RwLock<Option<Arc<ModelSnapshot>>>,
    rules: RwLock<Arc<RuleSnapshot>>,
    rules_writer: tokio::sync::Mutex<()>,
    jobs: Mutex<BTreeMap<String, Job>>,
    running: Mutex<BTreeSet<String>>,
    next_job: AtomicU64,
    activation_gate: Option<Arc<tokio::sync::Semaphore>>,
}

fn rules_path(dir: &Path) -> PathBuf {
    dir.join("rules.json")
}

fn rule_snapshot(set: RuleSet) -> Result<RuleSnapshot> {
    let text = serde_json::to_string_pretty(set.rules())? + "\n";
    Ok(RuleSnapshot {
        version: hex::encode(Sha256::digest(text.as_bytes())),
        set,
    })
}

fn save_rules(dir: &Path, snap: &RuleSnapshot) -> Result<()> {
    let path = rules_path(dir);
    let tmp = path.with_extension("tmp");
    write_file(&tmp, serde_json::to_string_pretty(snap.set.rules())? + "\n")?;
    std::fs::rename(&tmp, &path).map_err(|source| Error::Io { path, source })
}

impl AppState {
    /// Opens (or initialises) the data directory. Checkpoints named in the
    /// config replace the registered ones.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>> {
        let dir = config.data_dir.clone();
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        MappingConfig {
            lambda: config.lambda,
            ..MappingConfig::default()
        }
        .validate()?;
        let store = Store::open(&dir)?;
        let mut registry = Registry::load(&dir)?;
        for (slot, path) in [
            ("pico", &config.pico_checkpoint),
            ("dner", &config.dner_checkpoint),
            ("graph", &config.graph_checkpoint),
        ] {
            if let Some(p) = path {
                registry.register(slot, p)?;
            }
        }
        registry.save(&dir)?;
        let models = registry.snapshot()?.map(Arc::new);
        let set = if rules_path(&dir).exists() {
            let rules: Vec<LinguisticRule> = serde_json::from_str(&read_to_string(&rules_path(&dir))?)?;
            let mut set = RuleSet::new();
            for r in rules {
                set.add(r)?;
            }
            set
        } else if config.builtin_rules {
            RuleSet::builtin()
        } else {
            RuleSet::new()
        };
        let rules = rule_snapshot(set)?;
        save_rules(&dir, &rules)?;
        Ok(Arc::new(AppState {
            config,
            store,
            registry: Mutex::new(registry),
            models: RwLock::new(models),
            rules: RwLock::new(Arc::new(rules)),
            rules_writer: tokio::sync::Mutex::new(()),
            jobs: Mutex::new(BTreeMap::new()),
            running: Mutex::new(BTreeSet::new()),
            next_job: AtomicU64::new(1),
            activation_gate: None,
        }))
    }

    /// Like [`AppState::open`], but finished retrain jobs wait for a permit
    /// on `gate` before activating their checkpoint.
    pub fn open_gated(config: ServiceConfig, gate: Arc<tokio::sync::Semaphore>) -> Result<Arc<Self>> {
        let state = Self::open(config)?;
        let mut state = Arc::try_unwrap(state).unwrap_or_else(|_| unreachable!("fresh state has one owner"));
        state.activation_gate = Some(gate);
        Ok(Arc::new(state))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn models(&self) -> Option<Arc<ModelSnapshot>> {
        self.models.read().expect("model lock").clone()
    }

    pub fn rules(&self) -> Arc<RuleSnapshot> {
        self.rules.read().expect("rule lock").clone()
    }

    pub fn registry(&self) -> Registry {
        self.registry.lock().expect("registry lock").clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/papers", post(post_paper))
        .route("/papers/{id}/analysis", get(get_analysis))
        .route("/papers/{id}/corrections", post(post_correction))
        .route("/rules", post(post_rule).get(list_rules))
        .route("/rules/{id}", delete(delete_rule))
        .route("/retrain", post(post_retrain))
        .route("/retrain/{job_id}", get(get_job))
        .route("/health", get(health))
        .with_state(state)
}

/// Binds `host:port` and serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>) -> Result<()> {
    let addr = format!("{}:{}", state.config.host, state.config.port);
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|source| Error::Io {
        path: PathBuf::from(&addr),
        source,
    })?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| Error::Io {
            path: PathBuf::from(addr),
            source,
        })
}

pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl std::fmt::Display) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.to_string() }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        log::error!("{e}");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e)
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Empty or malformed JSON is 400; well-formed JSON of the wrong shape is 422.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty body"));
    }
    serde_json::from_slice(body).map_err(|e| {
        let status = if e.is_data() {
            StatusCode::UNPROCESSABLE_ENTITY
        } else {
            StatusCode::BAD_REQUEST
        };
        ApiError::new(status, e)
    })
}

#[derive(Deserialize)]
struct PaperBody {
    #[serde(default)]
    title: String,
    #[serde(default, rename = "abstract")]
    abstract_text: String,
}

async fn post_paper(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let paper: PaperBody = parse_body(&body).map_err(|e| ApiError { status: StatusCode::BAD_REQUEST, ..e })?;
    if paper.title.trim().is_empty() && paper.abstract_text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "title and abstract are both empty"));
    }
    let models = state.models().ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "models not loaded"))?;
    let rules = state.rules();
    let doc_id = state.store.reserve_doc_id().await;
    let mapping = state.config.mapping();
    let id = doc_id.clone();
    let result = tokio::task::spawn_blocking(move || {
        let versions = Versions {
            pico: models.pico_version.clone(),
            dner: models.dner_version.clone(),
            graph: models.graph_version.clone(),
            rules: rules.version.clone(),
        };
        view::analyze(&id, &paper.title, &paper.abstract_text, &models.pico, &models.dner, &rules.set, &mapping, versions)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?;
    let analysis = result.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    state.store.insert(analysis).await?;
    Ok((StatusCode::CREATED, Json(json!({ "doc_id": doc_id }))))
}

async fn get_analysis(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<view::AnalysisResult>> {
    state
        .store
        .get(&id)
        .map(|v| Json((*v).clone()))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown document {id}")))
}

async fn post_correction(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    if state.store.get(&id).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown document {id}")));
    }
    let correction: Correction = parse_body(&body)?;
    match state.store.correct(&id, correction).await {
        Ok(rec) => Ok((StatusCode::CREATED, Json(json!({ "correction_id": rec.id })))),
        Err(CorrectionError::UnknownDocument) => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown document {id}"))),
        Err(CorrectionError::Invalid(m)) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m)),
        Err(CorrectionError::Storage(e)) => Err(e.into()),
    }
}

#[derive(Deserialize)]
struct RuleBody {
    target: EntityClass,
    pattern: String,
}

async fn post_rule(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<LinguisticRule>)> {
    let req: RuleBody = parse_body(&body)?;
    let _w = state.rules_writer.lock().await;
    let current = state.rules();
    let mut set = current.set.clone();
    let pattern = req.pattern.trim();
    if set.rules().iter().any(|r| normalize_surface(&r.pattern) == normalize_surface(pattern)) {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("pattern `{pattern}` already exists")));
    }
    let rule = LinguisticRule::new(&set.fresh_id(), pattern, req.target, RuleOrigin::User).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    set.add(rule.clone()).map_err(|e| ApiError::new(StatusCode::CONFLICT, e))?;
    let snap = rule_snapshot(set)?;
    save_rules(state.store.dir(), &snap)?;
    *state.rules.write().expect("rule lock") = Arc::new(snap);
    Ok((StatusCode::CREATED, Json(rule)))
}

async fn list_rules(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let snap = state.rules();
    Json(json!({ "version": snap.version, "rules": snap.set.rules() }))
}

async fn delete_rule(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<StatusCode> {
    let _w = state.rules_writer.lock().await;
    let mut set = state.rules().set.clone();
    set.remove(&id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown rule {id}")))?;
    let snap = rule_snapshot(set)?;
    save_rules(state.store.dir(), &snap)?;
    *state.rules.write().expect("rule lock") = Arc::new(snap);
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct RetrainBody {
    slot: String,
}

async fn post_retrain(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let req: RetrainBody = parse_body(&body)?;
    let slot = req.slot.as_str();
    if slot != "pico" && slot != "dner" {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("slot must be `pico` or `dner`, got `{slot}`")));
    }
    let models = state.models().ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "models not loaded"))?;
    let records = state.store.corrections()?;
    let count = records.iter().filter(|r| r.applied && r.correction.slot() == slot).count();
    let threshold = state.config.retrain_threshold;
    if count < threshold {
        return Err(ApiError {
            status: StatusCode::CONFLICT,
            body: json!({
                "error": format!("{count} corrections for `{slot}`, {threshold} needed"),
                "count": count,
                "threshold": threshold,
            }),
        });
    }
    if !state.running.lock().expect("job lock").insert(slot.to_string()) {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("a `{slot}` retrain is already running")));
    }
    let job_id = format!("job-{}", state.next_job.fetch_add(1, Ordering::SeqCst));
    state.jobs.lock().expect("job lock").insert(
        job_id.clone(),
        Job {
            job_id: job_id.clone(),
            slot: slot.to_string(),
            corrections: count,
            state: JobState::Running,
        },
    );
    tokio::spawn(run_job(state.clone(), job_id.clone(), slot.to_string(), models, records));
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))))
}

async fn run_job(state: Arc<AppState>, job_id: String, slot: String, models: Arc<ModelSnapshot>, records: Vec<view::CorrectionRecord>) {
    let views = state.store.views().iter().map(|v| (v.doc_id.clone(), (**v).clone())).collect();
    let config = state.config.clone();
    let train_slot = slot.clone();
    let trained = tokio::task::spawn_blocking(move || -> Result<Model> {
        if train_slot == "pico" {
            let base = config.base_pico.as_deref().map(formats::load_pico).transpose()?;
            let extra = retrain::pico_items(&records, &views);
            Ok(Model::Pico(retrain::retrain_pico(&models.pico, base.as_ref(), extra, config.retrain_epochs)?))
        } else {
            let base: Option<BioCorpus> = config.base_bio.as_deref().map(formats::load_bio_corpus).transpose()?;
            let extra = retrain::dner_sentences(&records, &views);
            Ok(Model::Dner(retrain::retrain_dner(&models.dner, base.as_ref(), extra, config.retrain_epochs)?))
        }
    })
    .await;
    if let Some(gate) = &state.activation_gate {
        if let Ok(permit) = gate.acquire().await {
            permit.forget();
        }
    }
    let outcome = match trained {
        Ok(Ok(model)) => activate(&state, &job_id, &slot, model),
        Ok(Err(e)) => Err(e),
        Err(e) => Err(Error::Format(format!("training task failed: {e}"))),
    };
    let job_state = match outcome {
        Ok(version) => JobState::Succeeded { version },
        Err(e) => {
            log::error!("{job_id}: {e}");
            JobState::Failed { error: e.to_string() }
        }
    };
    if let Some(job) = state.jobs.lock().expect("job lock").get_mut(&job_id) {
        job.state = job_state;
    }
    state.running.lock().expect("job lock").remove(&slot);
}

/// Writes the checkpoint, records it in the registry and swaps the model
/// snapshot. Analyses holding the previous snapshot finish on it.
fn activate(state: &AppState, job_id: &str, slot: &str, model: Model) -> Result<String> {
    let path = state.store.dir().join("checkpoints").join(format!("{slot}-{job_id}.ckpt"));
    let bytes = checkpoint::encode(&model)?;
    write_file(&path, &bytes)?;
    let version = checkpoint::version_hash(&bytes);
    let mut registry = state.registry.lock().expect("registry lock");
    registry.slots.insert(
        slot.to_string(),
        registry::SlotEntry {
            path,
            version: version.clone(),
        },
    );
    registry.save(state.store.dir())?;
    let mut guard = state.models.write().expect("model lock");
    let old = guard.as_ref().expect("retrain requires loaded models");
    let next = match model {
        Model::Pico(p) => ModelSnapshot {
            pico: Arc::new(p),
            dner: old.dner.clone(),
            pico_version: version.clone(),
            dner_version: old.dner_version.clone(),
            graph_version: old.graph_version.clone(),
        },
        Model::Dner(d) => ModelSnapshot {
            pico: old.pico.clone(),
            dner: Arc::new(d),
            pico_version: old.pico_version.clone(),
            dner_version: version.clone(),
            graph_version: old.graph_version.clone(),
        },
        Model::Graph(_) => unreachable!("graph slot is not retrained here"),
    };
    *guard = Some(Arc::new(next));
    Ok(version)
}

async fn get_job(State(state): State<Arc<AppState>>, UrlPath(job_id): UrlPath<String>) -> ApiResult<Json<Job>> {
    state
        .jobs
        .lock()
        .expect("job lock")
        .get(&job_id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown job {job_id}")))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let registry = state.registry();
    let models = state.models();
    Json(json!({
        "status": if models.is_some() { "ok" } else { "degraded" },
        "version": env!("CARGO_PKG_VERSION"),
        "models": {
            "pico": registry.version("pico"),
            "dner": registry.version("dner"),
            "graph": registry.version("graph"),
        },
        "rules": state.rules().version,
        "documents": state.store.len(),
    }))
}

/// Used by `AppState::open` callers that want plain-text base data checked early.
pub fn check_base_data(config: &ServiceConfig) -> Result<()> {
    if let Some(p) = &config.base_pico {
        let _: PicoDataset = formats::load_pico(p)?;
    }
    if let Some(p) = &config.base_bio {
        formats::load_bio_corpus(p)?;
    }
    Ok(())
}
