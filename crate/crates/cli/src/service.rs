//! HTTP/JSON service over editing sessions.
//!
//! Sessions live in memory. Reads take a shared lock on one session and
//! mutations an exclusive one, so independent sessions never block each
//! other. Every mutation carries the revision the client last saw and is
//! refused with 409 if the session has moved on.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{FromRequest, Path as UrlPath, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use saog_core::dataset::{decode_parse_graph_compact, encode_parse_graph_compact};
use saog_core::energy::{term_sums, EnergyBreakdown};
use saog_core::grammar::{
    sample_parse_graph, validate, Diagnostic, DiagnosticTarget, GrammarSpec, ObjectInstance,
    ParseGraph, Relation,
};
use saog_core::mcmc::{
    default_schedule, infer_relations_gibbs, infer_relations_map, ChainConfig, ResampleConfig,
};
use saog_core::projection::{rasterize_instance_map, BBox2D};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::session::{EditError, EditOp, SceneSession};

pub const SNAPSHOT_EXT: &str = "spg";

pub struct AppState {
    pub spec: GrammarSpec,
    pub chain: ChainConfig,
    pub resample: ResampleConfig,
    sessions: RwLock<HashMap<String, Arc<RwLock<SceneSession>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(spec: GrammarSpec) -> Self {
        Self {
            spec,
            chain: ChainConfig::default(),
            resample: ResampleConfig::default(),
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn session(&self, id: &str) -> Option<Arc<RwLock<SceneSession>>> {
        self.sessions.read().unwrap().get(id).cloned()
    }

    pub fn insert(&self, graph: ParseGraph) -> Result<Arc<RwLock<SceneSession>>, EditError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed).to_string();
        self.insert_as(id, graph)
    }

    fn insert_as(
        &self,
        id: String,
        graph: ParseGraph,
    ) -> Result<Arc<RwLock<SceneSession>>, EditError> {
        let session = Arc::new(RwLock::new(SceneSession::new(
            id.clone(),
            graph,
            &self.spec,
        )?));
        self.sessions.write().unwrap().insert(id, session.clone());
        Ok(session)
    }

    /// Writes each session's current graph to `<dir>/<id>.spg`.
    pub fn snapshot(&self, dir: &Path) -> saog_core::Result<usize> {
        std::fs::create_dir_all(dir).map_err(|e| saog_core::Error::io(dir, e))?;
        let sessions = self.sessions.read().unwrap();
        for (id, s) in sessions.iter() {
            let bytes = encode_parse_graph_compact(&s.read().unwrap().graph)?;
            let path = dir.join(format!("{id}.{SNAPSHOT_EXT}"));
            std::fs::write(&path, bytes).map_err(|e| saog_core::Error::io(&path, e))?;
        }
        Ok(sessions.len())
    }

    /// Opens one session per `.spg` file in `dir`, keyed by file stem.
    pub fn restore(&self, dir: &Path) -> anyhow::Result<usize> {
        let mut count = 0;
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(SNAPSHOT_EXT) {
                continue;
            }
            let Some(id) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .map(str::to_string)
            else {
                continue;
            };
            let graph = decode_parse_graph_compact(&std::fs::read(&path)?, &self.spec)?;
            if let Ok(n) = id.parse::<u64>() {
                self.next_id.fetch_max(n + 1, Ordering::Relaxed);
            }
            self.insert_as(id, graph)
                .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
            count += 1;
        }
        Ok(count)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/edits", post(edit_session))
        .route("/sessions/{id}/undo", post(undo_session))
        .route("/sessions/{id}/resample", post(resample_session))
        .route("/sessions/{id}/instance-map", get(instance_map))
        .route("/infer", post(infer))
        .with_state(state)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
    /// Set on revision conflicts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision: Option<u64>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                fields: Vec::new(),
                revision: None,
            },
        }
    }

    fn field(mut self, field: impl Into<String>, message: impl Into<String>) -> Self {
        self.body.fields.push(FieldError {
            field: field.into(),
            message: message.into(),
        });
        self
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session '{id}'"))
    }

    fn conflict(sent: u64, current: u64) -> Self {
        let mut e = Self::new(
            StatusCode::CONFLICT,
            format!("stale revision {sent}: session is at revision {current}"),
        );
        e.body.revision = Some(current);
        e
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn diagnostic_field(prefix: &str, d: &Diagnostic) -> String {
    match d.target {
        DiagnosticTarget::Graph => prefix.trim_end_matches('.').to_string(),
        DiagnosticTarget::Object(i) => format!("{prefix}objects[{i}]"),
        DiagnosticTarget::Relation(k) => format!("{prefix}relations[{k}]"),
    }
}

fn invalid_graph(prefix: &str, diags: &[Diagnostic]) -> ApiError {
    diags.iter().fold(
        ApiError::new(StatusCode::BAD_REQUEST, "invalid parse graph"),
        |e, d| e.field(diagnostic_field(prefix, d), d.message.clone()),
    )
}

fn core_error(e: saog_core::Error) -> ApiError {
    use saog_core::Error as E;
    match e {
        E::InvalidGraph(d) => invalid_graph("graph.", &d),
        E::InvalidArgument(_)
        | E::InvalidChain(_)
        | E::UnknownRelationType { .. }
        | E::LabelOutOfRange(_) => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
        E::ObjectBehindCamera { .. } | E::BehindCamera { .. } => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
        }
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    }
}

fn edit_error(e: EditError) -> ApiError {
    let msg = e.to_string();
    match e {
        EditError::IndexOutOfRange { .. } => {
            ApiError::new(StatusCode::BAD_REQUEST, &msg).field("edit.index", msg)
        }
        EditError::TooManyObjects { .. } => {
            ApiError::new(StatusCode::BAD_REQUEST, &msg).field("edit.object", msg)
        }
        EditError::UnknownSize(_) => {
            ApiError::new(StatusCode::BAD_REQUEST, &msg).field("edit.size", msg)
        }
        EditError::Invalid(d) => invalid_graph("graph.", &d),
        EditError::NothingToUndo => ApiError::new(StatusCode::CONFLICT, msg),
        EditError::Core(c) => core_error(c),
    }
}

/// JSON body extractor whose rejections name the offending field.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let is_json = req
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("application/json"));
        if !is_json {
            return Err(ApiError::new(
                StatusCode::UNSUPPORTED_MEDIA_TYPE,
                "expected Content-Type: application/json",
            ));
        }
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        serde_path_to_error::deserialize(de)
            .map(JsonBody)
            .map_err(|e| {
                let field = e.path().to_string();
                let message = e.into_inner().to_string();
                ApiError::new(StatusCode::BAD_REQUEST, "invalid request body").field(field, message)
            })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub revision: u64,
    pub graph: ParseGraph,
    pub energy: EnergyBreakdown,
    pub diagnostics: Vec<Diagnostic>,
    /// Screen boxes in object order; `null` for objects behind the camera.
    pub boxes: Vec<Option<BBox2D>>,
    pub history_len: usize,
    pub max_objects: usize,
}

fn view(s: &SceneSession, spec: &GrammarSpec) -> Result<SessionView, ApiError> {
    let outcome = s.outcome(spec).map_err(edit_error)?;
    Ok(SessionView {
        id: s.id.clone(),
        revision: s.revision,
        graph: outcome.graph,
        energy: outcome.energy,
        diagnostics: outcome.diagnostics,
        boxes: s.boxes(spec),
        history_len: s.history.len(),
        max_objects: spec.max_objects(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub name: String,
    pub version: String,
    pub sessions: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        name: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        sessions: state.session_count(),
    })
}

/// Either an uploaded graph or a seed to sample one from the grammar.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub graph: Option<ParseGraph>,
    #[serde(default)]
    pub seed: Option<u64>,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    JsonBody(req): JsonBody<CreateSession>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let graph = match (req.graph, req.seed) {
        (Some(_), Some(_)) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "give either graph or seed, not both",
            )
            .field("seed", "not allowed together with graph"))
        }
        (Some(g), None) => {
            let diags = validate(&state.spec, &g);
            if !diags.is_empty() {
                return Err(invalid_graph("graph.", &diags));
            }
            g
        }
        (None, seed) => {
            let st = state.clone();
            tokio::task::spawn_blocking(move || {
                sample_parse_graph(&st.spec, &st.chain, seed.unwrap_or(0))
            })
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
            .map_err(core_error)?
        }
    };
    let session = state.insert(graph).map_err(edit_error)?;
    let v = view(&session.read().unwrap(), &state.spec)?;
    Ok((StatusCode::CREATED, Json(v)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let v = view(&session.read().unwrap(), &state.spec)?;
    Ok(Json(v))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub revision: u64,
    pub edit: EditOp,
}

fn check_revision(s: &SceneSession, sent: u64) -> Result<(), ApiError> {
    if s.revision == sent {
        Ok(())
    } else {
        Err(ApiError::conflict(sent, s.revision))
    }
}

async fn edit_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    JsonBody(req): JsonBody<EditRequest>,
) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let mut s = session.write().unwrap();
    check_revision(&s, req.revision)?;
    s.apply_edit(req.edit, &state.spec).map_err(edit_error)?;
    Ok(Json(view(&s, &state.spec)?))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UndoRequest {
    pub revision: u64,
}

async fn undo_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    JsonBody(req): JsonBody<UndoRequest>,
) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let mut s = session.write().unwrap();
    check_revision(&s, req.revision)?;
    s.undo(&state.spec).map_err(edit_error)?;
    Ok(Json(view(&s, &state.spec)?))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResampleRequest {
    pub revision: u64,
    /// Defaults to the revision, so repeated requests give new layouts.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Overrides the grammar's relation weight for this re-layout.
    #[serde(default)]
    pub relation_weight: Option<f64>,
}

async fn resample_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    JsonBody(req): JsonBody<ResampleRequest>,
) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    if let Some(w) = req.relation_weight {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(
                ApiError::new(StatusCode::BAD_REQUEST, "invalid relation weight")
                    .field("relation_weight", "must be a non-negative number"),
            );
        }
    }
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let mut s = session.write().unwrap();
        check_revision(&s, req.revision)?;
        let seed = req.seed.unwrap_or(s.revision);
        s.resample(seed, req.relation_weight, &st.resample, &st.spec)
            .map_err(edit_error)?;
        view(&s, &st.spec)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map(Json)
}

async fn instance_map(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let session = state.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let graph = session.read().unwrap().graph.clone();
    let map = rasterize_instance_map(&graph, &state.spec).map_err(core_error)?;
    Ok((
        [(header::CONTENT_TYPE, "application/octet-stream")],
        map.to_simap_bytes(),
    )
        .into_response())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferMethod {
    #[default]
    Map,
    Gibbs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferRequest {
    pub objects: Vec<ObjectInstance>,
    #[serde(default)]
    pub method: InferMethod,
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_sweeps() -> usize {
    50
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InferResponse {
    pub relations: Vec<Relation>,
    /// Unweighted hinge energy of the inferred relations.
    pub sum_relation: f64,
}

async fn infer(
    State(state): State<Arc<AppState>>,
    JsonBody(req): JsonBody<InferRequest>,
) -> Result<Json<InferResponse>, ApiError> {
    if req.objects.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "no objects")
            .field("objects", "must not be empty"));
    }
    if req.sweeps == 0 {
        return Err(
            ApiError::new(StatusCode::BAD_REQUEST, "no sweeps").field("sweeps", "must be positive")
        );
    }
    let diags = validate(&state.spec, &ParseGraph::new(req.objects.clone(), vec![]));
    if !diags.is_empty() {
        return Err(invalid_graph("", &diags));
    }
    let relations = match req.method {
        InferMethod::Map => infer_relations_map(&req.objects, &state.spec),
        InferMethod::Gibbs => infer_relations_gibbs(
            &req.objects,
            &state.spec,
            req.sweeps,
            &default_schedule(req.sweeps),
            req.seed,
        ),
    }
    .map_err(core_error)?;
    let g = ParseGraph::new(req.objects, relations);
    let sum_relation = term_sums(&g, &state.spec).map_err(core_error)?.relation;
    Ok(Json(InferResponse {
        relations: g.relations,
        sum_relation,
    }))
}
