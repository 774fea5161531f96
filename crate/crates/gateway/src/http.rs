//! Axum router over a shared [`Engine`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use aw_core::compose::Condition;
use aw_core::eval::{Label, StageOneCoding};
use aw_core::workflow::{CreateProject, Engine};

use crate::ops::{self, ReportFormat, StageRequest};
use crate::sim::{self, SimFormat, SimulationRequest};
use crate::ApiError;

pub const ROLE_HEADER: &str = "x-aw-role";
pub const IDENTITY_HEADER: &str = "x-aw-identity";

type ApiResult<T> = Result<T, ApiError>;

/// JSON body whose rejections become `validation_failed`.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(rej) => Err(json_rejection(rej)),
        }
    }
}

fn json_rejection(rej: JsonRejection) -> ApiError {
    ApiError::validation(rej.body_text())
}

/// Query string whose rejections become `validation_failed`.
pub struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| Params(v))
            .map_err(|rej| ApiError::validation(rej.body_text()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Requester,
    Worker,
}

/// Caller identity from the static role headers. A missing role header
/// means requester.
pub struct Caller {
    pub role: Role,
    pub identity: Option<String>,
}

impl Caller {
    fn from_headers(headers: &HeaderMap) -> ApiResult<Self> {
        let text = |name: &str| -> ApiResult<Option<String>> {
            headers
                .get(name)
                .map(|v| {
                    v.to_str()
                        .map(|s| s.trim().to_owned())
                        .map_err(|_| ApiError::validation(format!("header {name} is not valid text")))
                })
                .transpose()
        };
        let role = match text(ROLE_HEADER)?.as_deref() {
            None | Some("requester") => Role::Requester,
            Some("worker") => Role::Worker,
            Some(other) => {
                return Err(ApiError::validation(format!(
                    "unknown role `{other}` (expected requester or worker)"
                )))
            }
        };
        let identity = text(IDENTITY_HEADER)?.filter(|s| !s.is_empty());
        Ok(Self { role, identity })
    }

    fn requester(&self) -> ApiResult<()> {
        match self.role {
            Role::Requester => Ok(()),
            Role::Worker => Err(ApiError::forbidden("requester role required")),
        }
    }

    /// Worker id from the identity header, falling back to the body field.
    /// A worker may not act under another worker's id.
    fn worker_id(&self, from_body: Option<String>) -> ApiResult<String> {
        match (&self.identity, from_body) {
            (Some(h), Some(b)) if *h != b && self.role == Role::Worker => {
                Err(ApiError::forbidden("workerId does not match the caller identity"))
            }
            (_, Some(b)) => Ok(b),
            (Some(h), None) => Ok(h.clone()),
            (None, None) => Err(ApiError::validation(
                "worker id required (X-AW-Identity header or workerId field)",
            )),
        }
    }
}

impl<S: Send + Sync> FromRequestParts<S> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        Caller::from_headers(&parts.headers)
    }
}

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
}

/// Runs engine work off the async executor; the engine blocks on locks and fsync.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> ApiResult<T> + Send + 'static,
{
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::new("internal", e.to_string()))?
}

fn json<T: Serialize>(status: StatusCode, value: T) -> Response {
    (status, Json(value)).into_response()
}

fn ok<T: Serialize>(value: T) -> Response {
    json(StatusCode::OK, value)
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(show_project))
        .route("/projects/{id}/stage", post(change_stage))
        .route("/projects/{id}/submissions", post(submit))
        .route("/projects/{id}/feed", get(feed))
        .route("/projects/{id}/codings", post(code))
        .route("/projects/{id}/metrics", get(metrics))
        .route("/projects/{id}/resolution/toggle", post(toggle))
        .route("/projects/{id}/resolution/commit", post(commit))
        .route("/projects/{id}/bundles", post(compose))
        .route("/projects/{id}/assignments", post(assign))
        .route("/projects/{id}/report", get(report))
        .route("/projects/{id}/events", get(events))
        .route("/assignments/{id}", get(show_assignment))
        .route("/assignments/{id}/labels", post(label))
        .route("/assignments/{id}/expire", post(expire))
        .route("/workers/{id}", get(worker))
        .route("/simulations", post(simulate))
        .fallback(|| async { ApiError::not_found("no such route") })
        .with_state(AppState { engine })
}

async fn health() -> Response {
    ok(serde_json::json!({ "status": "ok" }))
}

async fn create_project(State(s): State<AppState>, caller: Caller, Body(req): Body<CreateProject>) -> ApiResult<Response> {
    caller.requester()?;
    let project = blocking(&s, move |e| Ok(e.create_project(req)?)).await?;
    Ok(json(StatusCode::CREATED, project.as_ref()))
}

async fn list_projects(State(s): State<AppState>) -> Response {
    ok(s.engine.project_ids())
}

async fn show_project(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(ok(s.engine.project(&id)?.as_ref()))
}

async fn change_stage(
    State(s): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<StageRequest>,
) -> ApiResult<Response> {
    caller.requester()?;
    let project = blocking(&s, move |e| ops::change_stage(e, &id, &req)).await?;
    Ok(ok(project.as_ref()))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct SubmissionBody {
    image_uri: String,
    concept_tag: String,
    worker_id: Option<String>,
}

async fn submit(
    State(s): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<SubmissionBody>,
) -> ApiResult<Response> {
    let worker = caller.worker_id(req.worker_id)?;
    let sub = blocking(&s, move |e| {
        Ok(e.submit_ambiguous_example(&id, &worker, &req.image_uri, &req.concept_tag)?)
    })
    .await?;
    Ok(json(StatusCode::CREATED, sub))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct FeedQuery {
    as_of: Option<u64>,
}

async fn feed(State(s): State<AppState>, Path(id): Path<String>, Params(q): Params<FeedQuery>) -> ApiResult<Response> {
    Ok(ok(s.engine.list_feed(&id, q.as_of)?))
}

async fn code(
    State(s): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
    Body(coding): Body<StageOneCoding>,
) -> ApiResult<Response> {
    caller.requester()?;
    let sub = blocking(&s, move |e| Ok(e.code_submission(&id, coding)?)).await?;
    Ok(ok(sub))
}

#[derive(Deserialize)]
struct MetricsQuery {
    total: Option<u64>,
}

async fn metrics(State(s): State<AppState>, Path(id): Path<String>, Params(q): Params<MetricsQuery>) -> ApiResult<Response> {
    Ok(ok(s.engine.stage_one_metrics(&id, q.total)?))
}

#[derive(Deserialize, Serialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ToggleBody {
    target_id: String,
}

async fn toggle(
    State(s): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<ToggleBody>,
) -> ApiResult<Response> {
    caller.requester()?;
    let target = req.target_id.clone();
    let state = blocking(&s, move |e| Ok(e.toggle_example(&id, &target)?)).await?;
    Ok(ok(serde_json::json!({ "targetId": req.target_id, "state": state })))
}

async fn commit(State(s): State<AppState>, caller: Caller, Path(id): Path<String>) -> ApiResult<Response> {
    caller.requester()?;
    let resolved = blocking(&s, move |e| Ok(e.commit_resolution(&id)?)).await?;
    Ok(ok(resolved))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ComposeBody {
    condition: Condition,
    k: Option<usize>,
    #[serde(default)]
    rng_seed: u64,
}

async fn compose(
    State(s): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<ComposeBody>,
) -> ApiResult<Response> {
    caller.requester()?;
    let bundle = blocking(&s, move |e| Ok(e.compose_bundle(&id, req.condition, req.k, req.rng_seed)?)).await?;
    Ok(ok(bundle))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct AssignBody {
    condition: Condition,
    batch_size: usize,
    rng_seed: Option<u64>,
    worker_id: Option<String>,
}

async fn assign(
    State(s): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<AssignBody>,
) -> ApiResult<Response> {
    let worker = caller.worker_id(req.worker_id)?;
    let a = blocking(&s, move |e| {
        Ok(e.request_assignment(&id, &worker, req.condition, req.batch_size, req.rng_seed)?)
    })
    .await?;
    Ok(ok(a))
}

async fn show_assignment(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(ok(s.engine.assignment(&id)?))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct LabelBody {
    image_id: String,
    label: Label,
}

async fn label(
    State(s): State<AppState>,
    caller: Caller,
    Path(id): Path<String>,
    Body(req): Body<LabelBody>,
) -> ApiResult<Response> {
    let receipt = blocking(&s, move |e| {
        let a = e.assignment(&id)?;
        if caller.role == Role::Worker && caller.identity.as_deref().is_some_and(|w| w != a.worker_id) {
            return Err(ApiError::forbidden("assignment belongs to another worker"));
        }
        Ok(e.submit_label(&id, &req.image_id, req.label)?)
    })
    .await?;
    let status = if receipt.duplicate {
        StatusCode::OK
    } else {
        StatusCode::CREATED
    };
    Ok(json(status, receipt))
}

async fn expire(State(s): State<AppState>, caller: Caller, Path(id): Path<String>) -> ApiResult<Response> {
    caller.requester()?;
    let a = blocking(&s, move |e| Ok(e.expire_assignment(&id)?)).await?;
    Ok(ok(a))
}

#[derive(Deserialize)]
struct ReportQuery {
    #[serde(default)]
    format: ReportFormat,
    layout: Option<String>,
}

async fn report(State(s): State<AppState>, Path(id): Path<String>, Params(q): Params<ReportQuery>) -> ApiResult<Response> {
    let layout = ops::parse_layout(q.layout.as_deref())?;
    let report = s.engine.report(&id)?;
    Ok(match q.format {
        ReportFormat::Json => ok(report),
        ReportFormat::Csv => {
            let manifest = s.engine.manifest(&id)?;
            let body = ops::render_report(&report, &manifest, q.format, layout)?;
            ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response()
        }
    })
}

async fn events(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(ok(s.engine.events(&id)?))
}

async fn worker(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    ok(s.engine.worker_profile(&id))
}

async fn simulate(Body(req): Body<SimulationRequest>) -> ApiResult<Response> {
    let preset = req.preset()?;
    let format = req.format;
    let report = tokio::task::spawn_blocking(move || {
        let manifest = aw_core::model::DatasetManifest::dog_fixture();
        sim::run(&manifest, &preset)
    })
    .await
    .map_err(|e| ApiError::new("internal", e.to_string()))??;
    Ok(match format {
        SimFormat::Json => ok(report),
        SimFormat::Csv => (
            [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
            sim::table_csv(&report),
        )
            .into_response(),
    })
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
}

/// Binds, prints the listening URL on stdout, and serves until ctrl-c or
/// SIGTERM. Every append is synced before it is acknowledged, so shutdown
/// has nothing left to flush.
pub async fn serve(config: ServeConfig) -> Result<(), ApiError> {
    let engine = Engine::with_data_dir(&config.data_dir)?;
    let listener = tokio::net::TcpListener::bind((config.host.as_str(), config.port))
        .await
        .map_err(|e| ApiError::new("unavailable", format!("cannot bind {}:{}: {e}", config.host, config.port)))?;
    let addr: SocketAddr = listener
        .local_addr()
        .map_err(|e| ApiError::new("storage_error", e.to_string()))?;
    println!("listening on http://{addr}");
    use std::io::Write as _;
    let _ = std::io::stdout().flush();
    axum::serve(listener, router(Arc::new(engine)))
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(|e| ApiError::new("internal", e.to_string()))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
