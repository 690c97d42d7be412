//! HTTP API: device ingestion, enrollment, alerts, FHIR export, the
//! stratification queue, and the alert WebSocket.

use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use hyper_util::rt::TokioIo;
use parking_lot::RwLock;
use predihealth::fhir::{export_bundle, FhirError};
use predihealth::model::{DeviceId, Enrollment, LocationMode, PatientId, PatientRecord, ValidationError};
use predihealth::rules::{AlertError, AlertEvent, AlertSink, AlertState};
use predihealth::stratify::{highlights, predict, FeatureRow, Highlight, StratifyError};
use predihealth::StackedModel;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc, watch};
use uuid::Uuid;

use crate::ingest::{Gateway, IngestError};
use crate::message::{parse_message, ParseError};
use crate::registry::{DeviceKind, RegistryError};
use crate::ws;

/// Fans alert snapshots out to WebSocket subscribers.
pub struct AlertHub {
    tx: broadcast::Sender<AlertEvent>,
}

impl AlertHub {
    pub fn new(capacity: usize) -> Self {
        AlertHub { tx: broadcast::channel(capacity).0 }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<AlertEvent> {
        self.tx.subscribe()
    }
}

impl AlertSink for AlertHub {
    fn publish(&self, event: &AlertEvent) {
        // no subscribers is fine
        let _ = self.tx.send(event.clone());
    }
}

pub struct AppState {
    pub gateway: Arc<Gateway>,
    pub hub: Arc<AlertHub>,
    pub model: RwLock<Option<Arc<StackedModel>>>,
    pub shutdown: watch::Receiver<bool>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let status = match &e {
            IngestError::Parse(_) => StatusCode::BAD_REQUEST,
            IngestError::AuthFailed => StatusCode::UNAUTHORIZED,
            IngestError::PatientNotEnrolled(_) => StatusCode::FORBIDDEN,
            IngestError::ConflictingRetry { .. } => StatusCode::CONFLICT,
            IngestError::UnitMismatch { .. } | IngestError::MetricNotAllowed { .. } | IngestError::ValidationFailed(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            IngestError::Store(_) | IngestError::Alert(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let (status, code) = match &e {
            RegistryError::UnknownPatient(_) => (StatusCode::NOT_FOUND, "unknown_patient"),
            RegistryError::UnknownDevice(_) => (StatusCode::NOT_FOUND, "unknown_device"),
            RegistryError::PatientNotEnrolled(_) => (StatusCode::CONFLICT, "patient_not_enrolled"),
            RegistryError::DuplicateBinding { .. } => (StatusCode::CONFLICT, "duplicate_binding"),
            RegistryError::Invalid(ValidationError::EnrollmentTransition { .. }) => (StatusCode::CONFLICT, "bad_state"),
            RegistryError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_patient"),
            RegistryError::Storage { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage_failure"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<AlertError> for ApiError {
    fn from(e: AlertError) -> Self {
        let (status, code) = match &e {
            AlertError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            AlertError::BadState { .. } => (StatusCode::CONFLICT, "bad_state"),
            AlertError::Storage { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage_failure"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/ingest", post(ingest_one))
        .route("/v1/ingest/batch", post(ingest_batch))
        .route("/v1/stats", get(stats))
        .route("/v1/devices", post(register_device))
        .route("/v1/devices/{id}/deactivate", post(deactivate_device))
        .route("/v1/patients", get(list_patients).post(upsert_patient))
        .route("/v1/patients/{id}", get(get_patient))
        .route("/v1/patients/{id}/enroll", post(enroll))
        .route("/v1/patients/{id}/decline", post(decline))
        .route("/v1/patients/{id}/location", put(set_location))
        .route("/v1/patients/{id}/score", get(score))
        .route("/v1/alerts", get(list_alerts))
        .route("/v1/alerts/{id}/ack", post(ack_alert))
        .route("/v1/alerts/{id}/resolve", post(resolve_alert))
        .route("/v1/stream/alerts", get(alert_stream))
        .route("/v1/fhir/patients/{id}/observations", get(fhir_observations))
        .route("/v1/stratify/queue", get(queue))
        .with_state(state)
}

async fn ingest_one(State(s): Shared, body: Bytes) -> ApiResult<impl IntoResponse> {
    let msg = parse_message(&body).map_err(IngestError::from)?;
    Ok(Json(s.gateway.ingest(&msg)?))
}

async fn ingest_batch(State(s): Shared, body: Bytes) -> ApiResult<impl IntoResponse> {
    let doc: Value =
        serde_json::from_slice(&body).map_err(|e| IngestError::from(ParseError::MalformedJson(e.to_string())))?;
    let items = doc
        .as_array()
        .ok_or_else(|| IngestError::from(ParseError::MalformedJson("expected a JSON array".into())))?;
    Ok(Json(s.gateway.ingest_batch(items)))
}

async fn stats(State(s): Shared) -> impl IntoResponse {
    Json(s.gateway.stats())
}

#[derive(Debug, Deserialize)]
struct RegisterRequest {
    kind: DeviceKind,
    patient_id: PatientId,
}

async fn register_device(State(s): Shared, Json(req): Json<RegisterRequest>) -> ApiResult<impl IntoResponse> {
    let cred = s.gateway.registry().register_device(req.kind, &req.patient_id)?;
    Ok((StatusCode::CREATED, Json(cred)))
}

#[derive(Debug, Serialize)]
struct DeviceView {
    device_id: DeviceId,
    patient_id: PatientId,
    kind: DeviceKind,
    active: bool,
}

async fn deactivate_device(State(s): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let d = s.gateway.registry().deactivate_device(&DeviceId::new(id))?;
    Ok(Json(DeviceView { device_id: d.device_id, patient_id: d.patient_id, kind: d.kind, active: d.active }))
}

async fn list_patients(State(s): Shared) -> impl IntoResponse {
    Json(s.gateway.registry().patients())
}

async fn upsert_patient(State(s): Shared, Json(record): Json<PatientRecord>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.gateway.registry().upsert_patient(record)?))
}

fn known_patient(s: &AppState, id: &str) -> ApiResult<PatientRecord> {
    let id = PatientId::new(id);
    s.gateway.registry().patient(&id).ok_or_else(|| RegistryError::UnknownPatient(id).into())
}

async fn get_patient(State(s): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(known_patient(&s, &id)?))
}

async fn enroll(State(s): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.gateway.registry().enroll(&PatientId::new(id))?))
}

async fn decline(State(s): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.gateway.registry().decline(&PatientId::new(id))?))
}

#[derive(Debug, Deserialize)]
struct LocationRequest {
    mode: LocationMode,
}

async fn set_location(
    State(s): Shared,
    Path(id): Path<String>,
    Json(req): Json<LocationRequest>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.gateway.registry().set_location(&PatientId::new(id), req.mode)?))
}

async fn score(State(s): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let p = known_patient(&s, &id)?;
    s.gateway
        .engine()
        .latest_score(&p.patient_id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_score", format!("no telemetry scored yet for {id}")))
}

#[derive(Debug, Deserialize)]
struct AlertQuery {
    state: Option<String>,
}

fn parse_state(raw: &str) -> Option<AlertState> {
    match raw.to_ascii_lowercase().as_str() {
        "open" => Some(AlertState::Open),
        "acknowledged" => Some(AlertState::Acknowledged),
        "resolved" => Some(AlertState::Resolved),
        _ => None,
    }
}

/// Alerts oldest first, ties by id.
async fn list_alerts(State(s): Shared, Query(q): Query<AlertQuery>) -> ApiResult<impl IntoResponse> {
    let state = match q.state.as_deref() {
        None => None,
        Some(raw) => Some(parse_state(raw).ok_or_else(|| {
            ApiError::new(StatusCode::BAD_REQUEST, "bad_query", format!("unknown alert state `{raw}`"))
        })?),
    };
    let mut alerts = s.gateway.engine().alerts().list(state);
    alerts.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.alert_id.cmp(&b.alert_id)));
    Ok(Json(alerts))
}

fn alert_id(raw: &str) -> ApiResult<Uuid> {
    Uuid::parse_str(raw).map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no alert `{raw}`")))
}

#[derive(Debug, Deserialize)]
struct AckRequest {
    clinician_id: String,
}

async fn ack_alert(State(s): Shared, Path(id): Path<String>, Json(req): Json<AckRequest>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.gateway.engine().alerts().ack_alert(alert_id(&id)?, &req.clinician_id)?))
}

async fn resolve_alert(State(s): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.gateway.engine().alerts().resolve_alert(alert_id(&id)?)?))
}

#[derive(Debug, Deserialize)]
struct WindowQuery {
    from: Option<String>,
    to: Option<String>,
}

fn instant(raw: Option<&str>, default: DateTime<Utc>) -> ApiResult<DateTime<Utc>> {
    match raw {
        None => Ok(default),
        Some(r) => DateTime::parse_from_rfc3339(r)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "bad_timestamp", format!("`{r}` is not RFC 3339"))),
    }
}

async fn fhir_observations(
    State(s): Shared,
    Path(id): Path<String>,
    Query(q): Query<WindowQuery>,
) -> ApiResult<impl IntoResponse> {
    let t0 = instant(q.from.as_deref(), DateTime::<Utc>::MIN_UTC)?;
    let t1 = instant(q.to.as_deref(), DateTime::<Utc>::MAX_UTC)?;
    if t0 > t1 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_window", "`from` is after `to`"));
    }
    let pid = PatientId::new(id);
    match export_bundle(s.gateway.store(), &pid, t0, t1) {
        Ok(bundle) => Ok(Json(bundle)),
        Err(FhirError::UnknownPatient(p)) => {
            Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_patient", format!("no telemetry for patient {p}")))
        }
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "export_failed", e.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    /// 1-based position.
    pub rank: usize,
    pub patient_id: String,
    pub probability: f64,
    pub at_risk: bool,
    pub p_clinical: f64,
    pub p_echo: f64,
    /// Absent when ranking rows that are not registered patients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enrollment: Option<Enrollment>,
    pub highlights: Vec<Highlight<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unscorable {
    pub patient_id: String,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnrollmentQueue {
    pub items: Vec<QueueItem>,
    pub unscorable: Vec<Unscorable>,
}

/// Every known patient ranked by predicted risk, highest first, ties by id.
pub fn enrollment_queue(model: &StackedModel, patients: &[PatientRecord]) -> EnrollmentQueue {
    let rows: Vec<_> = patients.iter().map(|p| (FeatureRow::from(p), Some(p.enrollment))).collect();
    rank_candidates(model, &rows)
}

/// Ranks feature rows by predicted risk; rows the model cannot score are
/// listed separately with what they lack.
pub fn rank_candidates(model: &StackedModel, rows: &[(FeatureRow, Option<Enrollment>)]) -> EnrollmentQueue {
    let mut items = Vec::new();
    let mut unscorable = Vec::new();
    for (row, enrollment) in rows {
        match predict(model, row) {
            Ok(pred) => items.push(QueueItem {
                rank: 0,
                patient_id: row.patient_id.clone(),
                probability: pred.probability,
                at_risk: pred.at_risk,
                p_clinical: pred.p_clinical,
                p_echo: pred.p_echo,
                enrollment: *enrollment,
                highlights: highlights(model, row, 3).unwrap_or_default(),
            }),
            Err(StratifyError::MissingFeatures(missing)) => {
                unscorable.push(Unscorable { patient_id: row.patient_id.clone(), missing })
            }
            Err(e) => unscorable.push(Unscorable { patient_id: row.patient_id.clone(), missing: vec![e.to_string()] }),
        }
    }
    items.sort_by(|a, b| b.probability.total_cmp(&a.probability).then_with(|| a.patient_id.cmp(&b.patient_id)));
    for (i, item) in items.iter_mut().enumerate() {
        item.rank = i + 1;
    }
    unscorable.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    EnrollmentQueue { items, unscorable }
}

async fn queue(State(s): Shared) -> ApiResult<impl IntoResponse> {
    let model = s.model.read().clone().ok_or_else(|| {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model_unavailable", "no stratification model is loaded")
    })?;
    Ok(Json(enrollment_queue(&model, &s.gateway.registry().patients())))
}

fn header_is(headers: &HeaderMap, name: header::HeaderName, token: &str) -> bool {
    headers
        .get(name)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|part| part.trim().eq_ignore_ascii_case(token)))
}

async fn alert_stream(State(s): Shared, mut req: Request) -> Response {
    let headers = req.headers();
    let key = headers.get(header::SEC_WEBSOCKET_KEY).and_then(|v| v.to_str().ok()).map(str::to_owned);
    let ok = header_is(headers, header::UPGRADE, "websocket")
        && header_is(headers, header::CONNECTION, "upgrade")
        && header_is(headers, header::SEC_WEBSOCKET_VERSION, "13");
    let Some(key) = key.filter(|_| ok) else {
        return ApiError::new(StatusCode::UPGRADE_REQUIRED, "upgrade_required", "expected a WebSocket upgrade")
            .into_response();
    };
    let on_upgrade = hyper::upgrade::on(&mut req);
    // subscribe before answering so nothing emitted after the 101 is missed
    let mut alerts = s.hub.subscribe();
    let mut shutdown = s.shutdown.clone();
    tokio::spawn(async move {
        let upgraded = match on_upgrade.await {
            Ok(u) => u,
            Err(e) => {
                tracing::debug!(error = %e, "websocket upgrade failed");
                return;
            }
        };
        let (tx, rx) = mpsc::channel::<String>(64);
        let forward = tokio::spawn(async move {
            loop {
                tokio::select! {
                    ev = alerts.recv() => match ev {
                        Ok(ev) => {
                            let text = serde_json::to_string(&ev).expect("alerts serialize");
                            if tx.send(text).await.is_err() {
                                return;
                            }
                        }
                        Err(broadcast::error::RecvError::Lagged(n)) => {
                            tracing::warn!(missed = n, "alert stream subscriber lagged; client must reconcile");
                        }
                        Err(broadcast::error::RecvError::Closed) => return,
                    },
                    _ = shutdown.changed() => return,
                }
            }
        });
        if let Err(e) = ws::serve_stream(TokioIo::new(upgraded), rx).await {
            tracing::debug!(error = %e, "websocket closed with error");
        }
        forward.abort();
    });
    Response::builder()
        .status(StatusCode::SWITCHING_PROTOCOLS)
        .header(header::UPGRADE, "websocket")
        .header(header::CONNECTION, "Upgrade")
        .header(header::SEC_WEBSOCKET_ACCEPT, ws::accept_key(&key))
        .body(Body::empty())
        .expect("static response parts")
}
