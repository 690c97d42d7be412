//! Authenticated, validated, idempotent ingestion into the series store and
//! rules engine.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use predihealth::model::{
    validate_sample, DeviceId, EnvSample, Enrollment, Metric, PatientId, Sample, SampleValue, ValidationError,
    VitalSample,
};
use predihealth::rules::{AlertError, RulesEngine};
use predihealth::store::{SeriesKey, SeriesStore, StoreError};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use uuid::Uuid;

use crate::message::{parse_value, DeviceMessage, ParseError};
use crate::registry::{DeviceKind, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
    /// True when this was a retry of an already stored message.
    pub duplicate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alert_id: Option<Uuid>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("authentication failed")]
    AuthFailed,
    #[error("patient {0} is not enrolled")]
    PatientNotEnrolled(PatientId),
    #[error("unit `{got}` is not the canonical `{expected}` for {metric}")]
    UnitMismatch { metric: Metric, expected: &'static str, got: String },
    #[error("{kind:?} devices do not report {metric}")]
    MetricNotAllowed { kind: DeviceKind, metric: Metric },
    #[error("validation failed: {0}")]
    ValidationFailed(#[from] ValidationError),
    #[error("{device_id} already sent a different {metric} value at {ts}")]
    ConflictingRetry { device_id: DeviceId, metric: Metric, ts: DateTime<Utc> },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Alert(#[from] AlertError),
}

impl IngestError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::Parse(ParseError::MalformedJson(_)) => "malformed_json",
            IngestError::Parse(ParseError::MissingField(_)) => "missing_field",
            IngestError::Parse(ParseError::BadTimestamp(_)) => "bad_timestamp",
            IngestError::Parse(ParseError::BadField { .. }) => "bad_field",
            IngestError::AuthFailed => "auth_failed",
            IngestError::PatientNotEnrolled(_) => "patient_not_enrolled",
            IngestError::UnitMismatch { .. } => "unit_mismatch",
            IngestError::MetricNotAllowed { .. } => "metric_not_allowed",
            IngestError::ValidationFailed(v) => match v {
                ValidationError::OutOfRange { .. } => "out_of_range",
                ValidationError::UnknownMetric(_) => "unknown_metric",
                ValidationError::NonMonotoneTimestamp { .. } | ValidationError::NonMonotoneSeq { .. } => "out_of_order",
                ValidationError::WrongValueType { .. } | ValidationError::EmptySeries { .. } => "bad_value",
                _ => "validation_failed",
            },
            IngestError::ConflictingRetry { .. } => "conflicting_retry",
            IngestError::Store(_) => "storage_failure",
            IngestError::Alert(_) => "alert_failure",
        }
    }

    /// False for failures on our side rather than the sender's.
    pub fn is_rejection(&self) -> bool {
        !matches!(self, IngestError::Store(_) | IngestError::Alert(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestStats {
    pub accepted: u64,
    pub duplicates: u64,
    pub rejected: u64,
}

/// Per-(patient, metric) stream: the lock that serializes it and the
/// idempotency index over what it has stored.
#[derive(Default)]
struct Stream {
    seen: HashMap<(DeviceId, DateTime<Utc>), (SampleValue, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ack: Option<Ack>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub code: String,
    pub message: String,
}

impl From<&IngestError> for Rejection {
    fn from(e: &IngestError) -> Self {
        Rejection { code: e.code().to_owned(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchReport {
    pub accepted: usize,
    pub rejected: usize,
    pub items: Vec<BatchItem>,
}

pub struct Gateway {
    registry: Arc<Registry>,
    store: Arc<SeriesStore>,
    engine: Arc<RulesEngine>,
    streams: Mutex<HashMap<SeriesKey, Arc<Mutex<Stream>>>>,
    accepted: AtomicU64,
    duplicates: AtomicU64,
    rejected: AtomicU64,
}

fn to_sample(msg: &DeviceMessage, metric: Metric) -> Sample {
    match metric {
        Metric::Vital(m) => Sample::Vital(VitalSample {
            patient_id: msg.patient_id.clone(),
            device_id: msg.device_id.clone(),
            metric: m,
            value: msg.value.clone(),
            timestamp: msg.ts,
            seq: 0,
        }),
        Metric::Env(m) => Sample::Env(EnvSample {
            patient_id: msg.patient_id.clone(),
            sensor_id: msg.device_id.clone(),
            metric: m,
            value: msg.value.clone(),
            timestamp: msg.ts,
            seq: 0,
        }),
    }
}

impl Gateway {
    /// Rebuilds the idempotency index and rule state from what the store
    /// already holds.
    pub fn new(registry: Arc<Registry>, store: Arc<SeriesStore>, engine: Arc<RulesEngine>) -> Self {
        let mut streams = HashMap::new();
        let mut history = Vec::new();
        for (key, samples) in store.snapshot() {
            let mut stream = Stream::default();
            for s in &samples {
                stream.seen.insert((s.source_id().clone(), s.timestamp()), (s.value().clone(), s.seq()));
            }
            streams.insert(key, Arc::new(Mutex::new(stream)));
            history.extend(samples);
        }
        history.sort_by_key(|s| (s.timestamp(), s.metric(), s.seq()));
        for s in &history {
            engine.prime(s);
        }
        Gateway {
            registry,
            store,
            engine,
            streams: Mutex::new(streams),
            accepted: AtomicU64::new(0),
            duplicates: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
        }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn store(&self) -> &Arc<SeriesStore> {
        &self.store
    }

    pub fn engine(&self) -> &Arc<RulesEngine> {
        &self.engine
    }

    pub fn stats(&self) -> IngestStats {
        IngestStats {
            accepted: self.accepted.load(Ordering::Relaxed),
            duplicates: self.duplicates.load(Ordering::Relaxed),
            rejected: self.rejected.load(Ordering::Relaxed),
        }
    }

    fn stream(&self, key: &SeriesKey) -> Arc<Mutex<Stream>> {
        self.streams.lock().entry(key.clone()).or_default().clone()
    }

    pub fn ingest(&self, msg: &DeviceMessage) -> Result<Ack, IngestError> {
        let out = self.ingest_inner(msg);
        match &out {
            Ok(a) if a.duplicate => self.duplicates.fetch_add(1, Ordering::Relaxed),
            Ok(_) => self.accepted.fetch_add(1, Ordering::Relaxed),
            Err(_) => self.rejected.fetch_add(1, Ordering::Relaxed),
        };
        out
    }

    fn ingest_inner(&self, msg: &DeviceMessage) -> Result<Ack, IngestError> {
        let binding = self.registry.authenticate(&msg.device_id, &msg.token).map_err(|_| IngestError::AuthFailed)?;
        if binding.patient_id != msg.patient_id {
            return Err(IngestError::AuthFailed);
        }
        let patient = self
            .registry
            .patient(&msg.patient_id)
            .filter(|p| p.enrollment == Enrollment::Enrolled)
            .ok_or_else(|| IngestError::PatientNotEnrolled(msg.patient_id.clone()))?;
        let metric: Metric = msg.metric.parse()?;
        if msg.unit != metric.unit() {
            return Err(IngestError::UnitMismatch { metric, expected: metric.unit(), got: msg.unit.clone() });
        }
        if !binding.kind.accepts(metric) {
            return Err(IngestError::MetricNotAllowed { kind: binding.kind, metric });
        }

        let key = SeriesKey::new(msg.patient_id.clone(), metric);
        let stream = self.stream(&key);
        let mut stream = stream.lock();
        let id_key = (msg.device_id.clone(), msg.ts);
        if let Some((value, seq)) = stream.seen.get(&id_key) {
            if *value == msg.value {
                return Ok(Ack { seq: *seq, duplicate: true, alert_id: None });
            }
            return Err(IngestError::ConflictingRetry { device_id: msg.device_id.clone(), metric, ts: msg.ts });
        }
        let validated = validate_sample(to_sample(msg, metric), self.store.cursor(&key))?;
        let seq = self.store.append(validated)?;
        let mut stored = to_sample(msg, metric);
        stored.set_seq(seq);
        stream.seen.insert(id_key, (msg.value.clone(), seq));
        let eval = self.engine.observe(&stored, patient.location_mode)?;
        Ok(Ack { seq, duplicate: false, alert_id: eval.alert.map(|a| a.alert_id) })
    }

    /// Ingests every element independently; one failure does not stop the rest.
    pub fn ingest_batch(&self, items: &[Value]) -> BatchReport {
        let mut report = BatchReport::default();
        for (index, doc) in items.iter().enumerate() {
            let out = parse_value(doc).map_err(IngestError::from).and_then(|m| self.ingest(&m));
            let item = match out {
                Ok(ack) => {
                    report.accepted += 1;
                    BatchItem { index, ack: Some(ack), error: None }
                }
                Err(e) => {
                    if matches!(e, IngestError::Parse(_)) {
                        self.rejected.fetch_add(1, Ordering::Relaxed);
                    }
                    report.rejected += 1;
                    BatchItem { index, ack: None, error: Some(Rejection::from(&e)) }
                }
            };
            report.items.push(item);
        }
        report
    }
}
