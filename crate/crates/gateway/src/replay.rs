//! Replays recorded or simulated telemetry into a gateway, one ordered task
//! per (device, metric) stream.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use predihealth::model::{DeviceId, PatientId, PatientRecord, Sample};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::task::JoinSet;

use crate::ingest::{Ack, Gateway};
use crate::message::DeviceMessage;
use crate::registry::{DeviceKind, RegistryError};

/// Device id to plaintext token.
pub type Tokens = HashMap<DeviceId, String>;

#[derive(Clone)]
pub enum IngestTarget {
    InProcess(Arc<Gateway>),
    Http { base: String, client: reqwest::Client },
}

impl IngestTarget {
    pub fn http(base: impl Into<String>) -> Self {
        IngestTarget::Http { base: base.into().trim_end_matches('/').to_owned(), client: reqwest::Client::new() }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("gateway at {base} is unreachable: {reason}")]
    GatewayUnavailable { base: String, reason: String },
    #[error("provisioning failed: {0}")]
    Provision(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub device_id: DeviceId,
    pub metric: String,
    pub ts: DateTime<Utc>,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub messages: usize,
    pub accepted: usize,
    pub duplicates: usize,
    /// Acks that opened a new alert.
    pub alerts: usize,
    pub rejected: Vec<RejectRecord>,
    pub streams: usize,
    pub wall_clock_s: f64,
    pub throughput_per_s: f64,
}

enum Outcome {
    Ack(Ack),
    Reject { code: String, message: String },
}

async fn send(target: &IngestTarget, msg: &DeviceMessage) -> Result<Outcome, ReplayError> {
    match target {
        IngestTarget::InProcess(gw) => Ok(match gw.ingest(msg) {
            Ok(ack) => Outcome::Ack(ack),
            Err(e) => Outcome::Reject { code: e.code().to_owned(), message: e.to_string() },
        }),
        IngestTarget::Http { base, client } => {
            let resp = client
                .post(format!("{base}/v1/ingest"))
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(msg.to_json())
                .send()
                .await
                .map_err(|e| ReplayError::GatewayUnavailable { base: base.clone(), reason: e.to_string() })?;
            let status = resp.status();
            let body: Value = resp.json().await.unwrap_or(Value::Null);
            if status.is_success() {
                match serde_json::from_value::<Ack>(body) {
                    Ok(ack) => Ok(Outcome::Ack(ack)),
                    Err(e) => Ok(Outcome::Reject { code: "bad_response".into(), message: e.to_string() }),
                }
            } else {
                let field = |k: &str| body.get(k).and_then(Value::as_str).map(str::to_owned);
                Ok(Outcome::Reject {
                    code: field("error").unwrap_or_else(|| status.as_u16().to_string()),
                    message: field("message").unwrap_or_else(|| status.to_string()),
                })
            }
        }
    }
}

async fn check_reachable(target: &IngestTarget) -> Result<(), ReplayError> {
    if let IngestTarget::Http { base, client } = target {
        let unavailable = |reason: String| ReplayError::GatewayUnavailable { base: base.clone(), reason };
        let resp = client.get(format!("{base}/healthz")).send().await.map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("health check returned {}", resp.status())));
        }
    }
    Ok(())
}

/// Sends every sample. With `speed`, messages are paced so that one second
/// of recorded time takes `1/speed` seconds; otherwise they go as fast as
/// the target accepts them. Order is kept within each stream.
pub async fn replay(
    samples: &[Sample],
    tokens: &Tokens,
    speed: Option<f64>,
    target: &IngestTarget,
) -> Result<ReplayReport, ReplayError> {
    check_reachable(target).await?;
    let Some(t0) = samples.iter().map(Sample::timestamp).min() else {
        return Ok(ReplayReport {
            messages: 0,
            accepted: 0,
            duplicates: 0,
            alerts: 0,
            rejected: Vec::new(),
            streams: 0,
            wall_clock_s: 0.0,
            throughput_per_s: 0.0,
        });
    };

    let mut streams: BTreeMap<(DeviceId, &'static str), Vec<(DateTime<Utc>, DeviceMessage)>> = BTreeMap::new();
    for s in samples {
        let token = tokens.get(s.source_id()).cloned().unwrap_or_default();
        let key = (s.source_id().clone(), s.metric().key());
        streams.entry(key).or_default().push((s.timestamp(), DeviceMessage::from_sample(s, token)));
    }
    let n_streams = streams.len();

    let started = Instant::now();
    let start_at = tokio::time::Instant::now();
    let mut tasks = JoinSet::new();
    for (_, mut msgs) in streams {
        msgs.sort_by_key(|(ts, _)| *ts);
        let target = target.clone();
        tasks.spawn(async move {
            let mut out = Vec::with_capacity(msgs.len());
            for (ts, msg) in msgs {
                if let Some(speed) = speed {
                    let offset = (ts - t0).num_milliseconds().max(0) as f64 / 1000.0 / speed;
                    tokio::time::sleep_until(start_at + Duration::from_secs_f64(offset)).await;
                }
                let outcome = send(&target, &msg).await?;
                out.push((msg, outcome));
            }
            Ok::<_, ReplayError>(out)
        });
    }

    let mut report = ReplayReport {
        messages: samples.len(),
        accepted: 0,
        duplicates: 0,
        alerts: 0,
        rejected: Vec::new(),
        streams: n_streams,
        wall_clock_s: 0.0,
        throughput_per_s: 0.0,
    };
    while let Some(joined) = tasks.join_next().await {
        let results = joined.map_err(|e| ReplayError::Provision(format!("replay task failed: {e}")))??;
        for (msg, outcome) in results {
            match outcome {
                Outcome::Ack(ack) => {
                    report.accepted += 1;
                    report.duplicates += ack.duplicate as usize;
                    report.alerts += ack.alert_id.is_some() as usize;
                }
                Outcome::Reject { code, message } => report.rejected.push(RejectRecord {
                    device_id: msg.device_id,
                    metric: msg.metric,
                    ts: msg.ts,
                    code,
                    message,
                }),
            }
        }
    }
    report.rejected.sort_by(|a, b| (a.ts, &a.device_id, &a.metric).cmp(&(b.ts, &b.device_id, &b.metric)));
    report.wall_clock_s = started.elapsed().as_secs_f64();
    report.throughput_per_s =
        if report.wall_clock_s > 0.0 { report.messages as f64 / report.wall_clock_s } else { f64::INFINITY };
    Ok(report)
}

/// Registers the patient unless already known, enrolls them if needed, and
/// issues one credential per device kind.
pub async fn provision(
    target: &IngestTarget,
    record: &PatientRecord,
    kinds: &[DeviceKind],
) -> Result<Tokens, ReplayError> {
    let mut tokens = Tokens::new();
    match target {
        IngestTarget::InProcess(gw) => {
            let reg = gw.registry();
            let fail = |e: RegistryError| ReplayError::Provision(e.to_string());
            let stored = match reg.patient(&record.patient_id) {
                Some(p) => p,
                None => reg.upsert_patient(record.clone()).map_err(fail)?,
            };
            if stored.enrollment != predihealth::model::Enrollment::Enrolled {
                reg.enroll(&record.patient_id).map_err(fail)?;
            }
            for &kind in kinds {
                let cred = reg.register_device(kind, &record.patient_id).map_err(fail)?;
                tokens.insert(cred.device_id, cred.token);
            }
        }
        IngestTarget::Http { base, client } => {
            check_reachable(target).await?;
            let unavailable = |e: reqwest::Error| ReplayError::GatewayUnavailable { base: base.clone(), reason: e.to_string() };
            let url = format!("{base}/v1/patients/{}", record.patient_id);
            let resp = client.get(&url).send().await.map_err(unavailable)?;
            let stored: PatientRecord = if resp.status() == reqwest::StatusCode::NOT_FOUND {
                let resp = client.post(format!("{base}/v1/patients")).json(record).send().await.map_err(unavailable)?;
                expect_ok(resp).await?
            } else {
                expect_ok(resp).await?
            };
            if stored.enrollment != predihealth::model::Enrollment::Enrolled {
                let resp = client
                    .post(format!("{base}/v1/patients/{}/enroll", record.patient_id))
                    .send()
                    .await
                    .map_err(unavailable)?;
                let _: PatientRecord = expect_ok(resp).await?;
            }
            for &kind in kinds {
                let body = serde_json::json!({ "kind": kind, "patient_id": record.patient_id });
                let resp = client.post(format!("{base}/v1/devices")).json(&body).send().await.map_err(unavailable)?;
                let cred: crate::registry::Credential = expect_ok(resp).await?;
                tokens.insert(cred.device_id, cred.token);
            }
        }
    }
    Ok(tokens)
}

async fn expect_ok<T: serde::de::DeserializeOwned>(resp: reqwest::Response) -> Result<T, ReplayError> {
    let status = resp.status();
    let text = resp.text().await.unwrap_or_default();
    if !status.is_success() {
        return Err(ReplayError::Provision(format!("{status}: {text}")));
    }
    serde_json::from_str(&text).map_err(|e| ReplayError::Provision(format!("unexpected response: {e}")))
}

/// Device kinds needed to carry `samples` for one patient.
pub fn kinds_for(samples: &[Sample], patient_id: &PatientId) -> Vec<DeviceKind> {
    let mut kinds: Vec<DeviceKind> = samples
        .iter()
        .filter(|s| s.patient_id() == patient_id)
        .map(|s| DeviceKind::for_metric(s.metric()))
        .collect();
    kinds.sort_by_key(|k| DeviceKind::ALL.iter().position(|x| x == k));
    kinds.dedup();
    kinds
}
