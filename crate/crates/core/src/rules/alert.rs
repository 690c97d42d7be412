//! Alert lifecycle (Open → Acknowledged → Resolved) and the notification
//! outbox.
//!
//! When backed by a directory, every alert snapshot is appended to
//! `alerts.jsonl` (last line per id wins on reload) and every notification
//! to `outbox.jsonl`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use super::{FlagKind, MultimarkerScore, Severity};
use crate::model::PatientId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlertState {
    Open,
    Acknowledged,
    Resolved,
}

impl AlertState {
    /// The only forward step from this state, if any.
    pub fn next(self) -> Option<AlertState> {
        match self {
            AlertState::Open => Some(AlertState::Acknowledged),
            AlertState::Acknowledged => Some(AlertState::Resolved),
            AlertState::Resolved => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NotifyTarget {
    Patient,
    HealthcareInfrastructure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub alert_id: Uuid,
    pub patient_id: PatientId,
    pub score: MultimarkerScore,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub state: AlertState,
    pub acked_by: Option<String>,
    pub notified: BTreeSet<NotifyTarget>,
}

/// One durable notification record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutboxRecord {
    pub alert_id: Uuid,
    pub patient_id: PatientId,
    pub target: NotifyTarget,
    pub severity: Severity,
    pub active_flags: BTreeSet<FlagKind>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum AlertError {
    #[error("alert {0} not found")]
    NotFound(Uuid),
    #[error("alert {id} is {state:?}; cannot move to {wanted:?}")]
    BadState { id: Uuid, state: AlertState, wanted: AlertState },
    #[error("alert storage at {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Receives every alert snapshot after creation or transition.
pub trait AlertSink: Send + Sync {
    fn publish(&self, event: &AlertEvent);
}

struct Files {
    alerts_path: PathBuf,
    alerts: File,
    outbox_path: PathBuf,
    outbox: File,
}

struct Inner {
    alerts: BTreeMap<Uuid, AlertEvent>,
    rng: ChaCha8Rng,
    files: Option<Files>,
}

pub struct AlertBook {
    inner: Mutex<Inner>,
    sinks: Mutex<Vec<Arc<dyn AlertSink>>>,
}

fn next_id(rng: &mut ChaCha8Rng) -> Uuid {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    uuid::Builder::from_random_bytes(bytes).into_uuid()
}

fn append_json<T: Serialize>(file: &mut File, path: &Path, value: &T) -> Result<(), AlertError> {
    let mut line = serde_json::to_vec(value).expect("alert records serialize");
    line.push(b'\n');
    file.write_all(&line)
        .and_then(|_| file.sync_data())
        .map_err(|source| AlertError::Storage { path: path.to_path_buf(), source })
}

impl AlertBook {
    /// In-memory book; alert ids derive from `id_seed`.
    pub fn new(id_seed: u64) -> Self {
        AlertBook {
            inner: Mutex::new(Inner { alerts: BTreeMap::new(), rng: ChaCha8Rng::seed_from_u64(id_seed), files: None }),
            sinks: Mutex::new(Vec::new()),
        }
    }

    /// Durable book in `dir`, reloading any previous alerts.
    pub fn open(dir: &Path, id_seed: u64) -> Result<Self, AlertError> {
        let storage = |path: &Path| {
            let path = path.to_path_buf();
            move |source| AlertError::Storage { path, source }
        };
        std::fs::create_dir_all(dir).map_err(storage(dir))?;
        let alerts_path = dir.join("alerts.jsonl");
        let outbox_path = dir.join("outbox.jsonl");

        let mut alerts = BTreeMap::new();
        if alerts_path.exists() {
            let reader = BufReader::new(File::open(&alerts_path).map_err(storage(&alerts_path))?);
            for line in reader.lines() {
                let line = line.map_err(storage(&alerts_path))?;
                // skip a torn tail
                if let Ok(ev) = serde_json::from_str::<AlertEvent>(&line) {
                    alerts.insert(ev.alert_id, ev);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(id_seed);
        for _ in 0..alerts.len() {
            next_id(&mut rng);
        }
        let open = |p: &Path| OpenOptions::new().create(true).append(true).open(p).map_err(storage(p));
        let files = Files {
            alerts: open(&alerts_path)?,
            alerts_path,
            outbox: open(&outbox_path)?,
            outbox_path,
        };
        Ok(AlertBook {
            inner: Mutex::new(Inner { alerts, rng, files: Some(files) }),
            sinks: Mutex::new(Vec::new()),
        })
    }

    pub fn add_sink(&self, sink: Arc<dyn AlertSink>) {
        self.sinks.lock().push(sink);
    }

    fn publish(&self, event: &AlertEvent) {
        for sink in self.sinks.lock().iter() {
            sink.publish(event);
        }
    }

    /// Opens an alert for a Yellow or Red score unless an unresolved alert with
    /// the same flag set already exists for the patient.
    pub fn raise_alert(&self, score: &MultimarkerScore) -> Result<Option<AlertEvent>, AlertError> {
        if score.severity < Severity::Yellow {
            return Ok(None);
        }
        let event = {
            let mut inner = self.inner.lock();
            let duplicate = inner.alerts.values().any(|a| {
                a.patient_id == score.patient_id
                    && a.state != AlertState::Resolved
                    && a.score.active_flags == score.active_flags
            });
            if duplicate {
                return Ok(None);
            }
            let alert_id = next_id(&mut inner.rng);
            let event = AlertEvent {
                alert_id,
                patient_id: score.patient_id.clone(),
                score: score.clone(),
                created_at: score.at,
                updated_at: score.at,
                state: AlertState::Open,
                acked_by: None,
                notified: [NotifyTarget::Patient, NotifyTarget::HealthcareInfrastructure].into(),
            };
            if let Some(files) = inner.files.as_mut() {
                append_json(&mut files.alerts, &files.alerts_path, &event)?;
                for target in &event.notified {
                    let record = OutboxRecord {
                        alert_id,
                        patient_id: event.patient_id.clone(),
                        target: *target,
                        severity: score.severity,
                        active_flags: score.active_flags.clone(),
                        created_at: event.created_at,
                    };
                    append_json(&mut files.outbox, &files.outbox_path, &record)?;
                }
            }
            inner.alerts.insert(alert_id, event.clone());
            event
        };
        self.publish(&event);
        Ok(Some(event))
    }

    fn transition(
        &self,
        id: Uuid,
        wanted: AlertState,
        by: Option<&str>,
        now: DateTime<Utc>,
    ) -> Result<AlertEvent, AlertError> {
        let event = {
            let mut inner = self.inner.lock();
            let current = inner.alerts.get(&id).ok_or(AlertError::NotFound(id))?;
            if current.state.next() != Some(wanted) {
                return Err(AlertError::BadState { id, state: current.state, wanted });
            }
            let mut event = current.clone();
            event.state = wanted;
            event.updated_at = now.max(event.created_at);
            if wanted == AlertState::Acknowledged {
                event.acked_by = by.map(str::to_owned);
            }
            if let Some(files) = inner.files.as_mut() {
                append_json(&mut files.alerts, &files.alerts_path, &event)?;
            }
            inner.alerts.insert(id, event.clone());
            event
        };
        self.publish(&event);
        Ok(event)
    }

    pub fn ack_alert(&self, id: Uuid, clinician_id: &str) -> Result<AlertEvent, AlertError> {
        self.transition(id, AlertState::Acknowledged, Some(clinician_id), Utc::now())
    }

    pub fn resolve_alert(&self, id: Uuid) -> Result<AlertEvent, AlertError> {
        self.transition(id, AlertState::Resolved, None, Utc::now())
    }

    pub fn get(&self, id: Uuid) -> Option<AlertEvent> {
        self.inner.lock().alerts.get(&id).cloned()
    }

    /// Alerts ordered by creation time, then id.
    pub fn list(&self, state: Option<AlertState>) -> Vec<AlertEvent> {
        let mut out: Vec<_> = self
            .inner
            .lock()
            .alerts
            .values()
            .filter(|a| state.is_none_or(|s| a.state == s))
            .cloned()
            .collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.alert_id.cmp(&b.alert_id)));
        out
    }

    pub fn len(&self) -> usize {
        self.inner.lock().alerts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
