//! Device ingestion gateway and clinician-facing service.
//!
//! Devices publish JSON telemetry over MQTT or HTTP; each message is
//! authenticated against the device registry, validated, persisted, and
//! scored by the rules engine. Alerts fan out over a WebSocket and an
//! optional webhook.

pub mod api;
pub mod ingest;
pub mod message;
pub mod mqtt;
pub mod registry;
pub mod replay;
pub mod service;
pub mod ws;

pub use api::{enrollment_queue, rank_candidates, router, AlertHub, AppState, EnrollmentQueue, QueueItem};
pub use ingest::{Ack, BatchReport, Gateway, IngestError, IngestStats};
pub use message::{parse_message, DeviceMessage, ParseError};
pub use registry::{Credential, DeviceBinding, DeviceKind, Registry, RegistryError};
pub use replay::{replay, IngestTarget, ReplayError, ReplayReport, Tokens};
pub use service::{start, ServeError, Service, ServiceConfig};
