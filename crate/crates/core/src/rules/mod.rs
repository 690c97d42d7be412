//! Clinical risk rules: threshold flags, weight trend, HRV persistence, AF
//! detection, environmental flags, the multimarker score, and alerts.

mod alert;
mod config;
mod engine;
mod flags;
mod score;

use thiserror::Error;

pub use alert::{AlertBook, AlertError, AlertEvent, AlertSink, AlertState, NotifyTarget, OutboxRecord};
pub use config::{EnvThresholds, ScoringConfig, ThresholdConfig};
pub use engine::{Evaluation, RulesEngine};
pub use flags::{
    coefficient_of_variation, detect_af, eval_env, eval_hrv_persistence, eval_point_thresholds,
    eval_weight_trend, sustained_above, EnvSnapshot, Evidence, FlagKind, RiskFlag, VitalsSnapshot,
    MIN_RR_INTERVALS,
};
pub use score::{multimarker_score, MultimarkerScore, Severity};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RulesError {
    #[error("need at least {need} RR intervals, have {have}")]
    InsufficientData { have: usize, need: usize },
    #[error("invalid rules configuration: {0}")]
    InvalidConfig(String),
}
