use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{FlagKind, RiskFlag, ScoringConfig};
use crate::model::{LocationMode, PatientId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimarkerScore {
    pub patient_id: PatientId,
    pub at: DateTime<Utc>,
    /// Contributing flag kinds only; environmental kinds are absent in Away mode.
    pub active_flags: BTreeSet<FlagKind>,
    pub score: f64,
    pub severity: Severity,
    pub location_mode_used: LocationMode,
    /// Contributing flags with their evidence.
    #[serde(default)]
    pub flags: Vec<RiskFlag>,
}

/// Additive score over contributing flags.
///
/// Environmental flags contribute only when the patient is at home. Severity
/// is Green at zero, Red at or above the cutoff or when a critical flag is
/// present, Yellow otherwise.
pub fn multimarker_score(
    patient_id: &PatientId,
    at: DateTime<Utc>,
    flags: &[RiskFlag],
    mode: LocationMode,
    scoring: &ScoringConfig,
) -> MultimarkerScore {
    let mut contributing: Vec<RiskFlag> = flags
        .iter()
        .filter(|f| mode == LocationMode::Home || !f.kind.is_env())
        .cloned()
        .collect();
    contributing.sort_by_key(|f| f.kind);
    contributing.dedup_by_key(|f| f.kind);

    let active_flags: BTreeSet<FlagKind> = contributing.iter().map(|f| f.kind).collect();
    let score: f64 = active_flags.iter().map(|k| scoring.weight(*k)).sum();
    let critical = active_flags.iter().any(|k| scoring.is_critical(*k));
    let severity = if critical || score >= scoring.red_cutoff {
        Severity::Red
    } else if score > 0.0 {
        Severity::Yellow
    } else {
        Severity::Green
    };
    MultimarkerScore {
        patient_id: patient_id.clone(),
        at,
        active_flags,
        score,
        severity,
        location_mode_used: mode,
        flags: contributing,
    }
}
