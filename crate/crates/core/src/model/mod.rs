//! Domain types shared by every subsystem: identifiers, metrics and their
//! units, telemetry samples, patient records, and the device-fault screen.

mod metric;
mod patient;
mod sample;

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metric::{EnvMetric, Metric, ValueKind, VitalMetric};
pub use patient::{ClinicalFeatures, EchoFeatures, Enrollment, LocationMode, Nyha, PatientRecord, Sex};
pub use sample::{
    validate_env, validate_sample, validate_vital, EnvSample, Sample, SampleValue, StreamCursor,
    ValidatedSample, VitalSample,
};

#[cfg(test)]
pub(crate) use patient::fixtures;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }
    };
}

string_id!(PatientId);
string_id!(DeviceId);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("{metric} value {value} outside [{min}, {max}]")]
    OutOfRange { metric: Metric, value: f64, min: f64, max: f64 },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("{metric}: timestamp {got} precedes last accepted {last}")]
    NonMonotoneTimestamp { metric: Metric, last: DateTime<Utc>, got: DateTime<Utc> },
    #[error("{metric}: seq {got} not after {last}")]
    NonMonotoneSeq { metric: Metric, last: u64, got: u64 },
    #[error("{metric}: value has the wrong shape")]
    WrongValueType { metric: Metric },
    #[error("{metric}: empty series")]
    EmptySeries { metric: Metric },
    #[error("field {field} = {value} violates its declared range")]
    InvalidField { field: &'static str, value: f64 },
    #[error("enrollment cannot go from {from:?} to {to:?}")]
    EnrollmentTransition { from: Enrollment, to: Enrollment },
}

/// Binary confusion counts; the positive class is "at HF risk".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn from_labels(predicted: &[bool], truth: &[bool]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}
