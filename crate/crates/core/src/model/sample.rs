use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::metric::{EnvMetric, Metric, ValueKind, VitalMetric};
use super::{DeviceId, PatientId, ValidationError};

/// Value carried by a telemetry point. Encoded in JSON as a bare number,
/// array of numbers, or boolean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleValue {
    Flag(bool),
    Number(f64),
    Series(Vec<f64>),
}

impl SampleValue {
    pub fn kind(&self) -> ValueKind {
        match self {
            SampleValue::Flag(_) => ValueKind::Flag,
            SampleValue::Number(_) => ValueKind::Number,
            SampleValue::Series(_) => ValueKind::Series,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            SampleValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_flag(&self) -> Option<bool> {
        match self {
            SampleValue::Flag(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_series(&self) -> Option<&[f64]> {
        match self {
            SampleValue::Series(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalSample {
    pub patient_id: PatientId,
    pub device_id: DeviceId,
    pub metric: VitalMetric,
    pub value: SampleValue,
    pub timestamp: DateTime<Utc>,
    /// Assigned by the series store; 0 until stored.
    #[serde(default)]
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSample {
    pub patient_id: PatientId,
    pub sensor_id: DeviceId,
    pub metric: EnvMetric,
    pub value: SampleValue,
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub seq: u64,
}

/// A telemetry point from either source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sample {
    Vital(VitalSample),
    Env(EnvSample),
}

impl Sample {
    pub fn patient_id(&self) -> &PatientId {
        match self {
            Sample::Vital(s) => &s.patient_id,
            Sample::Env(s) => &s.patient_id,
        }
    }

    pub fn source_id(&self) -> &DeviceId {
        match self {
            Sample::Vital(s) => &s.device_id,
            Sample::Env(s) => &s.sensor_id,
        }
    }

    pub fn metric(&self) -> Metric {
        match self {
            Sample::Vital(s) => Metric::Vital(s.metric),
            Sample::Env(s) => Metric::Env(s.metric),
        }
    }

    pub fn value(&self) -> &SampleValue {
        match self {
            Sample::Vital(s) => &s.value,
            Sample::Env(s) => &s.value,
        }
    }

    pub fn timestamp(&self) -> DateTime<Utc> {
        match self {
            Sample::Vital(s) => s.timestamp,
            Sample::Env(s) => s.timestamp,
        }
    }

    pub fn seq(&self) -> u64 {
        match self {
            Sample::Vital(s) => s.seq,
            Sample::Env(s) => s.seq,
        }
    }

    pub fn set_seq(&mut self, seq: u64) {
        match self {
            Sample::Vital(s) => s.seq = seq,
            Sample::Env(s) => s.seq = seq,
        }
    }
}

impl From<VitalSample> for Sample {
    fn from(s: VitalSample) -> Self {
        Sample::Vital(s)
    }
}

impl From<EnvSample> for Sample {
    fn from(s: EnvSample) -> Self {
        Sample::Env(s)
    }
}

/// A sample that passed `validate_vital` / `validate_env`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValidatedSample(Sample);

impl ValidatedSample {
    /// Skips validation; for tests that need a malformed sample past the gate.
    #[cfg(test)]
    pub(crate) fn from_trusted(sample: Sample) -> Self {
        ValidatedSample(sample)
    }

    pub fn sample(&self) -> &Sample {
        &self.0
    }

    pub fn into_inner(self) -> Sample {
        self.0
    }

    pub(crate) fn set_seq(&mut self, seq: u64) {
        self.0.set_seq(seq);
    }
}

impl std::ops::Deref for ValidatedSample {
    type Target = Sample;

    fn deref(&self) -> &Sample {
        &self.0
    }
}

/// Position of the last accepted sample on a (patient, metric) stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamCursor {
    pub timestamp: DateTime<Utc>,
    pub seq: u64,
}

fn check_kind(metric: Metric, value: &SampleValue) -> Result<(), ValidationError> {
    if value.kind() != metric.value_kind() {
        return Err(ValidationError::WrongValueType { metric });
    }
    Ok(())
}

fn check_range(metric: Metric, value: &SampleValue, bounds: Option<(f64, f64)>) -> Result<(), ValidationError> {
    let Some((lo, hi)) = bounds else {
        return Ok(());
    };
    let in_range = |v: f64| v.is_finite() && v >= lo && v <= hi;
    match value {
        SampleValue::Number(v) if !in_range(*v) => Err(ValidationError::OutOfRange {
            metric,
            value: *v,
            min: lo,
            max: hi,
        }),
        SampleValue::Series(vs) => {
            if vs.is_empty() {
                return Err(ValidationError::EmptySeries { metric });
            }
            match vs.iter().find(|v| !in_range(**v)) {
                Some(v) => Err(ValidationError::OutOfRange {
                    metric,
                    value: *v,
                    min: lo,
                    max: hi,
                }),
                None => Ok(()),
            }
        }
        _ => Ok(()),
    }
}

fn check_order(
    metric: Metric,
    timestamp: DateTime<Utc>,
    seq: u64,
    prev: Option<StreamCursor>,
) -> Result<(), ValidationError> {
    if let Some(prev) = prev {
        if timestamp < prev.timestamp {
            return Err(ValidationError::NonMonotoneTimestamp {
                metric,
                last: prev.timestamp,
                got: timestamp,
            });
        }
        // seq 0 means "not yet assigned"
        if seq != 0 && seq <= prev.seq {
            return Err(ValidationError::NonMonotoneSeq { metric, last: prev.seq, got: seq });
        }
    }
    Ok(())
}

/// Screens a medical-device sample for device faults.
///
/// `prev` is the cursor of the stream the sample would be appended to; the
/// verdict depends only on the arguments.
pub fn validate_vital(
    sample: VitalSample,
    prev: Option<StreamCursor>,
) -> Result<ValidatedSample, ValidationError> {
    let metric = Metric::Vital(sample.metric);
    check_kind(metric, &sample.value)?;
    check_range(metric, &sample.value, sample.metric.plausibility())?;
    check_order(metric, sample.timestamp, sample.seq, prev)?;
    Ok(ValidatedSample(Sample::Vital(sample)))
}

/// Screens an environmental sample against the sensor's declared range.
pub fn validate_env(
    sample: EnvSample,
    prev: Option<StreamCursor>,
) -> Result<ValidatedSample, ValidationError> {
    let metric = Metric::Env(sample.metric);
    check_kind(metric, &sample.value)?;
    check_range(metric, &sample.value, sample.metric.sensor_range())?;
    check_order(metric, sample.timestamp, sample.seq, prev)?;
    Ok(ValidatedSample(Sample::Env(sample)))
}

pub fn validate_sample(
    sample: Sample,
    prev: Option<StreamCursor>,
) -> Result<ValidatedSample, ValidationError> {
    match sample {
        Sample::Vital(s) => validate_vital(s, prev),
        Sample::Env(s) => validate_env(s, prev),
    }
}
