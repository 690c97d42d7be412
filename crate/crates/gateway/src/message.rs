//! Wire format shared by the HTTP and MQTT paths: one JSON object per message.

use chrono::{DateTime, Utc};
use predihealth::model::{DeviceId, PatientId, Sample, SampleValue};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const TOPIC_ROOT: &str = "predihealth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceMessage {
    pub device_id: DeviceId,
    pub patient_id: PatientId,
    pub metric: String,
    pub value: SampleValue,
    pub unit: String,
    pub ts: DateTime<Utc>,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("bad timestamp `{0}`; expected RFC 3339")]
    BadTimestamp(String),
    #[error("field `{field}`: {reason}")]
    BadField { field: &'static str, reason: String },
}

const FIELDS: [&str; 7] = ["device_id", "patient_id", "metric", "value", "unit", "ts", "token"];

/// Parses one message. Never panics, whatever the input.
pub fn parse_message(raw: &[u8]) -> Result<DeviceMessage, ParseError> {
    let value: Value = serde_json::from_slice(raw).map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    parse_value(&value)
}

pub fn parse_value(doc: &Value) -> Result<DeviceMessage, ParseError> {
    let obj = doc.as_object().ok_or_else(|| ParseError::MalformedJson("expected a JSON object".into()))?;
    for field in FIELDS {
        if obj.get(field).is_none_or(Value::is_null) {
            return Err(ParseError::MissingField(field));
        }
    }
    let text = |field: &'static str| -> Result<String, ParseError> {
        obj[field]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| ParseError::BadField { field, reason: "expected a string".into() })
    };
    let ts_raw = text("ts")?;
    let ts = DateTime::parse_from_rfc3339(&ts_raw)
        .map_err(|_| ParseError::BadTimestamp(ts_raw.clone()))?
        .with_timezone(&Utc);
    Ok(DeviceMessage {
        device_id: DeviceId::new(text("device_id")?),
        patient_id: PatientId::new(text("patient_id")?),
        metric: text("metric")?,
        value: parse_sample_value(&obj["value"])?,
        unit: text("unit")?,
        ts,
        token: text("token")?,
    })
}

fn parse_sample_value(v: &Value) -> Result<SampleValue, ParseError> {
    let bad = |reason: &str| ParseError::BadField { field: "value", reason: reason.to_owned() };
    match v {
        Value::Bool(b) => Ok(SampleValue::Flag(*b)),
        Value::Number(n) => n.as_f64().map(SampleValue::Number).ok_or_else(|| bad("number out of range")),
        Value::Array(items) => items
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| bad("list must hold only numbers")))
            .collect::<Result<Vec<f64>, _>>()
            .map(SampleValue::Series),
        _ => Err(bad("expected a number, a list of numbers, or a boolean")),
    }
}

impl DeviceMessage {
    /// Message a device would send for `sample`.
    pub fn from_sample(sample: &Sample, token: impl Into<String>) -> Self {
        let metric = sample.metric();
        DeviceMessage {
            device_id: sample.source_id().clone(),
            patient_id: sample.patient_id().clone(),
            metric: metric.key().to_owned(),
            value: sample.value().clone(),
            unit: metric.unit().to_owned(),
            ts: sample.timestamp(),
            token: token.into(),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("messages serialize")
    }

    pub fn topic(&self) -> String {
        topic_for(&self.patient_id, &self.metric)
    }
}

pub fn topic_for(patient_id: &PatientId, metric: &str) -> String {
    format!("{TOPIC_ROOT}/{patient_id}/{metric}")
}

/// Splits `predihealth/<patient_id>/<metric>` into its two variable parts.
pub fn parse_topic(topic: &str) -> Option<(&str, &str)> {
    let mut parts = topic.split('/');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(TOPIC_ROOT), Some(p), Some(m), None) if !p.is_empty() && !m.is_empty() => Some((p, m)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn full() -> Value {
        json!({
            "device_id": "P1-watch",
            "patient_id": "P1",
            "metric": "spo2",
            "value": 89.0,
            "unit": "%",
            "ts": "2025-01-01T08:00:00Z",
            "token": "abc"
        })
    }

    #[test]
    fn valid_line_parses() {
        let m = parse_message(full().to_string().as_bytes()).unwrap();
        assert_eq!(m.metric, "spo2");
        assert_eq!(m.value, SampleValue::Number(89.0));
        assert_eq!(m.ts.to_rfc3339(), "2025-01-01T08:00:00+00:00");
        assert_eq!(parse_message(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn missing_ts_is_named() {
        let mut v = full();
        v.as_object_mut().unwrap().remove("ts");
        assert_eq!(parse_message(v.to_string().as_bytes()), Err(ParseError::MissingField("ts")));
    }

    #[test]
    fn truncated_bytes_are_malformed() {
        let text = full().to_string();
        let cut = &text.as_bytes()[..text.len() / 2];
        assert!(matches!(parse_message(cut), Err(ParseError::MalformedJson(_))));
        assert!(matches!(parse_message(b"[1,2]"), Err(ParseError::MalformedJson(_))));
    }

    #[test]
    fn offsets_normalize_and_garbage_times_fail() {
        let mut v = full();
        v["ts"] = json!("2025-01-01T09:00:00+01:00");
        assert_eq!(parse_value(&v).unwrap().ts, parse_value(&full()).unwrap().ts);
        v["ts"] = json!("yesterday");
        assert_eq!(parse_value(&v), Err(ParseError::BadTimestamp("yesterday".into())));
    }

    #[test]
    fn value_shapes() {
        let mut v = full();
        v["value"] = json!([800, 810.5]);
        assert_eq!(parse_value(&v).unwrap().value, SampleValue::Series(vec![800.0, 810.5]));
        v["value"] = json!(true);
        assert_eq!(parse_value(&v).unwrap().value, SampleValue::Flag(true));
        v["value"] = json!("89");
        assert!(matches!(parse_value(&v), Err(ParseError::BadField { field: "value", .. })));
        v["value"] = json!([1, "x"]);
        assert!(matches!(parse_value(&v), Err(ParseError::BadField { field: "value", .. })));
    }

    #[test]
    fn arbitrary_bytes_never_panic() {
        let mut state = 0x1234_5678u32;
        for len in 0..300 {
            let bytes: Vec<u8> = (0..len)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 17;
                    state ^= state << 5;
                    (state >> 24) as u8
                })
                .collect();
            let _ = parse_message(&bytes);
        }
        let text = full().to_string();
        for cut in 0..text.len() {
            let _ = parse_message(&text.as_bytes()[..cut]);
        }
    }

    #[test]
    fn topics() {
        assert_eq!(topic_for(&PatientId::new("P1"), "spo2"), "predihealth/P1/spo2");
        assert_eq!(parse_topic("predihealth/P1/spo2"), Some(("P1", "spo2")));
        assert_eq!(parse_topic("predihealth/P1"), None);
        assert_eq!(parse_topic("predihealth/P1/spo2/x"), None);
        assert_eq!(parse_topic("other/P1/spo2"), None);
        assert_eq!(parse_topic("predihealth//spo2"), None);
    }
}
