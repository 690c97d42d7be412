//! HL7 FHIR R4 export: one `Observation` per stored sample, grouped into
//! `collection` Bundles per patient window, plus structural validation.
//!
//! Vitals are coded in LOINC. Environmental readings have no LOINC codes and
//! use [`ENV_SYSTEM`]. RR-interval series, the device AF flag and motion are
//! not exported.

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{EnvMetric, Metric, PatientId, Sample, SampleValue, VitalMetric};
use crate::store::{SeriesKey, SeriesStore, StoreError};

pub const LOINC_SYSTEM: &str = "http://loinc.org";
pub const UCUM_SYSTEM: &str = "http://unitsofmeasure.org";
pub const ENV_SYSTEM: &str = "urn:predihealth:codesystem:environment";

#[derive(Debug, Error)]
pub enum FhirError {
    #[error("metric `{0}` has no FHIR code mapping")]
    UnmappedMetric(Metric),
    #[error("metric `{0}` value is not a single number")]
    NonNumericValue(Metric),
    #[error("unknown patient `{0}`")]
    UnknownPatient(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// One row of the metric-to-code table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeMapping {
    pub metric: Metric,
    pub system: &'static str,
    pub code: &'static str,
    pub display: &'static str,
    pub ucum: &'static str,
}

const fn vital(m: VitalMetric, code: &'static str, display: &'static str, ucum: &'static str) -> CodeMapping {
    CodeMapping { metric: Metric::Vital(m), system: LOINC_SYSTEM, code, display, ucum }
}

const fn env(m: EnvMetric, code: &'static str, display: &'static str, ucum: &'static str) -> CodeMapping {
    CodeMapping { metric: Metric::Env(m), system: ENV_SYSTEM, code, display, ucum }
}

pub const MAPPINGS: [CodeMapping; 18] = [
    vital(VitalMetric::HeartRate, "8867-4", "Heart rate", "/min"),
    vital(VitalMetric::SpO2, "59408-5", "Oxygen saturation in Arterial blood by Pulse oximetry", "%"),
    vital(VitalMetric::Weight, "29463-7", "Body weight", "kg"),
    vital(VitalMetric::SystolicBp, "8480-6", "Systolic blood pressure", "mm[Hg]"),
    vital(VitalMetric::DiastolicBp, "8462-4", "Diastolic blood pressure", "mm[Hg]"),
    vital(VitalMetric::RespRate, "9279-1", "Respiratory rate", "/min"),
    vital(VitalMetric::BodyTemp, "8310-5", "Body temperature", "Cel"),
    vital(VitalMetric::Sdnn, "80404-7", "R-R interval.standard deviation (Heart rate variability)", "ms"),
    vital(VitalMetric::Activity, "55423-8", "Number of steps in unspecified time Pedometer", "{steps}"),
    vital(VitalMetric::Sleep, "93832-4", "Sleep duration", "min"),
    env(EnvMetric::Pm1, "pm1", "Particulate matter PM1.0 mass concentration", "ug/m3"),
    env(EnvMetric::Pm2_5, "pm2_5", "Particulate matter PM2.5 mass concentration", "ug/m3"),
    env(EnvMetric::Pm4, "pm4", "Particulate matter PM4.0 mass concentration", "ug/m3"),
    env(EnvMetric::Pm10, "pm10", "Particulate matter PM10 mass concentration", "ug/m3"),
    env(EnvMetric::Co2, "co2", "Indoor carbon dioxide concentration", "[ppm]"),
    env(EnvMetric::AirTemp, "air_temp", "Indoor air temperature", "Cel"),
    env(EnvMetric::Humidity, "humidity", "Indoor relative humidity", "%"),
    env(EnvMetric::Noise, "noise", "Indoor sound pressure level", "dB"),
];

pub fn mapping_for(metric: Metric) -> Option<&'static CodeMapping> {
    MAPPINGS.iter().find(|m| m.metric == metric)
}

fn mapping_for_code(system: &str, code: &str) -> Option<&'static CodeMapping> {
    MAPPINGS.iter().find(|m| m.system == system && m.code == code)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coding {
    pub system: String,
    pub code: String,
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeableConcept {
    pub coding: Vec<Coding>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
    pub system: String,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Observation {
    pub resource_type: String,
    pub id: String,
    pub status: String,
    pub code: CodeableConcept,
    pub subject: Reference,
    pub effective_date_time: String,
    pub value_quantity: Quantity,
    pub device: Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BundleEntry {
    pub full_url: String,
    pub resource: Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Bundle {
    pub resource_type: String,
    #[serde(rename = "type")]
    pub bundle_type: String,
    pub total: usize,
    pub entry: Vec<BundleEntry>,
}

/// RFC 3339 in UTC with `Z`, sub-second digits only when present.
pub fn format_instant(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn to_observation(sample: &Sample) -> Result<Observation, FhirError> {
    let metric = sample.metric();
    let map = mapping_for(metric).ok_or(FhirError::UnmappedMetric(metric))?;
    let value = match sample.value() {
        SampleValue::Number(v) => *v,
        _ => return Err(FhirError::NonNumericValue(metric)),
    };
    let pid = sample.patient_id().as_str();
    Ok(Observation {
        resource_type: "Observation".into(),
        id: format!("{pid}-{}-{}", metric.key(), sample.seq()),
        status: "final".into(),
        code: CodeableConcept {
            coding: vec![Coding { system: map.system.into(), code: map.code.into(), display: map.display.into() }],
            text: metric.key().into(),
        },
        subject: Reference { reference: format!("Patient/{pid}") },
        effective_date_time: format_instant(sample.timestamp()),
        value_quantity: Quantity {
            value,
            unit: metric.unit().into(),
            system: UCUM_SYSTEM.into(),
            code: map.ucum.into(),
        },
        device: Reference { reference: format!("Device/{}", sample.source_id()) },
    })
}

/// Bundles the mappable samples, ordered by time, then metric key, then seq.
/// Unmappable samples are skipped.
pub fn bundle_from_samples(samples: &[Sample]) -> Bundle {
    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| {
        a.timestamp()
            .cmp(&b.timestamp())
            .then_with(|| a.metric().key().cmp(b.metric().key()))
            .then_with(|| a.seq().cmp(&b.seq()))
    });
    let entry: Vec<BundleEntry> = sorted
        .into_iter()
        .filter_map(|s| to_observation(s).ok())
        .map(|o| BundleEntry { full_url: format!("urn:predihealth:observation:{}", o.id), resource: o })
        .collect();
    Bundle { resource_type: "Bundle".into(), bundle_type: "collection".into(), total: entry.len(), entry }
}

/// Every mappable sample of `patient_id` with `t0 <= timestamp <= t1`.
pub fn export_bundle(
    store: &SeriesStore,
    patient_id: &PatientId,
    t0: DateTime<Utc>,
    t1: DateTime<Utc>,
) -> Result<Bundle, FhirError> {
    if t0 > t1 {
        return Err(StoreError::InvalidWindow { t0, t1 }.into());
    }
    if !store.has_patient(patient_id) {
        return Err(FhirError::UnknownPatient(patient_id.to_string()));
    }
    let mut samples = Vec::new();
    for metric in store.patient_metrics(patient_id) {
        if mapping_for(metric).is_none() {
            continue;
        }
        samples.extend(store.samples_in_window(&SeriesKey::new(patient_id.clone(), metric), t0, t1)?);
    }
    Ok(bundle_from_samples(&samples))
}

fn is_uri(s: &str) -> bool {
    let scheme_ok = |rest: &str| !rest.is_empty() && !rest.contains(char::is_whitespace);
    if let Some(rest) = s.strip_prefix("http://").or_else(|| s.strip_prefix("https://")) {
        return scheme_ok(rest) && !rest.starts_with('/');
    }
    s.strip_prefix("urn:").is_some_and(|rest| scheme_ok(rest) && rest.contains(':'))
}

fn str_at<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str)
}

fn validate_observation(obs: &Value, errors: &mut Vec<String>, at: &str) {
    let mut err = |m: String| errors.push(if at.is_empty() { m } else { format!("{at}: {m}") });
    match str_at(obs, "status") {
        Some("registered" | "preliminary" | "final" | "amended" | "corrected" | "cancelled" | "entered-in-error"
        | "unknown") => {}
        Some(other) => err(format!("invalid status `{other}`")),
        None => err("missing status".into()),
    }

    let mut mapped = None;
    match obs.get("code").and_then(|c| c.get("coding")).and_then(Value::as_array) {
        None => err("missing code".into()),
        Some(codings) if codings.is_empty() => err("empty code.coding".into()),
        Some(codings) => {
            for c in codings {
                let system = str_at(c, "system");
                let code = str_at(c, "code");
                match system {
                    None => err("coding missing system".into()),
                    Some(s) if !is_uri(s) => err(format!("coding system `{s}` is not a URI")),
                    _ => {}
                }
                match code {
                    Some(code) if !code.trim().is_empty() => {
                        if let Some(s) = system {
                            mapped = mapped.or(mapping_for_code(s, code));
                        }
                    }
                    _ => err("coding missing code".into()),
                }
            }
        }
    }

    match obs.get("subject").and_then(|s| str_at(s, "reference")) {
        None => err("missing subject".into()),
        Some(r) if !r.strip_prefix("Patient/").is_some_and(|id| !id.is_empty()) => {
            err(format!("subject `{r}` is not a Patient reference"))
        }
        _ => {}
    }

    match str_at(obs, "effectiveDateTime") {
        None => err("missing effectiveDateTime".into()),
        Some(t) if DateTime::parse_from_rfc3339(t).is_err() => err(format!("effectiveDateTime `{t}` is not RFC 3339")),
        _ => {}
    }

    match obs.get("valueQuantity") {
        None => err("missing valueQuantity".into()),
        Some(q) => {
            if !q.get("value").is_some_and(Value::is_number) {
                err("valueQuantity.value is not a number".into());
            }
            if str_at(q, "system") != Some(UCUM_SYSTEM) {
                err("valueQuantity.system is not UCUM".into());
            }
            let unit = str_at(q, "unit");
            let code = str_at(q, "code");
            if unit.is_none() {
                err("valueQuantity.unit missing".into());
            }
            if code.is_none() {
                err("valueQuantity.code missing".into());
            }
            if let Some(m) = mapped {
                if let Some(u) = unit.filter(|u| *u != m.metric.unit()) {
                    err(format!("unit `{u}` does not match `{}` for code {}", m.metric.unit(), m.code));
                }
                if let Some(c) = code.filter(|c| *c != m.ucum) {
                    err(format!("UCUM code `{c}` does not match `{}` for code {}", m.ucum, m.code));
                }
            }
        }
    }
}

/// Structural check of an Observation or Bundle. Returns every problem found.
pub fn validate_resource(doc: &Value) -> Result<(), Vec<String>> {
    let mut errors = Vec::new();
    match str_at(doc, "resourceType") {
        Some("Observation") => validate_observation(doc, &mut errors, ""),
        Some("Bundle") => {
            if str_at(doc, "type") != Some("collection") {
                errors.push("bundle type is not `collection`".into());
            }
            let entries = doc.get("entry").and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[]);
            let mut prev: Option<DateTime<chrono::FixedOffset>> = None;
            let mut subject: Option<&str> = None;
            for (i, e) in entries.iter().enumerate() {
                let at = format!("entry[{i}]");
                let Some(r) = e.get("resource") else {
                    errors.push(format!("{at}: missing resource"));
                    continue;
                };
                if str_at(r, "resourceType") != Some("Observation") {
                    errors.push(format!("{at}: not an Observation"));
                    continue;
                }
                validate_observation(r, &mut errors, &at);
                if let Some(t) = str_at(r, "effectiveDateTime").and_then(|t| DateTime::parse_from_rfc3339(t).ok()) {
                    if prev.is_some_and(|p| t < p) {
                        errors.push(format!("{at}: entries not ordered by effectiveDateTime"));
                    }
                    prev = Some(t);
                }
                let s = r.get("subject").and_then(|s| str_at(s, "reference"));
                match (subject, s) {
                    (None, Some(s)) => subject = Some(s),
                    (Some(a), Some(b)) if a != b => errors.push(format!("{at}: subject differs from first entry")),
                    _ => {}
                }
            }
            if let Some(total) = doc.get("total").and_then(Value::as_u64) {
                if total as usize != entries.len() {
                    errors.push("total does not match entry count".into());
                }
            }
        }
        Some(other) => errors.push(format!("unsupported resourceType `{other}`")),
        None => errors.push("missing resourceType".into()),
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}
