//! Metric enumerations and their fixed units.
//!
//! Every metric carries exactly one canonical unit. Devices must send that
//! unit verbatim; there is no runtime conversion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ValidationError;

/// Measurements reported by medical devices (watch, scale, cuff).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VitalMetric {
    #[serde(rename = "heart_rate")]
    HeartRate,
    #[serde(rename = "spo2")]
    SpO2,
    #[serde(rename = "weight")]
    Weight,
    #[serde(rename = "systolic_bp")]
    SystolicBp,
    #[serde(rename = "diastolic_bp")]
    DiastolicBp,
    #[serde(rename = "resp_rate")]
    RespRate,
    #[serde(rename = "body_temp")]
    BodyTemp,
    #[serde(rename = "sdnn")]
    Sdnn,
    #[serde(rename = "rr_intervals")]
    RrIntervals,
    #[serde(rename = "af_device_flag")]
    AfDeviceFlag,
    #[serde(rename = "activity")]
    Activity,
    #[serde(rename = "sleep")]
    Sleep,
}

/// Measurements reported by home environmental sensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnvMetric {
    #[serde(rename = "pm1")]
    Pm1,
    #[serde(rename = "pm2_5")]
    Pm2_5,
    #[serde(rename = "pm4")]
    Pm4,
    #[serde(rename = "pm10")]
    Pm10,
    #[serde(rename = "co2")]
    Co2,
    #[serde(rename = "air_temp")]
    AirTemp,
    #[serde(rename = "humidity")]
    Humidity,
    #[serde(rename = "noise")]
    Noise,
    #[serde(rename = "motion")]
    Motion,
}

/// Shape of the value a metric carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Number,
    Series,
    Flag,
}

impl VitalMetric {
    pub const ALL: [VitalMetric; 12] = [
        VitalMetric::HeartRate,
        VitalMetric::SpO2,
        VitalMetric::Weight,
        VitalMetric::SystolicBp,
        VitalMetric::DiastolicBp,
        VitalMetric::RespRate,
        VitalMetric::BodyTemp,
        VitalMetric::Sdnn,
        VitalMetric::RrIntervals,
        VitalMetric::AfDeviceFlag,
        VitalMetric::Activity,
        VitalMetric::Sleep,
    ];

    pub fn key(self) -> &'static str {
        match self {
            VitalMetric::HeartRate => "heart_rate",
            VitalMetric::SpO2 => "spo2",
            VitalMetric::Weight => "weight",
            VitalMetric::SystolicBp => "systolic_bp",
            VitalMetric::DiastolicBp => "diastolic_bp",
            VitalMetric::RespRate => "resp_rate",
            VitalMetric::BodyTemp => "body_temp",
            VitalMetric::Sdnn => "sdnn",
            VitalMetric::RrIntervals => "rr_intervals",
            VitalMetric::AfDeviceFlag => "af_device_flag",
            VitalMetric::Activity => "activity",
            VitalMetric::Sleep => "sleep",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            VitalMetric::HeartRate => "bpm",
            VitalMetric::SpO2 => "%",
            VitalMetric::Weight => "kg",
            VitalMetric::SystolicBp | VitalMetric::DiastolicBp => "mmHg",
            VitalMetric::RespRate => "breaths/min",
            VitalMetric::BodyTemp => "degC",
            VitalMetric::Sdnn | VitalMetric::RrIntervals => "ms",
            VitalMetric::AfDeviceFlag => "bool",
            VitalMetric::Activity => "steps",
            VitalMetric::Sleep => "min",
        }
    }

    pub fn value_kind(self) -> ValueKind {
        match self {
            VitalMetric::RrIntervals => ValueKind::Series,
            VitalMetric::AfDeviceFlag => ValueKind::Flag,
            _ => ValueKind::Number,
        }
    }

    /// Device-fault screen. Deliberately wider than any clinical threshold.
    pub fn plausibility(self) -> Option<(f64, f64)> {
        match self {
            VitalMetric::HeartRate => Some((20.0, 250.0)),
            VitalMetric::SpO2 => Some((50.0, 100.0)),
            VitalMetric::Weight => Some((20.0, 300.0)),
            VitalMetric::SystolicBp => Some((50.0, 260.0)),
            VitalMetric::DiastolicBp => Some((30.0, 160.0)),
            VitalMetric::RespRate => Some((4.0, 60.0)),
            VitalMetric::BodyTemp => Some((30.0, 43.0)),
            VitalMetric::Sdnn => Some((0.0, 300.0)),
            // per interval; 20..300 bpm
            VitalMetric::RrIntervals => Some((200.0, 3000.0)),
            VitalMetric::AfDeviceFlag => None,
            VitalMetric::Activity => Some((0.0, 100_000.0)),
            VitalMetric::Sleep => Some((0.0, 1440.0)),
        }
    }
}

impl EnvMetric {
    pub const ALL: [EnvMetric; 9] = [
        EnvMetric::Pm1,
        EnvMetric::Pm2_5,
        EnvMetric::Pm4,
        EnvMetric::Pm10,
        EnvMetric::Co2,
        EnvMetric::AirTemp,
        EnvMetric::Humidity,
        EnvMetric::Noise,
        EnvMetric::Motion,
    ];

    pub fn key(self) -> &'static str {
        match self {
            EnvMetric::Pm1 => "pm1",
            EnvMetric::Pm2_5 => "pm2_5",
            EnvMetric::Pm4 => "pm4",
            EnvMetric::Pm10 => "pm10",
            EnvMetric::Co2 => "co2",
            EnvMetric::AirTemp => "air_temp",
            EnvMetric::Humidity => "humidity",
            EnvMetric::Noise => "noise",
            EnvMetric::Motion => "motion",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            EnvMetric::Pm1 | EnvMetric::Pm2_5 | EnvMetric::Pm4 | EnvMetric::Pm10 => "ug/m3",
            EnvMetric::Co2 => "ppm",
            EnvMetric::AirTemp => "degC",
            EnvMetric::Humidity => "%RH",
            EnvMetric::Noise => "dB",
            EnvMetric::Motion => "bool",
        }
    }

    pub fn value_kind(self) -> ValueKind {
        match self {
            EnvMetric::Motion => ValueKind::Flag,
            _ => ValueKind::Number,
        }
    }

    /// Declared output range of the sensor that reports this metric.
    pub fn sensor_range(self) -> Option<(f64, f64)> {
        match self {
            EnvMetric::Pm1 | EnvMetric::Pm2_5 | EnvMetric::Pm4 | EnvMetric::Pm10 => {
                Some((0.0, 1000.0))
            }
            EnvMetric::Co2 => Some((0.0, 40_000.0)),
            EnvMetric::AirTemp => Some((-40.0, 125.0)),
            EnvMetric::Humidity => Some((0.0, 100.0)),
            // microphone acoustic overload point
            EnvMetric::Noise => Some((0.0, 120.0)),
            EnvMetric::Motion => None,
        }
    }
}

/// Any metric, medical or environmental. Serialized as its string key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    Vital(VitalMetric),
    Env(EnvMetric),
}

impl Metric {
    pub fn all() -> impl Iterator<Item = Metric> {
        VitalMetric::ALL
            .into_iter()
            .map(Metric::Vital)
            .chain(EnvMetric::ALL.into_iter().map(Metric::Env))
    }

    pub fn key(self) -> &'static str {
        match self {
            Metric::Vital(m) => m.key(),
            Metric::Env(m) => m.key(),
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Metric::Vital(m) => m.unit(),
            Metric::Env(m) => m.unit(),
        }
    }

    pub fn value_kind(self) -> ValueKind {
        match self {
            Metric::Vital(m) => m.value_kind(),
            Metric::Env(m) => m.value_kind(),
        }
    }

    pub fn is_env(self) -> bool {
        matches!(self, Metric::Env(_))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl fmt::Display for VitalMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl fmt::Display for EnvMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Metric {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::all()
            .find(|m| m.key() == s)
            .ok_or_else(|| ValidationError::UnknownMetric(s.to_owned()))
    }
}

impl FromStr for VitalMetric {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VitalMetric::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| ValidationError::UnknownMetric(s.to_owned()))
    }
}

impl FromStr for EnvMetric {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EnvMetric::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| ValidationError::UnknownMetric(s.to_owned()))
    }
}

impl TryFrom<String> for Metric {
    type Error = ValidationError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> Self {
        m.key().to_owned()
    }
}

impl From<VitalMetric> for Metric {
    fn from(m: VitalMetric) -> Self {
        Metric::Vital(m)
    }
}

impl From<EnvMetric> for Metric {
    fn from(m: EnvMetric) -> Self {
        Metric::Env(m)
    }
}
