//! Flag evaluators. Each one is a pure function of recent observations and
//! the configuration; every comparison is strict.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::{RulesError, ThresholdConfig};
use crate::model::{EnvMetric, Metric, VitalMetric};
use crate::store::min_anchored_delta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlagKind {
    LowSpO2,
    Tachycardia,
    Bradycardia,
    #[serde(rename = "LowHRVPersistent")]
    LowHrvPersistent,
    WeightGain,
    #[serde(rename = "HighSBP")]
    HighSbp,
    #[serde(rename = "LowSBP")]
    LowSbp,
    #[serde(rename = "HighDBP")]
    HighDbp,
    #[serde(rename = "LowDBP")]
    LowDbp,
    HighRespRate,
    Fever,
    Hypothermia,
    AtrialFibrillation,
    EnvPoorAirQuality,
    EnvThermalStress,
    EnvHighNoise,
}

impl FlagKind {
    pub const ALL: [FlagKind; 16] = [
        FlagKind::LowSpO2,
        FlagKind::Tachycardia,
        FlagKind::Bradycardia,
        FlagKind::LowHrvPersistent,
        FlagKind::WeightGain,
        FlagKind::HighSbp,
        FlagKind::LowSbp,
        FlagKind::HighDbp,
        FlagKind::LowDbp,
        FlagKind::HighRespRate,
        FlagKind::Fever,
        FlagKind::Hypothermia,
        FlagKind::AtrialFibrillation,
        FlagKind::EnvPoorAirQuality,
        FlagKind::EnvThermalStress,
        FlagKind::EnvHighNoise,
    ];

    pub fn is_env(self) -> bool {
        matches!(self, FlagKind::EnvPoorAirQuality | FlagKind::EnvThermalStress | FlagKind::EnvHighNoise)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub metric: Metric,
    pub value: f64,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskFlag {
    pub kind: FlagKind,
    pub fired_at: DateTime<Utc>,
    pub evidence: Vec<Evidence>,
}

impl RiskFlag {
    fn single(kind: FlagKind, metric: impl Into<Metric>, value: f64, at: DateTime<Utc>) -> Self {
        RiskFlag { kind, fired_at: at, evidence: vec![Evidence { metric: metric.into(), value, at }] }
    }
}

/// Most recent reading of each point-threshold metric.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VitalsSnapshot {
    readings: BTreeMap<VitalMetric, (DateTime<Utc>, f64)>,
}

impl VitalsSnapshot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, metric: VitalMetric, value: f64, at: DateTime<Utc>) -> Self {
        self.set(metric, value, at);
        self
    }

    pub fn set(&mut self, metric: VitalMetric, value: f64, at: DateTime<Utc>) {
        self.readings.insert(metric, (at, value));
    }

    pub fn get(&self, metric: VitalMetric) -> Option<(DateTime<Utc>, f64)> {
        self.readings.get(&metric).copied()
    }
}

/// Scalar threshold flags. A metric missing from the snapshot cannot fire.
pub fn eval_point_thresholds(snapshot: &VitalsSnapshot, cfg: &ThresholdConfig) -> Vec<RiskFlag> {
    type Rule = (VitalMetric, FlagKind, fn(f64, &ThresholdConfig) -> bool);
    const RULES: [Rule; 10] = [
        (VitalMetric::SpO2, FlagKind::LowSpO2, |v, c| v < c.spo2_low),
        (VitalMetric::HeartRate, FlagKind::Tachycardia, |v, c| v > c.hr_high),
        (VitalMetric::HeartRate, FlagKind::Bradycardia, |v, c| v < c.hr_low),
        (VitalMetric::SystolicBp, FlagKind::HighSbp, |v, c| v > c.sbp_high),
        (VitalMetric::SystolicBp, FlagKind::LowSbp, |v, c| v < c.sbp_low),
        (VitalMetric::DiastolicBp, FlagKind::HighDbp, |v, c| v > c.dbp_high),
        (VitalMetric::DiastolicBp, FlagKind::LowDbp, |v, c| v < c.dbp_low),
        (VitalMetric::RespRate, FlagKind::HighRespRate, |v, c| v > c.rr_high),
        (VitalMetric::BodyTemp, FlagKind::Fever, |v, c| v > c.temp_high),
        (VitalMetric::BodyTemp, FlagKind::Hypothermia, |v, c| v < c.temp_low),
    ];
    let mut flags: Vec<RiskFlag> = RULES
        .iter()
        .filter_map(|(metric, kind, fires)| {
            let (at, v) = snapshot.get(*metric)?;
            fires(v, cfg).then(|| RiskFlag::single(*kind, *metric, v, at))
        })
        .collect();
    flags.sort_by_key(|f| f.kind);
    flags
}

/// WeightGain iff the min-anchored rise over the configured window is
/// strictly greater than `weight_gain_kg`.
pub fn eval_weight_trend(points: &[(DateTime<Utc>, f64)], cfg: &ThresholdConfig) -> Option<RiskFlag> {
    let window = cfg.weight_window_duration();
    let delta = min_anchored_delta(points, window)?;
    if delta <= cfg.weight_gain_kg {
        return None;
    }
    let &(at, latest) = points.last()?;
    let (min_at, min) = points
        .iter()
        .rev()
        .take_while(|(t, _)| *t >= at - window)
        .fold((at, latest), |acc, &(t, v)| if v < acc.1 { (t, v) } else { acc });
    Some(RiskFlag {
        kind: FlagKind::WeightGain,
        fired_at: at,
        evidence: vec![
            Evidence { metric: VitalMetric::Weight.into(), value: min, at: min_at },
            Evidence { metric: VitalMetric::Weight.into(), value: latest, at },
        ],
    })
}

/// LowHRVPersistent iff the last `hrv_persistence_count` SDNN samples are all
/// strictly below `sdnn_low`.
pub fn eval_hrv_persistence(points: &[(DateTime<Utc>, f64)], cfg: &ThresholdConfig) -> Option<RiskFlag> {
    let n = cfg.hrv_persistence_count;
    if n == 0 || points.len() < n {
        return None;
    }
    let run = &points[points.len() - n..];
    if !run.iter().all(|(_, v)| *v < cfg.sdnn_low) {
        return None;
    }
    Some(RiskFlag {
        kind: FlagKind::LowHrvPersistent,
        fired_at: run[n - 1].0,
        evidence: run
            .iter()
            .map(|&(at, value)| Evidence { metric: VitalMetric::Sdnn.into(), value, at })
            .collect(),
    })
}

pub const MIN_RR_INTERVALS: usize = 10;

/// Population coefficient of variation.
pub fn coefficient_of_variation(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return None;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(var.sqrt() / mean)
}

/// AF from a device verdict or, failing that, RR-interval irregularity.
///
/// A device verdict of `true` fires on its own. Otherwise at least
/// [`MIN_RR_INTERVALS`] intervals are needed unless the device reported.
pub fn detect_af(
    rr_intervals: Option<&[f64]>,
    device_af_flag: Option<bool>,
    at: DateTime<Utc>,
    cfg: &ThresholdConfig,
) -> Result<Option<RiskFlag>, RulesError> {
    if device_af_flag == Some(true) {
        return Ok(Some(RiskFlag::single(FlagKind::AtrialFibrillation, VitalMetric::AfDeviceFlag, 1.0, at)));
    }
    let rr = rr_intervals.unwrap_or(&[]);
    if rr.len() < MIN_RR_INTERVALS {
        if device_af_flag.is_some() {
            return Ok(None);
        }
        return Err(RulesError::InsufficientData { have: rr.len(), need: MIN_RR_INTERVALS });
    }
    let cv = coefficient_of_variation(rr).unwrap_or(0.0);
    Ok((cv > cfg.af_rr_cv_threshold)
        .then(|| RiskFlag::single(FlagKind::AtrialFibrillation, VitalMetric::RrIntervals, cv, at)))
}

/// Start of the trailing run of points strictly above `threshold`, if the
/// run has lasted at least `duration` by the last point.
pub fn sustained_above(points: &[(DateTime<Utc>, f64)], threshold: f64, duration: Duration) -> Option<DateTime<Utc>> {
    let &(last_at, _) = points.last()?;
    let run_start = points.iter().rev().take_while(|(_, v)| *v > threshold).last()?.0;
    (last_at - run_start >= duration).then_some(run_start)
}

/// Latest environmental readings plus the trailing-run starts for the
/// sustained rules.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvSnapshot {
    pub pm2_5: Option<(DateTime<Utc>, f64)>,
    pub pm2_5_run_start: Option<DateTime<Utc>>,
    pub co2: Option<(DateTime<Utc>, f64)>,
    pub air_temp: Option<(DateTime<Utc>, f64)>,
    pub noise: Option<(DateTime<Utc>, f64)>,
    pub noise_run_start: Option<DateTime<Utc>>,
}

impl EnvSnapshot {
    /// Folds one reading in, maintaining run starts against `cfg`.
    pub fn observe(&mut self, metric: EnvMetric, value: f64, at: DateTime<Utc>, cfg: &ThresholdConfig) {
        let track = |run: &mut Option<DateTime<Utc>>, above: bool| {
            if !above {
                *run = None;
            } else if run.is_none() {
                *run = Some(at);
            }
        };
        match metric {
            EnvMetric::Pm2_5 => {
                self.pm2_5 = Some((at, value));
                track(&mut self.pm2_5_run_start, value > cfg.env.pm2_5_high);
            }
            EnvMetric::Co2 => self.co2 = Some((at, value)),
            EnvMetric::AirTemp => self.air_temp = Some((at, value)),
            EnvMetric::Noise => {
                self.noise = Some((at, value));
                track(&mut self.noise_run_start, value > cfg.env.noise_high);
            }
            _ => {}
        }
    }
}

pub fn eval_env(env: &EnvSnapshot, cfg: &ThresholdConfig) -> Vec<RiskFlag> {
    let mut flags = Vec::new();

    let mut air = Vec::new();
    if let (Some((at, v)), Some(start)) = (env.pm2_5, env.pm2_5_run_start) {
        if at - start >= cfg.pm2_5_sustain() {
            air.push(Evidence { metric: EnvMetric::Pm2_5.into(), value: v, at });
        }
    }
    if let Some((at, v)) = env.co2 {
        if v > cfg.env.co2_high {
            air.push(Evidence { metric: EnvMetric::Co2.into(), value: v, at });
        }
    }
    if !air.is_empty() {
        let fired_at = air.iter().map(|e| e.at).max().unwrap();
        flags.push(RiskFlag { kind: FlagKind::EnvPoorAirQuality, fired_at, evidence: air });
    }

    if let Some((at, v)) = env.air_temp {
        if v < cfg.env.air_temp_low || v > cfg.env.air_temp_high {
            flags.push(RiskFlag::single(FlagKind::EnvThermalStress, EnvMetric::AirTemp, v, at));
        }
    }

    if let (Some((at, v)), Some(start)) = (env.noise, env.noise_run_start) {
        if at - start >= cfg.noise_sustain() {
            flags.push(RiskFlag::single(FlagKind::EnvHighNoise, EnvMetric::Noise, v, at));
        }
    }
    flags
}
