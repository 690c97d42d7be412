//! Streaming evaluation: folds each accepted sample into per-patient state,
//! recomputes the active flags, scores them, and raises alerts.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};

use super::flags::{detect_af, eval_env, eval_hrv_persistence, eval_point_thresholds, eval_weight_trend};
use super::{AlertBook, AlertError, AlertEvent, EnvSnapshot, MultimarkerScore, RiskFlag, ThresholdConfig, VitalsSnapshot};
use crate::model::{LocationMode, PatientId, Sample, SampleValue, VitalMetric};

#[derive(Debug, Default)]
struct PatientState {
    vitals: VitalsSnapshot,
    weights: VecDeque<(DateTime<Utc>, f64)>,
    sdnn: VecDeque<(DateTime<Utc>, f64)>,
    rr: Option<(DateTime<Utc>, Vec<f64>)>,
    af_flag: Option<(DateTime<Utc>, bool)>,
    env: EnvSnapshot,
}

impl PatientState {
    fn fold(&mut self, sample: &Sample, cfg: &ThresholdConfig) {
        let at = sample.timestamp();
        match sample {
            Sample::Vital(v) => match (&v.metric, &v.value) {
                (VitalMetric::Weight, SampleValue::Number(kg)) => {
                    self.weights.push_back((at, *kg));
                    let from = at - cfg.weight_window_duration();
                    while self.weights.front().is_some_and(|(t, _)| *t < from) {
                        self.weights.pop_front();
                    }
                }
                (VitalMetric::Sdnn, SampleValue::Number(ms)) => {
                    self.sdnn.push_back((at, *ms));
                    while self.sdnn.len() > cfg.hrv_persistence_count {
                        self.sdnn.pop_front();
                    }
                }
                (VitalMetric::RrIntervals, SampleValue::Series(rr)) => self.rr = Some((at, rr.clone())),
                (VitalMetric::AfDeviceFlag, SampleValue::Flag(f)) => self.af_flag = Some((at, *f)),
                (metric, SampleValue::Number(x)) => self.vitals.set(*metric, *x, at),
                _ => {}
            },
            Sample::Env(e) => {
                if let SampleValue::Number(x) = e.value {
                    self.env.observe(e.metric, x, at, cfg);
                }
            }
        }
    }

    fn flags(&self, cfg: &ThresholdConfig) -> Vec<RiskFlag> {
        let mut flags = eval_point_thresholds(&self.vitals, cfg);
        let weights: Vec<_> = self.weights.iter().copied().collect();
        flags.extend(eval_weight_trend(&weights, cfg));
        let sdnn: Vec<_> = self.sdnn.iter().copied().collect();
        flags.extend(eval_hrv_persistence(&sdnn, cfg));
        if self.rr.is_some() || self.af_flag.is_some() {
            let at = self
                .rr
                .as_ref()
                .map(|(t, _)| *t)
                .into_iter()
                .chain(self.af_flag.map(|(t, _)| t))
                .max()
                .expect("one of the AF inputs is present");
            let rr = self.rr.as_ref().map(|(_, v)| v.as_slice());
            // too few intervals and no device verdict: nothing to say yet
            if let Ok(Some(flag)) = detect_af(rr, self.af_flag.map(|(_, f)| f), at, cfg) {
                flags.push(flag);
            }
        }
        flags.extend(eval_env(&self.env, cfg));
        flags.sort_by_key(|f| f.kind);
        flags
    }
}

/// Outcome of evaluating one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Every currently active flag, including environmental ones that may not
    /// contribute to the score.
    pub flags: Vec<RiskFlag>,
    pub score: MultimarkerScore,
    pub alert: Option<AlertEvent>,
}

pub struct RulesEngine {
    cfg: ThresholdConfig,
    patients: RwLock<HashMap<PatientId, Arc<Mutex<PatientState>>>>,
    scores: RwLock<HashMap<PatientId, MultimarkerScore>>,
    alerts: AlertBook,
}

impl RulesEngine {
    pub fn new(cfg: ThresholdConfig, alerts: AlertBook) -> Self {
        RulesEngine { cfg, patients: RwLock::new(HashMap::new()), scores: RwLock::new(HashMap::new()), alerts }
    }

    pub fn config(&self) -> &ThresholdConfig {
        &self.cfg
    }

    pub fn alerts(&self) -> &AlertBook {
        &self.alerts
    }

    fn state(&self, patient_id: &PatientId) -> Arc<Mutex<PatientState>> {
        if let Some(s) = self.patients.read().get(patient_id) {
            return s.clone();
        }
        self.patients.write().entry(patient_id.clone()).or_default().clone()
    }

    /// Folds a historical sample into state without scoring or alerting.
    pub fn prime(&self, sample: &Sample) {
        self.state(sample.patient_id()).lock().fold(sample, &self.cfg);
    }

    /// Folds one sample in and re-evaluates the patient. Calls for the same
    /// patient are serialized.
    pub fn observe(&self, sample: &Sample, mode: LocationMode) -> Result<Evaluation, AlertError> {
        let patient_id = sample.patient_id();
        let state = self.state(patient_id);
        let mut state = state.lock();
        state.fold(sample, &self.cfg);
        let flags = state.flags(&self.cfg);
        let score = super::multimarker_score(patient_id, sample.timestamp(), &flags, mode, &self.cfg.scoring);
        let alert = self.alerts.raise_alert(&score)?;
        self.scores.write().insert(patient_id.clone(), score.clone());
        Ok(Evaluation { flags, score, alert })
    }

    pub fn latest_score(&self, patient_id: &PatientId) -> Option<MultimarkerScore> {
        self.scores.read().get(patient_id).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeviceId, EnvMetric, EnvSample, VitalSample};
    use crate::rules::{FlagKind, Severity};
    use chrono::{Duration, TimeZone};

    fn t(min: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 6, 1, 0, 0, 0).unwrap() + Duration::minutes(min)
    }

    fn vital(metric: VitalMetric, value: SampleValue, at: DateTime<Utc>) -> Sample {
        Sample::Vital(VitalSample {
            patient_id: PatientId::new("P1"),
            device_id: DeviceId::new("D1"),
            metric,
            value,
            timestamp: at,
            seq: 0,
        })
    }

    fn env(metric: EnvMetric, value: f64, at: DateTime<Utc>) -> Sample {
        Sample::Env(EnvSample {
            patient_id: PatientId::new("P1"),
            sensor_id: DeviceId::new("S1"),
            metric,
            value: SampleValue::Number(value),
            timestamp: at,
            seq: 0,
        })
    }

    fn engine() -> RulesEngine {
        RulesEngine::new(ThresholdConfig::default(), AlertBook::new(0))
    }

    #[test]
    fn low_spo2_raises_red_alert_once() {
        let e = engine();
        let ev = e.observe(&vital(VitalMetric::SpO2, SampleValue::Number(89.0), t(0)), LocationMode::Home).unwrap();
        assert_eq!(ev.score.severity, Severity::Red);
        assert!(ev.alert.is_some());
        let ev = e.observe(&vital(VitalMetric::SpO2, SampleValue::Number(88.0), t(5)), LocationMode::Home).unwrap();
        assert!(ev.alert.is_none());
        let ev = e.observe(&vital(VitalMetric::SpO2, SampleValue::Number(97.0), t(10)), LocationMode::Home).unwrap();
        assert_eq!(ev.score.severity, Severity::Green);
        assert_eq!(e.latest_score(&PatientId::new("P1")).unwrap().severity, Severity::Green);
    }

    #[test]
    fn weight_ramp_fires_and_clears_when_window_slides() {
        let e = engine();
        let day = 24 * 60;
        let mut fired = vec![];
        for (d, kg) in [(0, 70.0), (1, 70.5), (2, 71.5), (3, 72.3), (7, 72.3)] {
            let ev = e.observe(&vital(VitalMetric::Weight, SampleValue::Number(kg), t(d * day)), LocationMode::Home).unwrap();
            fired.push(ev.flags.iter().any(|f| f.kind == FlagKind::WeightGain));
        }
        assert_eq!(fired, vec![false, false, false, true, false]);
    }

    #[test]
    fn env_flags_ignored_away() {
        let e = engine();
        let ev = e.observe(&env(EnvMetric::Co2, 2500.0, t(0)), LocationMode::Away).unwrap();
        assert_eq!(ev.flags.len(), 1);
        assert_eq!(ev.score.severity, Severity::Green);
        assert!(ev.alert.is_none());
        let ev = e.observe(&env(EnvMetric::Co2, 2500.0, t(10)), LocationMode::Home).unwrap();
        assert_eq!(ev.score.severity, Severity::Yellow);
    }

    #[test]
    fn af_from_rr_irregularity() {
        let e = engine();
        let rr: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { 600.0 } else { 1100.0 }).collect();
        let ev = e.observe(&vital(VitalMetric::RrIntervals, SampleValue::Series(rr), t(0)), LocationMode::Home).unwrap();
        assert!(ev.score.active_flags.contains(&FlagKind::AtrialFibrillation));
        let short = vec![800.0; 5];
        let ev = e.observe(&vital(VitalMetric::RrIntervals, SampleValue::Series(short), t(1)), LocationMode::Home).unwrap();
        assert!(ev.flags.is_empty());
    }

    #[test]
    fn prime_builds_state_silently() {
        let e = engine();
        e.prime(&vital(VitalMetric::Sdnn, SampleValue::Number(15.0), t(0)));
        e.prime(&vital(VitalMetric::Sdnn, SampleValue::Number(16.0), t(5)));
        assert!(e.alerts().is_empty());
        let ev = e.observe(&vital(VitalMetric::Sdnn, SampleValue::Number(17.0), t(10)), LocationMode::Home).unwrap();
        assert_eq!(ev.score.active_flags.iter().copied().collect::<Vec<_>>(), vec![FlagKind::LowHrvPersistent]);
    }
}
