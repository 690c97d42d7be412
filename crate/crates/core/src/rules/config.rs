//! Threshold, environmental, and scoring configuration.
//!
//! Loaded from a JSON document whose top-level keys are the
//! [`ThresholdConfig`] fields; `env` and `scoring` are nested objects. Every
//! key is optional and falls back to the defaults below.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use super::{FlagKind, RulesError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    /// %
    pub spo2_low: f64,
    /// bpm
    pub hr_high: f64,
    pub hr_low: f64,
    /// ms
    pub sdnn_low: f64,
    /// kg
    pub weight_gain_kg: f64,
    /// hours
    pub weight_window: f64,
    /// mmHg
    pub sbp_high: f64,
    pub sbp_low: f64,
    pub dbp_high: f64,
    pub dbp_low: f64,
    /// breaths/min
    pub rr_high: f64,
    /// degC
    pub temp_high: f64,
    pub temp_low: f64,
    pub hrv_persistence_count: usize,
    pub af_rr_cv_threshold: f64,
    pub env: EnvThresholds,
    pub scoring: ScoringConfig,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            spo2_low: 92.0,
            hr_high: 100.0,
            hr_low: 50.0,
            sdnn_low: 20.0,
            weight_gain_kg: 2.0,
            weight_window: 72.0,
            sbp_high: 140.0,
            sbp_low: 90.0,
            dbp_high: 90.0,
            dbp_low: 60.0,
            rr_high: 20.0,
            temp_high: 37.5,
            temp_low: 36.0,
            hrv_persistence_count: 3,
            af_rr_cv_threshold: 0.15,
            env: EnvThresholds::default(),
            scoring: ScoringConfig::default(),
        }
    }
}

/// Home-environment cutoffs. None of these come from clinical guidance;
/// they are tunable defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvThresholds {
    /// ug/m3
    pub pm2_5_high: f64,
    /// minutes the PM2.5 excess must persist
    pub pm2_5_sustain_min: f64,
    /// ppm
    pub co2_high: f64,
    /// degC
    pub air_temp_low: f64,
    pub air_temp_high: f64,
    /// dB SPL
    pub noise_high: f64,
    pub noise_sustain_min: f64,
}

impl Default for EnvThresholds {
    fn default() -> Self {
        EnvThresholds {
            pm2_5_high: 25.0,
            pm2_5_sustain_min: 60.0,
            co2_high: 1500.0,
            air_temp_low: 16.0,
            air_temp_high: 32.0,
            noise_high: 70.0,
            noise_sustain_min: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub weights: BTreeMap<FlagKind, f64>,
    pub red_cutoff: f64,
    /// Flags that force Red regardless of the total.
    pub critical: Vec<FlagKind>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        let critical = vec![FlagKind::LowSpO2, FlagKind::AtrialFibrillation];
        let weights = FlagKind::ALL
            .into_iter()
            .map(|k| (k, if critical.contains(&k) { 3.0 } else { 1.0 }))
            .collect();
        ScoringConfig { weights, red_cutoff: 3.0, critical }
    }
}

impl ScoringConfig {
    /// Missing entries weigh 1.
    pub fn weight(&self, kind: FlagKind) -> f64 {
        self.weights.get(&kind).copied().unwrap_or(1.0)
    }

    pub fn is_critical(&self, kind: FlagKind) -> bool {
        self.critical.contains(&kind)
    }
}

fn minutes(m: f64) -> Duration {
    Duration::milliseconds((m * 60_000.0).round() as i64)
}

impl ThresholdConfig {
    pub fn weight_window_duration(&self) -> Duration {
        minutes(self.weight_window * 60.0)
    }

    pub fn pm2_5_sustain(&self) -> Duration {
        minutes(self.env.pm2_5_sustain_min)
    }

    pub fn noise_sustain(&self) -> Duration {
        minutes(self.env.noise_sustain_min)
    }

    pub fn validate(&self) -> Result<(), RulesError> {
        let bad = |what: &str| Err(RulesError::InvalidConfig(what.to_owned()));
        let positive = [
            ("spo2_low", self.spo2_low),
            ("hr_high", self.hr_high),
            ("hr_low", self.hr_low),
            ("sdnn_low", self.sdnn_low),
            ("weight_gain_kg", self.weight_gain_kg),
            ("weight_window", self.weight_window),
            ("sbp_high", self.sbp_high),
            ("sbp_low", self.sbp_low),
            ("dbp_high", self.dbp_high),
            ("dbp_low", self.dbp_low),
            ("rr_high", self.rr_high),
            ("temp_high", self.temp_high),
            ("temp_low", self.temp_low),
            ("af_rr_cv_threshold", self.af_rr_cv_threshold),
            ("env.pm2_5_high", self.env.pm2_5_high),
            ("env.co2_high", self.env.co2_high),
            ("env.noise_high", self.env.noise_high),
            ("scoring.red_cutoff", self.scoring.red_cutoff),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.env.pm2_5_sustain_min >= 0.0 && self.env.noise_sustain_min >= 0.0) {
            return bad("sustain durations must be non-negative");
        }
        if self.hr_low >= self.hr_high {
            return bad("hr_low must be below hr_high");
        }
        if self.sbp_low >= self.sbp_high {
            return bad("sbp_low must be below sbp_high");
        }
        if self.dbp_low >= self.dbp_high {
            return bad("dbp_low must be below dbp_high");
        }
        if self.temp_low >= self.temp_high {
            return bad("temp_low must be below temp_high");
        }
        if self.env.air_temp_low >= self.env.air_temp_high {
            return bad("env.air_temp_low must be below env.air_temp_high");
        }
        if self.hrv_persistence_count == 0 {
            return bad("hrv_persistence_count must be at least 1");
        }
        if let Some((k, w)) = self.scoring.weights.iter().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return bad(&format!("weight for {k:?} must be non-negative, got {w}"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, RulesError> {
        let cfg: ThresholdConfig =
            serde_json::from_str(text).map_err(|e| RulesError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RulesError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RulesError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_clinical_list() {
        let c = ThresholdConfig::default();
        c.validate().unwrap();
        assert_eq!((c.spo2_low, c.hr_high, c.hr_low, c.sdnn_low), (92.0, 100.0, 50.0, 20.0));
        assert_eq!((c.weight_gain_kg, c.weight_window), (2.0, 72.0));
        assert_eq!((c.sbp_high, c.sbp_low, c.dbp_high, c.dbp_low), (140.0, 90.0, 90.0, 60.0));
        assert_eq!((c.rr_high, c.temp_high, c.temp_low), (20.0, 37.5, 36.0));
        assert_eq!(c.weight_window_duration(), Duration::hours(72));
        assert_eq!(c.scoring.weight(FlagKind::LowSpO2), 3.0);
        assert_eq!(c.scoring.weight(FlagKind::Tachycardia), 1.0);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c = ThresholdConfig::from_json(r#"{"spo2_low": 90, "env": {"co2_high": 2000}}"#).unwrap();
        assert_eq!(c.spo2_low, 90.0);
        assert_eq!(c.hr_high, 100.0);
        assert_eq!(c.env.co2_high, 2000.0);
        assert_eq!(c.env.pm2_5_high, 25.0);
    }

    #[test]
    fn inverted_band_rejected() {
        assert!(ThresholdConfig::from_json(r#"{"hr_low": 120}"#).is_err());
        assert!(ThresholdConfig::from_json(r#"{"hrv_persistence_count": 0}"#).is_err());
        assert!(ThresholdConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let c = ThresholdConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(ThresholdConfig::from_json(&text).unwrap(), c);
    }
}
