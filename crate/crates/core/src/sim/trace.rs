//! Synthetic telemetry traces.
//!
//! Each metric runs its own mean-reverting random walk on its own RNG stream,
//! clamped inside an envelope that trips no default threshold. Episodes add a
//! deterministic offset on top of the walk for their own metrics only.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{round_to, SimError, Walk};
use crate::model::{DeviceId, EnvMetric, EnvSample, Metric, PatientId, Sample, SampleValue, VitalMetric, VitalSample};
use crate::rules::{FlagKind, ThresholdConfig};

/// Minutes between samples, per metric group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cadence {
    /// Heart rate, SpO2 and SDNN.
    pub watch: u32,
    pub weight: u32,
    pub blood_pressure: u32,
    /// RR-interval series and the device AF verdict.
    pub rhythm: u32,
    pub resp_rate: u32,
    pub body_temp: u32,
    pub activity: u32,
    pub sleep: u32,
    pub env: u32,
}

impl Default for Cadence {
    fn default() -> Self {
        Cadence {
            watch: 5,
            weight: 1440,
            blood_pressure: 720,
            rhythm: 30,
            resp_rate: 15,
            body_temp: 60,
            activity: 60,
            sleep: 1440,
            env: 10,
        }
    }
}

impl Cadence {
    pub fn of(&self, metric: Metric) -> u32 {
        match metric {
            Metric::Vital(v) => match v {
                VitalMetric::HeartRate | VitalMetric::SpO2 | VitalMetric::Sdnn => self.watch,
                VitalMetric::Weight => self.weight,
                VitalMetric::SystolicBp | VitalMetric::DiastolicBp => self.blood_pressure,
                VitalMetric::RrIntervals | VitalMetric::AfDeviceFlag => self.rhythm,
                VitalMetric::RespRate => self.resp_rate,
                VitalMetric::BodyTemp => self.body_temp,
                VitalMetric::Activity => self.activity,
                VitalMetric::Sleep => self.sleep,
            },
            Metric::Env(_) => self.env,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EpisodeKind {
    /// Weight ramp plus a mild SpO2 decline. Magnitude: kg gained.
    FluidOverload,
    /// Irregular RR intervals plus the device AF verdict. Magnitude: RR
    /// coefficient of variation added on top of the baseline.
    AFBurst,
    /// Magnitude: mmHg added to systolic pressure; diastolic gets half.
    HypertensiveSurge,
    /// Magnitude: degC added to body temperature; respiratory rate gets
    /// four breaths/min per degree.
    Infection,
}

impl EpisodeKind {
    /// Flag the episode is designed to trip.
    pub fn flag(self) -> FlagKind {
        match self {
            EpisodeKind::FluidOverload => FlagKind::WeightGain,
            EpisodeKind::AFBurst => FlagKind::AtrialFibrillation,
            EpisodeKind::HypertensiveSurge => FlagKind::HighSbp,
            EpisodeKind::Infection => FlagKind::Fever,
        }
    }

    /// Metric whose samples carry the crossing.
    pub fn driver(self) -> VitalMetric {
        match self {
            EpisodeKind::FluidOverload => VitalMetric::Weight,
            EpisodeKind::AFBurst => VitalMetric::RrIntervals,
            EpisodeKind::HypertensiveSurge => VitalMetric::SystolicBp,
            EpisodeKind::Infection => VitalMetric::BodyTemp,
        }
    }

    pub fn metrics(self) -> &'static [VitalMetric] {
        match self {
            EpisodeKind::FluidOverload => &[VitalMetric::Weight, VitalMetric::SpO2],
            EpisodeKind::AFBurst => &[VitalMetric::RrIntervals, VitalMetric::AfDeviceFlag],
            EpisodeKind::HypertensiveSurge => &[VitalMetric::SystolicBp, VitalMetric::DiastolicBp],
            EpisodeKind::Infection => &[VitalMetric::BodyTemp, VitalMetric::RespRate],
        }
    }

    /// Smallest magnitude that crosses the default threshold from anywhere
    /// in the baseline envelope.
    pub fn min_magnitude(self) -> f64 {
        let cfg = ThresholdConfig::default();
        match self {
            // weight jitter can eat 2 * WEIGHT_JITTER of the ramp
            EpisodeKind::FluidOverload => cfg.weight_gain_kg + 2.0 * WEIGHT_JITTER + 0.1,
            EpisodeKind::AFBurst => cfg.af_rr_cv_threshold,
            EpisodeKind::HypertensiveSurge => cfg.sbp_high - SBP.2 + 1.0,
            EpisodeKind::Infection => cfg.temp_high - TEMP.2 + 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub kind: EpisodeKind,
    pub onset: DateTime<Utc>,
    /// Hours over which the offset ramps from 0 to `magnitude`; it then
    /// holds until the trace ends.
    pub duration_hours: f64,
    pub magnitude: f64,
}

impl EpisodeSpec {
    /// Offset in `[0, magnitude]` at `t`.
    fn offset(&self, t: DateTime<Utc>) -> f64 {
        if t < self.onset {
            return 0.0;
        }
        let elapsed = (t - self.onset).num_milliseconds() as f64 / 3_600_000.0;
        if self.duration_hours <= 0.0 {
            return self.magnitude;
        }
        self.magnitude * (elapsed / self.duration_hours).min(1.0)
    }

    fn active(&self, t: DateTime<Utc>) -> bool {
        t >= self.onset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceSpec {
    pub patient_id: String,
    pub start: DateTime<Utc>,
    pub days: u32,
    pub cadence: Cadence,
    pub seed: u64,
    pub episodes: Vec<EpisodeSpec>,
    pub include_env: bool,
    /// Device ids default to `<patient>-watch`, `-scale`, `-cuff`, `-env`.
    pub device_prefix: Option<String>,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            patient_id: "P0001".into(),
            start: Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
            days: 7,
            cadence: Cadence::default(),
            seed: 0,
            episodes: Vec::new(),
            include_env: true,
            device_prefix: None,
        }
    }
}

// (mean, upper/lower clamp) envelopes, all strictly inside the default
// thresholds
const HR: (f64, f64, f64) = (72.0, 90.0, 58.0);
const SPO2: (f64, f64, f64) = (96.5, 99.0, 94.0);
const SDNN: (f64, f64, f64) = (50.0, 75.0, 32.0);
const SBP: (f64, f64, f64) = (118.0, 130.0, 105.0);
const DBP: (f64, f64, f64) = (75.0, 84.0, 66.0);
const RESP: (f64, f64, f64) = (15.0, 18.0, 12.0);
const TEMP: (f64, f64, f64) = (36.7, 37.1, 36.3);
const WEIGHT_JITTER: f64 = 0.3;
const RR_BASE_CV: f64 = 0.03;
const RR_COUNT: usize = 40;

const PM2_5: (f64, f64, f64) = (8.0, 18.0, 2.0);
const CO2: (f64, f64, f64) = (700.0, 1150.0, 420.0);
const AIR_TEMP: (f64, f64, f64) = (21.5, 25.0, 18.5);
const HUMIDITY: (f64, f64, f64) = (45.0, 60.0, 30.0);
const NOISE: (f64, f64, f64) = (40.0, 58.0, 28.0);

fn walk(env: (f64, f64, f64), step_sd: f64) -> Walk {
    Walk::new(env.0, step_sd, env.2, env.1)
}

impl TraceSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if self.patient_id.trim().is_empty() {
            return bad("patient_id is empty".into());
        }
        if self.days == 0 {
            return bad("days must be positive".into());
        }
        let c = &self.cadence;
        let all = [
            c.watch,
            c.weight,
            c.blood_pressure,
            c.rhythm,
            c.resp_rate,
            c.body_temp,
            c.activity,
            c.sleep,
            c.env,
        ];
        if all.contains(&0) {
            return bad("cadences must be positive".into());
        }
        let end = self.end();
        for e in &self.episodes {
            if e.onset < self.start || e.onset >= end {
                return bad(format!("{:?} onset {} outside the trace", e.kind, e.onset));
            }
            if !(e.duration_hours.is_finite() && e.duration_hours >= 0.0) {
                return bad(format!("{:?} duration must be non-negative", e.kind));
            }
            if !(e.magnitude.is_finite() && e.magnitude >= e.kind.min_magnitude()) {
                return bad(format!(
                    "{:?} magnitude {} below the {} needed to cross its threshold",
                    e.kind,
                    e.magnitude,
                    e.kind.min_magnitude()
                ));
            }
            if e.kind == EpisodeKind::FluidOverload {
                let window = ThresholdConfig::default().weight_window - f64::from(c.weight) / 60.0;
                if e.duration_hours > window {
                    return bad(format!("weight ramp longer than {window} h cannot be seen in one window"));
                }
            }
        }
        Ok(())
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::days(i64::from(self.days))
    }

    fn device(&self, suffix: &str) -> DeviceId {
        let prefix = self.device_prefix.as_deref().unwrap_or(&self.patient_id);
        DeviceId::new(format!("{prefix}-{suffix}"))
    }

    fn offset(&self, kind: EpisodeKind, t: DateTime<Utc>) -> f64 {
        self.episodes.iter().filter(|e| e.kind == kind).map(|e| e.offset(t)).sum()
    }

    fn episode_active(&self, kind: EpisodeKind, t: DateTime<Utc>) -> bool {
        self.episodes.iter().any(|e| e.kind == kind && e.active(t))
    }
}

fn metric_stream(metric: Metric) -> u64 {
    Metric::all().position(|m| m == metric).expect("metric enumerated") as u64
}

fn times(spec: &TraceSpec, metric: Metric) -> impl Iterator<Item = DateTime<Utc>> + '_ {
    let step = Duration::minutes(i64::from(spec.cadence.of(metric)));
    let end = spec.end();
    (0..).map(move |k| spec.start + step * k).take_while(move |t| *t < end)
}

fn rr_series(rng: &mut ChaCha8Rng, hr: f64, cv: f64) -> Vec<f64> {
    let mean = 60_000.0 / hr;
    (0..RR_COUNT)
        .map(|_| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            round_to((mean * (1.0 + cv * z)).clamp(300.0, 2000.0), 1)
        })
        .collect()
}

/// Samples of one metric, in time order.
fn gen_metric(spec: &TraceSpec, metric: Metric) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(metric_stream(metric));
    let pid = PatientId::new(spec.patient_id.clone());
    let vital = |device: DeviceId, m: VitalMetric, value: SampleValue, t: DateTime<Utc>| {
        Sample::Vital(VitalSample { patient_id: pid.clone(), device_id: device, metric: m, value, timestamp: t, seq: 0 })
    };
    let env = |m: EnvMetric, value: f64, t: DateTime<Utc>| {
        Sample::Env(EnvSample {
            patient_id: pid.clone(),
            sensor_id: spec.device("env"),
            metric: m,
            value: SampleValue::Number(value),
            timestamp: t,
            seq: 0,
        })
    };
    let ts: Vec<DateTime<Utc>> = times(spec, metric).collect();
    let mut out = Vec::with_capacity(ts.len());
    match metric {
        Metric::Vital(m) => {
            let watch = spec.device("watch");
            let (mut w, device, decimals) = match m {
                VitalMetric::HeartRate => (walk(HR, 2.0), watch, 0),
                VitalMetric::SpO2 => (walk(SPO2, 0.4), watch, 0),
                VitalMetric::Sdnn => (walk(SDNN, 3.0), watch, 1),
                VitalMetric::SystolicBp => (walk(SBP, 4.0), spec.device("cuff"), 0),
                VitalMetric::DiastolicBp => (walk(DBP, 3.0), spec.device("cuff"), 0),
                VitalMetric::RespRate => (walk(RESP, 0.6), watch, 0),
                VitalMetric::BodyTemp => (walk(TEMP, 0.08), watch, 1),
                VitalMetric::Weight => {
                    let base = round_to(rng.random_range(60.0..95.0), 1);
                    (Walk::new(base, 0.15, base - WEIGHT_JITTER, base + WEIGHT_JITTER), spec.device("scale"), 1)
                }
                VitalMetric::Activity => (Walk::new(400.0, 150.0, 0.0, 2500.0), watch, 0),
                VitalMetric::Sleep => (Walk::new(420.0, 30.0, 240.0, 600.0), watch, 0),
                VitalMetric::RrIntervals | VitalMetric::AfDeviceFlag => (walk(HR, 2.0), watch, 0),
            };
            for t in ts {
                let base = w.step(&mut rng);
                let value = match m {
                    VitalMetric::RrIntervals => {
                        // rhythm episodes switch on at onset rather than ramping
                        let extra: f64 = spec
                            .episodes
                            .iter()
                            .filter(|e| e.kind == EpisodeKind::AFBurst && e.active(t))
                            .map(|e| e.magnitude)
                            .sum();
                        let cv = RR_BASE_CV + extra;
                        SampleValue::Series(rr_series(&mut rng, base, cv))
                    }
                    VitalMetric::AfDeviceFlag => SampleValue::Flag(spec.episode_active(EpisodeKind::AFBurst, t)),
                    _ => {
                        let shifted = base
                            + match m {
                                VitalMetric::Weight => spec.offset(EpisodeKind::FluidOverload, t),
                                // mild desaturation that stays above the SpO2 cutoff
                                VitalMetric::SpO2 => -(0.5 * spec.offset(EpisodeKind::FluidOverload, t)).min(base - 92.5).max(0.0),
                                VitalMetric::SystolicBp => spec.offset(EpisodeKind::HypertensiveSurge, t),
                                VitalMetric::DiastolicBp => 0.5 * spec.offset(EpisodeKind::HypertensiveSurge, t),
                                VitalMetric::BodyTemp => spec.offset(EpisodeKind::Infection, t),
                                VitalMetric::RespRate => 4.0 * spec.offset(EpisodeKind::Infection, t),
                                _ => 0.0,
                            };
                        let (lo, hi) = m.plausibility().unwrap_or((f64::MIN, f64::MAX));
                        SampleValue::Number(round_to(shifted.clamp(lo, hi), decimals))
                    }
                };
                out.push(vital(device.clone(), m, value, t));
            }
        }
        Metric::Env(m) => {
            let mut w = match m {
                EnvMetric::Pm1 => walk((PM2_5.0 * 0.6, PM2_5.1 * 0.6, PM2_5.2 * 0.6), 0.5),
                EnvMetric::Pm2_5 => walk(PM2_5, 0.8),
                EnvMetric::Pm4 => walk((PM2_5.0 * 1.1, PM2_5.1 * 1.1, PM2_5.2 * 1.1), 0.8),
                EnvMetric::Pm10 => walk((PM2_5.0 * 1.4, PM2_5.1 * 1.4, PM2_5.2 * 1.4), 1.0),
                EnvMetric::Co2 => walk(CO2, 40.0),
                EnvMetric::AirTemp => walk(AIR_TEMP, 0.2),
                EnvMetric::Humidity => walk(HUMIDITY, 1.0),
                EnvMetric::Noise => walk(NOISE, 2.0),
                EnvMetric::Motion => walk((0.0, 1.0, 0.0), 0.0),
            };
            for t in ts {
                if m == EnvMetric::Motion {
                    let moving = rng.random_bool(0.3);
                    out.push(Sample::Env(EnvSample {
                        patient_id: pid.clone(),
                        sensor_id: spec.device("env"),
                        metric: m,
                        value: SampleValue::Flag(moving),
                        timestamp: t,
                        seq: 0,
                    }));
                } else {
                    let decimals = if m == EnvMetric::Co2 { 0 } else { 1 };
                    out.push(env(m, round_to(w.step(&mut rng), decimals), t));
                }
            }
        }
    }
    out
}

/// Full trace, ordered by timestamp and then by metric enumeration order.
pub fn gen_trace(spec: &TraceSpec) -> Result<Vec<Sample>, SimError> {
    spec.validate()?;
    let metrics: Vec<Metric> = Metric::all().filter(|m| spec.include_env || !m.is_env()).collect();
    let mut all: Vec<(DateTime<Utc>, u64, Sample)> = Vec::new();
    for m in metrics {
        let stream = metric_stream(m);
        all.extend(gen_metric(spec, m).into_iter().map(|s| (s.timestamp(), stream, s)));
    }
    all.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(all.into_iter().map(|(_, _, s)| s).collect())
}
