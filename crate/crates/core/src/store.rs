//! Append-only per-(patient, metric) time series.
//!
//! Each series lives in memory as an ordered vector and, when the store is
//! opened on a directory, as `<root>/<patient_id>/<metric>.jsonl` with one
//! canonical-JSON sample per line. Files are only ever appended to.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Metric, PatientId, Sample, SampleValue, StreamCursor, ValidatedSample};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub patient_id: PatientId,
    pub metric: Metric,
}

impl SeriesKey {
    pub fn new(patient_id: PatientId, metric: impl Into<Metric>) -> Self {
        SeriesKey { patient_id, metric: metric.into() }
    }

    pub fn of(sample: &Sample) -> Self {
        SeriesKey { patient_id: sample.patient_id().clone(), metric: sample.metric() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub timestamp: DateTime<Utc>,
    pub value: SampleValue,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SeriesSegment {
    pub points: Vec<SeriesPoint>,
    pub min_timestamp: Option<DateTime<Utc>>,
    pub max_timestamp: Option<DateTime<Utc>>,
}

impl SeriesSegment {
    pub fn from_points(points: Vec<SeriesPoint>) -> Self {
        let min_timestamp = points.first().map(|p| p.timestamp);
        let max_timestamp = points.last().map(|p| p.timestamp);
        SeriesSegment { points, min_timestamp, max_timestamp }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Numeric points only, as (timestamp, value).
    pub fn numeric(&self) -> Vec<(DateTime<Utc>, f64)> {
        self.points
            .iter()
            .filter_map(|p| p.value.as_number().map(|v| (p.timestamp, v)))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("timestamp {got} precedes last stored {last} for {key}")]
    TimestampRegression { key: String, last: DateTime<Utc>, got: DateTime<Utc> },
    #[error("unknown series {0}")]
    UnknownSeries(String),
    #[error("window start {t0} is after end {t1}")]
    InvalidWindow { t0: DateTime<Utc>, t1: DateTime<Utc> },
    #[error("patient id `{0}` is not usable as a storage path")]
    InvalidPatientId(String),
    #[error("storage failure at {path}: {source}")]
    StorageFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at {path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

/// How hard `append` works before returning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Durability {
    /// Line handed to the OS with a single write.
    #[default]
    Write,
    /// Line written and `fdatasync`ed.
    Sync,
}

struct Series {
    samples: Vec<Sample>,
    file: Option<File>,
}

pub struct SeriesStore {
    root: Option<PathBuf>,
    durability: Durability,
    series: RwLock<HashMap<SeriesKey, Arc<Mutex<Series>>>>,
}

fn check_patient_path(id: &PatientId) -> Result<(), StoreError> {
    let s = id.as_str();
    let ok = !s.is_empty()
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidPatientId(s.to_owned()))
    }
}

fn key_label(key: &SeriesKey) -> String {
    format!("{}/{}", key.patient_id, key.metric)
}

impl SeriesStore {
    pub fn in_memory() -> Self {
        SeriesStore { root: None, durability: Durability::Write, series: RwLock::new(HashMap::new()) }
    }

    /// Opens (or creates) a store rooted at `root`, loading every series file.
    pub fn open(root: impl AsRef<Path>, durability: Durability) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::StorageFailure { path, source }
        };
        fs::create_dir_all(&root).map_err(io_err(&root))?;

        let mut series = HashMap::new();
        for patient_dir in fs::read_dir(&root).map_err(io_err(&root))? {
            let patient_dir = patient_dir.map_err(io_err(&root))?;
            if !patient_dir.file_type().map_err(io_err(&root))?.is_dir() {
                continue;
            }
            let patient_id = PatientId::new(patient_dir.file_name().to_string_lossy().into_owned());
            for file in fs::read_dir(patient_dir.path()).map_err(io_err(&patient_dir.path()))? {
                let path = file.map_err(io_err(&patient_dir.path()))?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                    continue;
                }
                let Some(metric) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<Metric>().ok())
                else {
                    continue;
                };
                let key = SeriesKey::new(patient_id.clone(), metric);
                let samples = load_series(&path, &key)?;
                let file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
                series.insert(key, Arc::new(Mutex::new(Series { samples, file: Some(file) })));
            }
        }
        Ok(SeriesStore { root: Some(root), durability, series: RwLock::new(series) })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn get(&self, key: &SeriesKey) -> Option<Arc<Mutex<Series>>> {
        self.series.read().get(key).cloned()
    }

    fn get_or_create(&self, key: &SeriesKey) -> Result<Arc<Mutex<Series>>, StoreError> {
        if let Some(s) = self.get(key) {
            return Ok(s);
        }
        let mut map = self.series.write();
        if let Some(s) = map.get(key) {
            return Ok(s.clone());
        }
        let file = match &self.root {
            Some(root) => {
                check_patient_path(&key.patient_id)?;
                let dir = root.join(key.patient_id.as_str());
                fs::create_dir_all(&dir)
                    .map_err(|source| StoreError::StorageFailure { path: dir.clone(), source })?;
                let path = dir.join(format!("{}.jsonl", key.metric));
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|source| StoreError::StorageFailure { path, source })?;
                Some(file)
            }
            None => None,
        };
        let series = Arc::new(Mutex::new(Series { samples: Vec::new(), file }));
        map.insert(key.clone(), series.clone());
        Ok(series)
    }

    /// Appends a validated sample to its series and returns the assigned seq.
    ///
    /// Equal timestamps are allowed and ordered by arrival.
    pub fn append(&self, sample: ValidatedSample) -> Result<u64, StoreError> {
        let key = SeriesKey::of(&sample);
        let series = self.get_or_create(&key)?;
        let mut series = series.lock();
        let (last_ts, last_seq) = series
            .samples
            .last()
            .map(|s| (Some(s.timestamp()), s.seq()))
            .unwrap_or((None, 0));
        if let Some(last) = last_ts {
            if sample.timestamp() < last {
                return Err(StoreError::TimestampRegression {
                    key: key_label(&key),
                    last,
                    got: sample.timestamp(),
                });
            }
        }
        let seq = last_seq + 1;
        let mut sample = sample;
        sample.set_seq(seq);
        let sample = sample.into_inner();

        if let Some(file) = series.file.as_mut() {
            let mut line = serde_json::to_vec(&sample).expect("samples always serialize");
            line.push(b'\n');
            let path = || self.series_path(&key).unwrap_or_default();
            file.write_all(&line)
                .map_err(|source| StoreError::StorageFailure { path: path(), source })?;
            if self.durability == Durability::Sync {
                file.sync_data()
                    .map_err(|source| StoreError::StorageFailure { path: path(), source })?;
            }
        }
        series.samples.push(sample);
        Ok(seq)
    }

    pub fn series_path(&self, key: &SeriesKey) -> Option<PathBuf> {
        self.root
            .as_ref()
            .map(|r| r.join(key.patient_id.as_str()).join(format!("{}.jsonl", key.metric)))
    }

    /// Samples with `t0 <= timestamp <= t1`, in seq order.
    pub fn query_window(
        &self,
        key: &SeriesKey,
        t0: DateTime<Utc>,
        t1: DateTime<Utc>,
    ) -> Result<SeriesSegment, StoreError> {
        if t0 > t1 {
            return Err(StoreError::InvalidWindow { t0, t1 });
        }
        let series = self.get(key).ok_or_else(|| StoreError::UnknownSeries(key_label(key)))?;
        let series = series.lock();
        let samples = &series.samples;
        // timestamps are non-decreasing, so the window is a contiguous slice
        let start = samples.partition_point(|s| s.timestamp() < t0);
        let end = samples.partition_point(|s| s.timestamp() <= t1);
        let points = samples[start..end.max(start)]
            .iter()
            .map(|s| SeriesPoint { timestamp: s.timestamp(), value: s.value().clone(), seq: s.seq() })
            .collect();
        Ok(SeriesSegment::from_points(points))
    }

    /// Full samples (with device ids) in a window; used by export.
    pub fn samples_in_window(
        &self,
        key: &SeriesKey,
        t0: DateTime<Utc>,
        t1: DateTime<Utc>,
    ) -> Result<Vec<Sample>, StoreError> {
        if t0 > t1 {
            return Err(StoreError::InvalidWindow { t0, t1 });
        }
        let series = self.get(key).ok_or_else(|| StoreError::UnknownSeries(key_label(key)))?;
        let series = series.lock();
        Ok(series
            .samples
            .iter()
            .filter(|s| s.timestamp() >= t0 && s.timestamp() <= t1)
            .cloned()
            .collect())
    }

    pub fn latest(&self, key: &SeriesKey) -> Option<SeriesPoint> {
        let series = self.get(key)?;
        let series = series.lock();
        series
            .samples
            .last()
            .map(|s| SeriesPoint { timestamp: s.timestamp(), value: s.value().clone(), seq: s.seq() })
    }

    pub fn cursor(&self, key: &SeriesKey) -> Option<StreamCursor> {
        self.latest(key).map(|p| StreamCursor { timestamp: p.timestamp, seq: p.seq })
    }

    /// Latest value minus the minimum within `[latest_ts - duration, latest_ts]`.
    pub fn delta_over(&self, key: &SeriesKey, duration: Duration) -> Option<f64> {
        let latest = self.latest(key)?;
        let segment = self.query_window(key, latest.timestamp - duration, latest.timestamp).ok()?;
        min_anchored_delta(&segment.numeric(), duration)
    }

    pub fn keys(&self) -> Vec<SeriesKey> {
        let mut keys: Vec<_> = self.series.read().keys().cloned().collect();
        keys.sort();
        keys
    }

    pub fn has_patient(&self, patient_id: &PatientId) -> bool {
        self.series.read().keys().any(|k| &k.patient_id == patient_id)
    }

    /// All series of one patient, keyed by metric.
    pub fn patient_metrics(&self, patient_id: &PatientId) -> Vec<Metric> {
        let mut metrics: Vec<_> = self
            .series
            .read()
            .keys()
            .filter(|k| &k.patient_id == patient_id)
            .map(|k| k.metric)
            .collect();
        metrics.sort();
        metrics
    }

    /// Every stored sample grouped by series, in append order.
    pub fn snapshot(&self) -> BTreeMap<SeriesKey, Vec<Sample>> {
        let handles: Vec<_> = self.series.read().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        handles.into_iter().map(|(k, s)| (k, s.lock().samples.clone())).collect()
    }
}

fn load_series(path: &Path, key: &SeriesKey) -> Result<Vec<Sample>, StoreError> {
    let file = File::open(path).map_err(|source| StoreError::StorageFailure { path: path.to_path_buf(), source })?;
    let lines: Vec<_> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| StoreError::StorageFailure { path: path.to_path_buf(), source })?;
    let mut samples: Vec<Sample> = Vec::with_capacity(lines.len());
    let corrupt = |line: usize, reason: String| StoreError::Corrupt { path: path.to_path_buf(), line, reason };
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = match serde_json::from_str(line) {
            Ok(s) => s,
            // a torn final line from an interrupted write is dropped
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => return Err(corrupt(i + 1, e.to_string())),
        };
        if SeriesKey::of(&sample) != *key {
            return Err(corrupt(i + 1, "sample belongs to another series".into()));
        }
        if let Some(prev) = samples.last() {
            if sample.seq() <= prev.seq() || sample.timestamp() < prev.timestamp() {
                return Err(corrupt(i + 1, "out of order".into()));
            }
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Latest value minus the window minimum over `[latest_ts - duration, latest_ts]`.
///
/// `points` must be in stream order. Returns `None` when fewer than two points
/// fall in the window. Never negative.
pub fn min_anchored_delta(points: &[(DateTime<Utc>, f64)], duration: Duration) -> Option<f64> {
    let &(latest_ts, latest) = points.last()?;
    let from = latest_ts - duration;
    let window = points.iter().rev().take_while(|(t, _)| *t >= from);
    let (count, min) = window.fold((0usize, f64::INFINITY), |(n, m), (_, v)| (n + 1, m.min(*v)));
    (count >= 2).then(|| latest - min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_vital, DeviceId, VitalMetric, VitalSample};
    use chrono::TimeZone;

    fn t(day: i64, hour: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap() + Duration::days(day) + Duration::hours(hour)
    }

    fn weight(at: DateTime<Utc>, kg: f64) -> ValidatedSample {
        validate_vital(
            VitalSample {
                patient_id: PatientId::new("P1"),
                device_id: DeviceId::new("scale"),
                metric: VitalMetric::Weight,
                value: SampleValue::Number(kg),
                timestamp: at,
                seq: 0,
            },
            None,
        )
        .unwrap()
    }

    fn key() -> SeriesKey {
        SeriesKey::new(PatientId::new("P1"), VitalMetric::Weight)
    }

    #[test]
    fn first_append_gets_seq_one() {
        let store = SeriesStore::in_memory();
        assert_eq!(store.append(weight(t(0, 0), 70.0)).unwrap(), 1);
    }

    #[test]
    fn older_timestamp_rejected() {
        let store = SeriesStore::in_memory();
        store.append(weight(t(1, 0), 70.0)).unwrap();
        assert!(matches!(
            store.append(weight(t(0, 0), 70.0)),
            Err(StoreError::TimestampRegression { .. })
        ));
    }

    #[test]
    fn equal_timestamps_kept_in_arrival_order() {
        let store = SeriesStore::in_memory();
        assert_eq!(store.append(weight(t(0, 0), 70.0)).unwrap(), 1);
        assert_eq!(store.append(weight(t(0, 0), 70.4)).unwrap(), 2);
        let latest = store.latest(&key()).unwrap();
        assert_eq!(latest.value, SampleValue::Number(70.4));
        assert_eq!(latest.seq, 2);
    }

    #[test]
    fn latest_of_empty_is_none() {
        let store = SeriesStore::in_memory();
        assert!(store.latest(&key()).is_none());
        for (i, kg) in [70.0, 71.0, 72.0].into_iter().enumerate() {
            store.append(weight(t(i as i64, 0), kg)).unwrap();
        }
        assert_eq!(store.latest(&key()).unwrap().value, SampleValue::Number(72.0));
    }

    #[test]
    fn window_boundaries_inclusive_matches_brute_force() {
        let store = SeriesStore::in_memory();
        let times: Vec<_> = (0..10).map(|i| t(0, i * 2)).collect();
        for (i, at) in times.iter().enumerate() {
            store.append(weight(*at, 70.0 + i as f64 * 0.1)).unwrap();
        }
        for (a, b) in [(0, 9), (2, 5), (3, 3), (0, 0), (9, 9)] {
            let seg = store.query_window(&key(), times[a], times[b]).unwrap();
            let expected: Vec<_> = times.iter().filter(|x| **x >= times[a] && **x <= times[b]).collect();
            assert_eq!(seg.len(), expected.len());
            assert_eq!(seg.min_timestamp, Some(times[a]));
            assert_eq!(seg.max_timestamp, Some(times[b]));
        }
        // strictly between two samples
        let seg = store.query_window(&key(), t(0, 1), t(0, 1) + Duration::minutes(30)).unwrap();
        assert!(seg.is_empty());
        assert!(matches!(
            store.query_window(&SeriesKey::new(PatientId::new("nobody"), VitalMetric::Weight), t(0, 0), t(1, 0)),
            Err(StoreError::UnknownSeries(_))
        ));
        assert!(matches!(store.query_window(&key(), t(1, 0), t(0, 0)), Err(StoreError::InvalidWindow { .. })));
    }

    #[test]
    fn delta_examples() {
        let d3 = Duration::hours(72);
        let pts = [(t(0, 0), 70.0), (t(2, 0), 71.0), (t(3, 0), 72.5)];
        assert_eq!(min_anchored_delta(&pts, d3), Some(2.5));
        let flat = [(t(0, 0), 70.0), (t(1, 0), 70.0), (t(2, 0), 70.0)];
        assert_eq!(min_anchored_delta(&flat, d3), Some(0.0));
        let falling = [(t(0, 0), 73.0), (t(3, 0), 72.5)];
        assert_eq!(min_anchored_delta(&falling, d3), Some(0.0));
        assert_eq!(min_anchored_delta(&[(t(0, 0), 70.0)], d3), None);
        // the d0 point drops out of a window shorter than 72 h
        assert_eq!(min_anchored_delta(&pts, Duration::hours(71)), Some(1.5));
    }

    #[test]
    fn delta_over_store() {
        let store = SeriesStore::in_memory();
        for (at, kg) in [(t(0, 0), 70.0), (t(2, 0), 71.0), (t(3, 0), 72.5)] {
            store.append(weight(at, kg)).unwrap();
        }
        assert_eq!(store.delta_over(&key(), Duration::hours(72)), Some(2.5));
    }

    #[test]
    fn survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = SeriesStore::open(dir.path(), Durability::Sync).unwrap();
            store.append(weight(t(0, 0), 70.0)).unwrap();
            store.append(weight(t(1, 0), 70.25)).unwrap();
        }
        let path = dir.path().join("P1").join("weight.jsonl");
        assert!(path.exists());
        let store = SeriesStore::open(dir.path(), Durability::Write).unwrap();
        let seg = store.query_window(&key(), t(0, 0), t(5, 0)).unwrap();
        assert_eq!(seg.len(), 2);
        assert_eq!(seg.points[1].value, SampleValue::Number(70.25));
        assert_eq!(store.append(weight(t(2, 0), 70.5)).unwrap(), 3);
    }

    #[test]
    fn torn_tail_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = SeriesStore::open(dir.path(), Durability::Write).unwrap();
            store.append(weight(t(0, 0), 70.0)).unwrap();
        }
        let path = dir.path().join("P1").join("weight.jsonl");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"patient_id\":\"P1\",\"dev").unwrap();
        let store = SeriesStore::open(dir.path(), Durability::Write).unwrap();
        assert_eq!(store.latest(&key()).unwrap().seq, 1);
    }

    #[test]
    fn hostile_patient_id_rejected_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let store = SeriesStore::open(dir.path(), Durability::Write).unwrap();
        let mut s = weight(t(0, 0), 70.0).into_inner();
        if let Sample::Vital(v) = &mut s {
            v.patient_id = PatientId::new("../etc");
        }
        assert!(matches!(store.append(ValidatedSample::from_trusted(s)), Err(StoreError::InvalidPatientId(_))));
    }
}
