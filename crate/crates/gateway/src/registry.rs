//! Patients known to the platform and the devices bound to them.
//!
//! Credentials are stored as SHA-256 digests and compared in constant time.
//! When backed by a file, every mutation rewrites it atomically.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use predihealth::model::{DeviceId, Enrollment, LocationMode, Metric, PatientId, PatientRecord, ValidationError, VitalMetric};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    /// Wrist device: heart rhythm, SpO2, temperature, activity, sleep.
    Watch,
    Scale,
    /// Blood-pressure cuff.
    Cuff,
    /// Home environmental sensor.
    EnvSensor,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 4] = [DeviceKind::Watch, DeviceKind::Scale, DeviceKind::Cuff, DeviceKind::EnvSensor];

    /// Suffix used in generated device ids, e.g. `P1-watch`.
    pub fn suffix(self) -> &'static str {
        match self {
            DeviceKind::Watch => "watch",
            DeviceKind::Scale => "scale",
            DeviceKind::Cuff => "cuff",
            DeviceKind::EnvSensor => "env",
        }
    }

    pub fn accepts(self, metric: Metric) -> bool {
        match (self, metric) {
            (DeviceKind::EnvSensor, Metric::Env(_)) => true,
            (_, Metric::Env(_)) | (DeviceKind::EnvSensor, _) => false,
            (DeviceKind::Scale, m) => m == Metric::Vital(VitalMetric::Weight),
            (DeviceKind::Cuff, m) => {
                matches!(m, Metric::Vital(VitalMetric::SystolicBp | VitalMetric::DiastolicBp))
            }
            (DeviceKind::Watch, Metric::Vital(v)) => {
                !matches!(v, VitalMetric::Weight | VitalMetric::SystolicBp | VitalMetric::DiastolicBp)
            }
        }
    }

    pub fn for_metric(metric: Metric) -> DeviceKind {
        DeviceKind::ALL.into_iter().find(|k| k.accepts(metric)).expect("every metric has a device kind")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceBinding {
    pub device_id: DeviceId,
    pub patient_id: PatientId,
    pub kind: DeviceKind,
    /// Hex SHA-256 of the bearer token.
    pub token_sha256: String,
    pub active: bool,
}

/// Returned once at registration; the token is not stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub device_id: DeviceId,
    pub patient_id: PatientId,
    pub kind: DeviceKind,
    pub token: String,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown patient {0}")]
    UnknownPatient(PatientId),
    #[error("patient {0} is not enrolled")]
    PatientNotEnrolled(PatientId),
    #[error("patient {patient_id} already has active {kind:?} device {device_id}")]
    DuplicateBinding { patient_id: PatientId, kind: DeviceKind, device_id: DeviceId },
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("registry file {path}: {reason}")]
    Storage { path: PathBuf, reason: String },
}

/// Why a device failed authentication. Callers outside the gateway only see
/// that it failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthFailure {
    UnknownDevice,
    Inactive,
    BadToken,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct State {
    patients: BTreeMap<PatientId, PatientRecord>,
    devices: BTreeMap<DeviceId, DeviceBinding>,
}

pub struct Registry {
    state: RwLock<State>,
    path: Option<PathBuf>,
}

fn digest(token: &str) -> [u8; 32] {
    Sha256::digest(token.as_bytes()).into()
}

fn new_token() -> String {
    let mut bytes = [0u8; 32];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

impl Registry {
    pub fn in_memory() -> Self {
        Registry { state: RwLock::new(State::default()), path: None }
    }

    /// Loads `path` if it exists; later mutations are written back to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref().to_path_buf();
        let storage = |reason: String| RegistryError::Storage { path: path.clone(), reason };
        let state = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| storage(e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => State::default(),
            Err(e) => return Err(storage(e.to_string())),
        };
        Ok(Registry { state: RwLock::new(state), path: Some(path) })
    }

    fn persist(&self, state: &State) -> Result<(), RegistryError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let storage = |e: std::io::Error| RegistryError::Storage { path: path.clone(), reason: e.to_string() };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(storage)?;
        }
        let tmp = path.with_extension("json.tmp");
        let mut text = serde_json::to_string_pretty(state).expect("registry serializes");
        text.push('\n');
        fs::write(&tmp, text).map_err(storage)?;
        fs::rename(&tmp, path).map_err(storage)
    }

    fn mutate<R>(&self, f: impl FnOnce(&mut State) -> Result<R, RegistryError>) -> Result<R, RegistryError> {
        let mut state = self.state.write();
        let out = f(&mut state)?;
        self.persist(&state)?;
        Ok(out)
    }

    /// Inserts a patient, or refreshes the features of a known one while
    /// keeping its enrollment state and location mode.
    pub fn upsert_patient(&self, record: PatientRecord) -> Result<PatientRecord, RegistryError> {
        record.validate()?;
        self.mutate(|s| {
            let merged = match s.patients.get(&record.patient_id) {
                Some(old) => PatientRecord { enrollment: old.enrollment, location_mode: old.location_mode, ..record },
                None => record,
            };
            s.patients.insert(merged.patient_id.clone(), merged.clone());
            Ok(merged)
        })
    }

    pub fn patient(&self, id: &PatientId) -> Option<PatientRecord> {
        self.state.read().patients.get(id).cloned()
    }

    pub fn patients(&self) -> Vec<PatientRecord> {
        self.state.read().patients.values().cloned().collect()
    }

    fn with_patient(
        &self,
        id: &PatientId,
        f: impl FnOnce(&mut PatientRecord) -> Result<(), ValidationError>,
    ) -> Result<PatientRecord, RegistryError> {
        self.mutate(|s| {
            let p = s.patients.get_mut(id).ok_or_else(|| RegistryError::UnknownPatient(id.clone()))?;
            f(p)?;
            Ok(p.clone())
        })
    }

    /// Candidate → Enrolled.
    pub fn enroll(&self, id: &PatientId) -> Result<PatientRecord, RegistryError> {
        self.with_patient(id, PatientRecord::enroll)
    }

    /// Candidate → Declined.
    pub fn decline(&self, id: &PatientId) -> Result<PatientRecord, RegistryError> {
        self.with_patient(id, PatientRecord::decline)
    }

    pub fn set_location(&self, id: &PatientId, mode: LocationMode) -> Result<PatientRecord, RegistryError> {
        self.with_patient(id, |p| {
            p.location_mode = mode;
            Ok(())
        })
    }

    /// Binds a new device of `kind` to an enrolled patient.
    pub fn register_device(&self, kind: DeviceKind, patient_id: &PatientId) -> Result<Credential, RegistryError> {
        self.register_with_token(kind, patient_id, new_token())
    }

    fn register_with_token(
        &self,
        kind: DeviceKind,
        patient_id: &PatientId,
        token: String,
    ) -> Result<Credential, RegistryError> {
        self.mutate(|s| {
            let patient = s.patients.get(patient_id).ok_or_else(|| RegistryError::UnknownPatient(patient_id.clone()))?;
            if patient.enrollment != Enrollment::Enrolled {
                return Err(RegistryError::PatientNotEnrolled(patient_id.clone()));
            }
            if let Some(d) = s.devices.values().find(|d| d.active && d.kind == kind && &d.patient_id == patient_id) {
                return Err(RegistryError::DuplicateBinding {
                    patient_id: patient_id.clone(),
                    kind,
                    device_id: d.device_id.clone(),
                });
            }
            let base = format!("{patient_id}-{}", kind.suffix());
            let device_id = std::iter::once(base.clone())
                .chain((2..).map(|n| format!("{base}-{n}")))
                .map(DeviceId::new)
                .find(|id| !s.devices.contains_key(id))
                .expect("unbounded candidate ids");
            s.devices.insert(
                device_id.clone(),
                DeviceBinding {
                    device_id: device_id.clone(),
                    patient_id: patient_id.clone(),
                    kind,
                    token_sha256: hex::encode(digest(&token)),
                    active: true,
                },
            );
            Ok(Credential { device_id, patient_id: patient_id.clone(), kind, token })
        })
    }

    pub fn deactivate_device(&self, id: &DeviceId) -> Result<DeviceBinding, RegistryError> {
        self.mutate(|s| {
            let d = s.devices.get_mut(id).ok_or_else(|| RegistryError::UnknownDevice(id.clone()))?;
            d.active = false;
            Ok(d.clone())
        })
    }

    pub fn device(&self, id: &DeviceId) -> Option<DeviceBinding> {
        self.state.read().devices.get(id).cloned()
    }

    pub fn devices(&self) -> Vec<DeviceBinding> {
        self.state.read().devices.values().cloned().collect()
    }

    /// Checks a bearer token against the stored digest.
    pub fn authenticate(&self, id: &DeviceId, token: &str) -> Result<DeviceBinding, AuthFailure> {
        let presented = digest(token);
        let state = self.state.read();
        let Some(binding) = state.devices.get(id) else {
            return Err(AuthFailure::UnknownDevice);
        };
        let stored = hex::decode(&binding.token_sha256).unwrap_or_default();
        if !bool::from(stored.ct_eq(&presented)) {
            return Err(AuthFailure::BadToken);
        }
        if !binding.active {
            return Err(AuthFailure::Inactive);
        }
        Ok(binding.clone())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use predihealth::model::{ClinicalFeatures, EchoFeatures, Nyha, Sex};

    pub fn patient(id: &str) -> PatientRecord {
        PatientRecord {
            patient_id: PatientId::new(id),
            age: 70.0,
            sex: Sex::F,
            bmi: 27.0,
            clinical: ClinicalFeatures {
                diagnosis_primary: "ischemic".into(),
                diagnosis_secondary: None,
                hfpef: false,
                ef_percent: 35.0,
                nyha: Nyha::II,
                hypertension: true,
                dyslipidemia: false,
                diabetes: false,
                copd: false,
                beta_blocker: true,
                ace_sartan: true,
                anti_aldosterone: false,
            },
            echo: EchoFeatures::default(),
            enrollment: Enrollment::Candidate,
            location_mode: LocationMode::Home,
        }
    }

    fn enrolled(reg: &Registry, id: &str) {
        reg.upsert_patient(patient(id)).unwrap();
        reg.enroll(&PatientId::new(id)).unwrap();
    }

    #[test]
    fn watch_for_enrolled_patient() {
        let reg = Registry::in_memory();
        enrolled(&reg, "P1");
        let cred = reg.register_device(DeviceKind::Watch, &PatientId::new("P1")).unwrap();
        assert_eq!(cred.device_id.as_str(), "P1-watch");
        assert_eq!(cred.token.len(), 64);
        let d = reg.device(&cred.device_id).unwrap();
        assert!(d.active);
        assert_ne!(d.token_sha256, cred.token);
        assert_eq!(reg.authenticate(&cred.device_id, &cred.token).unwrap(), d);
    }

    #[test]
    fn candidate_cannot_stream() {
        let reg = Registry::in_memory();
        reg.upsert_patient(patient("P2")).unwrap();
        assert!(matches!(
            reg.register_device(DeviceKind::Scale, &PatientId::new("P2")),
            Err(RegistryError::PatientNotEnrolled(_))
        ));
        assert!(matches!(
            reg.register_device(DeviceKind::Scale, &PatientId::new("nobody")),
            Err(RegistryError::UnknownPatient(_))
        ));
        // enrollment walk: Candidate -> Enrolled unlocks registration
        reg.enroll(&PatientId::new("P2")).unwrap();
        assert!(reg.register_device(DeviceKind::Scale, &PatientId::new("P2")).is_ok());
        assert!(matches!(reg.enroll(&PatientId::new("P2")), Err(RegistryError::Invalid(_))));
    }

    #[test]
    fn one_active_device_per_kind() {
        let reg = Registry::in_memory();
        enrolled(&reg, "P1");
        let pid = PatientId::new("P1");
        let d1 = reg.register_device(DeviceKind::Watch, &pid).unwrap();
        assert!(matches!(
            reg.register_device(DeviceKind::Watch, &pid),
            Err(RegistryError::DuplicateBinding { device_id, .. }) if device_id == d1.device_id
        ));
        reg.deactivate_device(&d1.device_id).unwrap();
        let d2 = reg.register_device(DeviceKind::Watch, &pid).unwrap();
        assert_eq!(d2.device_id.as_str(), "P1-watch-2");
        assert_eq!(reg.authenticate(&d1.device_id, &d1.token), Err(AuthFailure::Inactive));
    }

    #[test]
    fn authentication_failures() {
        let reg = Registry::in_memory();
        enrolled(&reg, "P1");
        let cred = reg.register_device(DeviceKind::Cuff, &PatientId::new("P1")).unwrap();
        assert_eq!(reg.authenticate(&cred.device_id, "stale"), Err(AuthFailure::BadToken));
        assert_eq!(reg.authenticate(&DeviceId::new("ghost"), &cred.token), Err(AuthFailure::UnknownDevice));
    }

    #[test]
    fn upsert_keeps_enrollment() {
        let reg = Registry::in_memory();
        enrolled(&reg, "P1");
        let mut p = patient("P1");
        p.age = 71.0;
        let merged = reg.upsert_patient(p).unwrap();
        assert_eq!(merged.enrollment, Enrollment::Enrolled);
        assert_eq!(merged.age, 71.0);
        let mut bad = patient("P9");
        bad.age = 500.0;
        assert!(matches!(reg.upsert_patient(bad), Err(RegistryError::Invalid(_))));
    }

    #[test]
    fn file_backed_registry_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.json");
        let cred = {
            let reg = Registry::open(&path).unwrap();
            enrolled(&reg, "P1");
            reg.set_location(&PatientId::new("P1"), LocationMode::Away).unwrap();
            reg.register_device(DeviceKind::Watch, &PatientId::new("P1")).unwrap()
        };
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.contains(&cred.token));
        let reg = Registry::open(&path).unwrap();
        assert!(reg.authenticate(&cred.device_id, &cred.token).is_ok());
        let p = reg.patient(&PatientId::new("P1")).unwrap();
        assert_eq!((p.enrollment, p.location_mode), (Enrollment::Enrolled, LocationMode::Away));
    }

    #[test]
    fn metric_routing() {
        for m in Metric::all() {
            let owners: Vec<_> = DeviceKind::ALL.into_iter().filter(|k| k.accepts(m)).collect();
            assert_eq!(owners.len(), 1, "{m}");
            assert_eq!(DeviceKind::for_metric(m), owners[0]);
        }
        assert!(DeviceKind::Scale.accepts(Metric::Vital(VitalMetric::Weight)));
        assert!(!DeviceKind::Watch.accepts(Metric::Vital(VitalMetric::Weight)));
    }
}
