use serde::{Deserialize, Serialize};

use super::{PatientId, ValidationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Nyha {
    I,
    II,
    III,
    IV,
}

impl Nyha {
    pub const ALL: [Nyha; 4] = [Nyha::I, Nyha::II, Nyha::III, Nyha::IV];

    pub fn as_str(self) -> &'static str {
        match self {
            Nyha::I => "I",
            Nyha::II => "II",
            Nyha::III => "III",
            Nyha::IV => "IV",
        }
    }

    pub fn parse(s: &str) -> Option<Nyha> {
        Nyha::ALL.into_iter().find(|n| n.as_str() == s.trim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Enrollment {
    Candidate,
    Enrolled,
    Declined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocationMode {
    Home,
    Away,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalFeatures {
    pub diagnosis_primary: String,
    #[serde(default)]
    pub diagnosis_secondary: Option<String>,
    pub hfpef: bool,
    pub ef_percent: f64,
    pub nyha: Nyha,
    pub hypertension: bool,
    pub dyslipidemia: bool,
    pub diabetes: bool,
    pub copd: bool,
    pub beta_blocker: bool,
    pub ace_sartan: bool,
    pub anti_aldosterone: bool,
}

/// Echocardiographic and laboratory block. `None` marks a missing value,
/// which is never the same thing as zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EchoFeatures {
    pub posterior_wall_mm: Option<f64>,
    pub septum_mm: Option<f64>,
    pub lves_diam_mm: Option<f64>,
    pub lved_diam_mm: Option<f64>,
    pub rv_diam_mm: Option<f64>,
    pub lvmi_g_m2: Option<f64>,
    /// Diameter or volume depending on the echo lab; unitless here.
    pub left_atrium: Option<f64>,
    pub tapse_mm: Option<f64>,
    pub radial_strain: Option<f64>,
    pub lbbb: bool,
    pub rbbb: bool,
    pub afib: bool,
    pub flutter: bool,
    pub pacemaker: bool,
    pub nt_probnp_pg_ml: Option<f64>,
    pub creatinine_mg_dl: Option<f64>,
    pub glucose_mg_dl: Option<f64>,
    pub hb_g_dl: Option<f64>,
    /// Same measurement as `ClinicalFeatures::ef_percent` when present.
    pub ef_percent: Option<f64>,
}

impl EchoFeatures {
    fn numeric_fields(&self) -> [(&'static str, Option<f64>); 14] {
        [
            ("posterior_wall_mm", self.posterior_wall_mm),
            ("septum_mm", self.septum_mm),
            ("lves_diam_mm", self.lves_diam_mm),
            ("lved_diam_mm", self.lved_diam_mm),
            ("rv_diam_mm", self.rv_diam_mm),
            ("lvmi_g_m2", self.lvmi_g_m2),
            ("left_atrium", self.left_atrium),
            ("tapse_mm", self.tapse_mm),
            ("radial_strain", self.radial_strain),
            ("nt_probnp_pg_ml", self.nt_probnp_pg_ml),
            ("creatinine_mg_dl", self.creatinine_mg_dl),
            ("glucose_mg_dl", self.glucose_mg_dl),
            ("hb_g_dl", self.hb_g_dl),
            ("ef_percent", self.ef_percent),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: PatientId,
    pub age: f64,
    pub sex: Sex,
    pub bmi: f64,
    pub clinical: ClinicalFeatures,
    pub echo: EchoFeatures,
    pub enrollment: Enrollment,
    pub location_mode: LocationMode,
}

impl PatientRecord {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let field = |name: &'static str, value: f64, lo: f64, hi: f64| {
            if value.is_finite() && value >= lo && value <= hi {
                Ok(())
            } else {
                Err(ValidationError::InvalidField { field: name, value })
            }
        };
        field("age", self.age, 18.0, 120.0)?;
        field("bmi", self.bmi, 10.0, 80.0)?;
        field("ef_percent", self.clinical.ef_percent, 5.0, 85.0)?;
        for (name, value) in self.echo.numeric_fields() {
            if let Some(v) = value {
                field(name, v, 0.0, f64::MAX)?;
            }
        }
        if let Some(ef) = self.echo.ef_percent {
            field("ef_percent", ef, 5.0, 85.0)?;
        }
        Ok(())
    }

    /// Candidate → Enrolled.
    pub fn enroll(&mut self) -> Result<(), ValidationError> {
        self.transition(Enrollment::Enrolled)
    }

    /// Candidate → Declined.
    pub fn decline(&mut self) -> Result<(), ValidationError> {
        self.transition(Enrollment::Declined)
    }

    fn transition(&mut self, to: Enrollment) -> Result<(), ValidationError> {
        match self.enrollment {
            Enrollment::Candidate => {
                self.enrollment = to;
                Ok(())
            }
            from => Err(ValidationError::EnrollmentTransition { from, to }),
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn patient(id: &str) -> PatientRecord {
        PatientRecord {
            patient_id: PatientId::new(id),
            age: 71.0,
            sex: Sex::F,
            bmi: 27.4,
            clinical: ClinicalFeatures {
                diagnosis_primary: "I50.2".into(),
                diagnosis_secondary: None,
                hfpef: false,
                ef_percent: 35.0,
                nyha: Nyha::II,
                hypertension: true,
                dyslipidemia: false,
                diabetes: true,
                copd: false,
                beta_blocker: true,
                ace_sartan: true,
                anti_aldosterone: false,
            },
            echo: EchoFeatures {
                posterior_wall_mm: Some(10.0),
                septum_mm: Some(11.0),
                lves_diam_mm: Some(45.0),
                lved_diam_mm: Some(60.0),
                rv_diam_mm: Some(30.0),
                lvmi_g_m2: Some(120.0),
                left_atrium: Some(44.0),
                tapse_mm: Some(17.0),
                radial_strain: Some(25.0),
                nt_probnp_pg_ml: Some(1800.0),
                creatinine_mg_dl: Some(1.1),
                glucose_mg_dl: Some(110.0),
                hb_g_dl: Some(12.5),
                ef_percent: Some(35.0),
                ..Default::default()
            },
            enrollment: Enrollment::Candidate,
            location_mode: LocationMode::Home,
        }
    }
}
