//! Synthetic patient cohorts.
//!
//! Every feature is drawn independently from a fixed distribution (normal,
//! clamped to a plausible range, or Bernoulli). A latent risk
//!
//! ```text
//! latent = sum(coefficient * (x - center) / scale) + noise
//! ```
//!
//! is built from a handful of clinical terms and a disjoint handful of echo
//! terms, and the top `prevalence * n` latents are labeled at risk. The terms
//! are returned with the cohort.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::model::{
    ClinicalFeatures, EchoFeatures, Enrollment, LocationMode, Nyha, PatientId, PatientRecord, Sex,
};
use crate::stratify::{Block, FeatureRow, LabeledRow, RawDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n: usize,
    pub prevalence: f64,
    pub seed: u64,
    /// Rows that get one echo measurement blanked.
    pub missing_rows: usize,
    /// Standard deviation of the clinical part of the latent.
    pub clinical_signal: f64,
    pub echo_signal: f64,
    pub noise: f64,
    pub id_prefix: String,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n: 1000,
            prevalence: 0.4,
            seed: 0,
            missing_rows: 0,
            clinical_signal: 1.8,
            echo_signal: 1.2,
            noise: 0.3,
            id_prefix: "P".into(),
        }
    }
}

/// One additive term of the latent risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTerm {
    /// Dataset column name. For `NYHA` the value is the class index (I = 0).
    pub feature: String,
    pub block: Block,
    pub coefficient: f64,
    pub center: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSignal {
    pub terms: Vec<PlantedTerm>,
    pub noise_sd: f64,
    /// Smallest latent labeled at risk.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    pub labels: Vec<bool>,
    pub signal: PlantedSignal,
    /// Indices of rows with a blanked measurement.
    pub incomplete: Vec<usize>,
}

impl Cohort {
    pub fn dataset(&self) -> RawDataset {
        let rows = self
            .patients
            .iter()
            .zip(&self.labels)
            .map(|(p, &label)| LabeledRow { row: FeatureRow::from(p), label, line: None })
            .collect();
        RawDataset { rows }
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }
}

const NYHA_P: [f64; 4] = [0.25, 0.40, 0.25, 0.10];
const DIAGNOSES: [&str; 4] = ["I50.0", "I50.1", "I50.9", "I42.0"];
const SECONDARY: [&str; 3] = ["I10", "I25.1", "E11.9"];
/// Measurements blanked, in rotation, on incomplete rows.
const BLANKABLE: [&str; 6] = ["TAPSE", "RS", "LVMI", "NT-proBNP", "Hb", "ASx"];

struct Gauss {
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
}

const fn g(mean: f64, sd: f64, lo: f64, hi: f64) -> Gauss {
    Gauss { mean, sd, lo, hi }
}

const AGE: Gauss = g(70.0, 10.0, 30.0, 95.0);
const BMI: Gauss = g(27.0, 4.5, 16.0, 50.0);
const EF: Gauss = g(45.0, 12.0, 15.0, 75.0);
const POST_WALL: Gauss = g(10.0, 1.5, 6.0, 16.0);
const SEPTUM: Gauss = g(11.0, 1.8, 6.0, 18.0);
const LVES: Gauss = g(40.0, 8.0, 20.0, 70.0);
const LVED: Gauss = g(55.0, 7.0, 35.0, 80.0);
const RV: Gauss = g(30.0, 4.0, 18.0, 45.0);
const LVMI: Gauss = g(115.0, 25.0, 50.0, 220.0);
const LA: Gauss = g(42.0, 6.0, 25.0, 65.0);
const TAPSE: Gauss = g(19.0, 4.0, 6.0, 32.0);
const RS: Gauss = g(30.0, 8.0, 5.0, 60.0);
const CREAT: Gauss = g(1.2, 0.35, 0.4, 4.0);
const GLUCOSE: Gauss = g(110.0, 25.0, 60.0, 300.0);
const HB: Gauss = g(13.0, 1.6, 7.0, 18.0);

const P_DIABETES: f64 = 0.3;
const P_COPD: f64 = 0.15;

fn draw(rng: &mut ChaCha8Rng, d: &Gauss) -> f64 {
    let n = Normal::new(d.mean, d.sd).expect("valid normal");
    let v: f64 = n.sample(rng);
    (v.clamp(d.lo, d.hi) * 10.0).round() / 10.0
}

fn bern_term(feature: &str, block: Block, coefficient: f64, p: f64) -> PlantedTerm {
    PlantedTerm { feature: feature.into(), block, coefficient, center: p, scale: (p * (1.0 - p)).sqrt() }
}

fn gauss_term(feature: &str, block: Block, coefficient: f64, d: &Gauss) -> PlantedTerm {
    PlantedTerm { feature: feature.into(), block, coefficient, center: d.mean, scale: d.sd }
}

/// Raw coefficients rescaled so each block's contribution has the requested
/// standard deviation (terms are independent and standardized).
fn planted_terms(spec: &CohortSpec) -> Vec<PlantedTerm> {
    let nyha_mean: f64 = NYHA_P.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let nyha_var: f64 = NYHA_P.iter().enumerate().map(|(k, p)| (k as f64 - nyha_mean).powi(2) * p).sum();
    let mut clinical = vec![
        gauss_term("Age", Block::Clinical, 0.9, &AGE),
        gauss_term("BMI", Block::Clinical, 0.6, &BMI),
        PlantedTerm {
            feature: "NYHA".into(),
            block: Block::Clinical,
            coefficient: 1.0,
            center: nyha_mean,
            scale: nyha_var.sqrt(),
        },
        bern_term("Diabetes", Block::Clinical, 0.5, P_DIABETES),
        bern_term("COPD", Block::Clinical, 0.45, P_COPD),
    ];
    let mut echo = vec![
        gauss_term("TAPSE", Block::Echo, -1.0, &TAPSE),
        gauss_term("LVED_DIAM", Block::Echo, 0.7, &LVED),
        gauss_term("LVMI", Block::Echo, 0.6, &LVMI),
        gauss_term("Creatinine", Block::Echo, 0.6, &CREAT),
        gauss_term("ASx", Block::Echo, 0.5, &LA),
    ];
    for (terms, sd) in [(&mut clinical, spec.clinical_signal), (&mut echo, spec.echo_signal)] {
        let norm = terms.iter().map(|t| t.coefficient * t.coefficient).sum::<f64>().sqrt();
        for t in terms.iter_mut() {
            t.coefficient *= sd / norm;
        }
    }
    clinical.into_iter().chain(echo).collect()
}

fn term_value(p: &PatientRecord, feature: &str) -> Option<f64> {
    let flag = |b: bool| Some(if b { 1.0 } else { 0.0 });
    match feature {
        "Age" => Some(p.age),
        "BMI" => Some(p.bmi),
        "NYHA" => Nyha::ALL.iter().position(|n| *n == p.clinical.nyha).map(|k| k as f64),
        "Diabetes" => flag(p.clinical.diabetes),
        "COPD" => flag(p.clinical.copd),
        "TAPSE" => p.echo.tapse_mm,
        "LVED_DIAM" => p.echo.lved_diam_mm,
        "LVMI" => p.echo.lvmi_g_m2,
        "Creatinine" => p.echo.creatinine_mg_dl,
        "ASx" => p.echo.left_atrium,
        _ => None,
    }
}

impl PlantedSignal {
    /// Noise-free latent for a complete patient.
    pub fn score(&self, p: &PatientRecord) -> Option<f64> {
        self.terms
            .iter()
            .map(|t| term_value(p, &t.feature).map(|x| t.coefficient * (x - t.center) / t.scale))
            .sum()
    }
}

fn gen_patient(id: String, rng: &mut ChaCha8Rng) -> PatientRecord {
    let nyha = {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = NYHA_P.len() - 1;
        for (i, p) in NYHA_P.iter().enumerate() {
            acc += p;
            if u < acc {
                k = i;
                break;
            }
        }
        Nyha::ALL[k]
    };
    let age = draw(rng, &AGE);
    let bmi = draw(rng, &BMI);
    let sex = if rng.random_bool(0.6) { Sex::M } else { Sex::F };
    let ef = draw(rng, &EF);
    let diagnosis_primary = DIAGNOSES[rng.random_range(0..DIAGNOSES.len())].to_owned();
    let diagnosis_secondary =
        rng.random_bool(0.3).then(|| SECONDARY[rng.random_range(0..SECONDARY.len())].to_owned());
    let clinical = ClinicalFeatures {
        diagnosis_primary,
        diagnosis_secondary,
        hfpef: ef >= 50.0,
        ef_percent: ef,
        nyha,
        hypertension: rng.random_bool(0.6),
        dyslipidemia: rng.random_bool(0.45),
        diabetes: rng.random_bool(P_DIABETES),
        copd: rng.random_bool(P_COPD),
        beta_blocker: rng.random_bool(0.75),
        ace_sartan: rng.random_bool(0.7),
        anti_aldosterone: rng.random_bool(0.4),
    };
    let bnp = LogNormal::new(900f64.ln(), 0.8).expect("valid lognormal");
    let echo = EchoFeatures {
        posterior_wall_mm: Some(draw(rng, &POST_WALL)),
        septum_mm: Some(draw(rng, &SEPTUM)),
        lves_diam_mm: Some(draw(rng, &LVES)),
        lved_diam_mm: Some(draw(rng, &LVED)),
        rv_diam_mm: Some(draw(rng, &RV)),
        lvmi_g_m2: Some(draw(rng, &LVMI)),
        left_atrium: Some(draw(rng, &LA)),
        tapse_mm: Some(draw(rng, &TAPSE)),
        radial_strain: Some(draw(rng, &RS)),
        nt_probnp_pg_ml: Some((bnp.sample(rng).clamp(20.0, 35_000.0)).round()),
        creatinine_mg_dl: Some((draw(rng, &CREAT) * 100.0).round() / 100.0),
        glucose_mg_dl: Some(draw(rng, &GLUCOSE)),
        hb_g_dl: Some(draw(rng, &HB)),
        ef_percent: Some(ef),
        lbbb: rng.random_bool(0.15),
        rbbb: rng.random_bool(0.10),
        afib: rng.random_bool(0.30),
        flutter: rng.random_bool(0.05),
        pacemaker: rng.random_bool(0.12),
    };
    PatientRecord {
        patient_id: PatientId::new(id),
        age,
        sex,
        bmi,
        clinical,
        echo,
        enrollment: Enrollment::Candidate,
        location_mode: LocationMode::Home,
    }
}

fn blank(p: &mut PatientRecord, feature: &str) {
    let e = &mut p.echo;
    let slot = match feature {
        "TAPSE" => &mut e.tapse_mm,
        "RS" => &mut e.radial_strain,
        "LVMI" => &mut e.lvmi_g_m2,
        "NT-proBNP" => &mut e.nt_probnp_pg_ml,
        "Hb" => &mut e.hb_g_dl,
        _ => &mut e.left_atrium,
    };
    *slot = None;
}

pub fn gen_cohort(n: usize, prevalence: f64, seed: u64) -> Result<Cohort, SimError> {
    gen_cohort_with(&CohortSpec { n, prevalence, seed, ..CohortSpec::default() })
}

pub fn gen_cohort_with(spec: &CohortSpec) -> Result<Cohort, SimError> {
    if spec.n == 0 {
        return Err(SimError::InvalidSpec("n must be at least 1".into()));
    }
    if !(spec.prevalence > 0.0 && spec.prevalence < 1.0) {
        return Err(SimError::InvalidSpec(format!("prevalence {} not in (0, 1)", spec.prevalence)));
    }
    if spec.missing_rows > spec.n {
        return Err(SimError::InvalidSpec("missing_rows exceeds n".into()));
    }
    if [spec.clinical_signal, spec.echo_signal, spec.noise].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(SimError::InvalidSpec("signal and noise scales must be finite and non-negative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.n.to_string().len().max(4);
    let mut patients: Vec<PatientRecord> =
        (0..spec.n).map(|i| gen_patient(format!("{}{:0width$}", spec.id_prefix, i + 1), &mut rng)).collect();

    let terms = planted_terms(spec);
    let signal = PlantedSignal { terms, noise_sd: spec.noise, threshold: 0.0 };
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let latent: Vec<f64> = patients
        .iter()
        .map(|p| signal.score(p).expect("complete patient") + if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 })
        .collect();

    let k = ((spec.prevalence * spec.n as f64).round() as usize).clamp(usize::from(spec.n > 1), spec.n);
    let mut order: Vec<usize> = (0..spec.n).collect();
    order.sort_by(|&a, &b| latent[b].total_cmp(&latent[a]).then(a.cmp(&b)));
    let mut labels = vec![false; spec.n];
    for &i in &order[..k] {
        labels[i] = true;
    }
    let threshold = order[..k].last().map_or(f64::INFINITY, |&i| latent[i]);

    let mut incomplete: Vec<usize> = (0..spec.n).collect();
    incomplete.shuffle(&mut rng);
    incomplete.truncate(spec.missing_rows);
    incomplete.sort_unstable();
    for (j, &i) in incomplete.iter().enumerate() {
        blank(&mut patients[i], BLANKABLE[j % BLANKABLE.len()]);
    }

    Ok(Cohort { patients, labels, signal: PlantedSignal { threshold, ..signal }, incomplete })
}
