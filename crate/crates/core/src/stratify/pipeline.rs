//! End-to-end training, prediction and cohort ranking.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{FeatureRow, RawDataset};
use super::meta::{train_meta, train_meta_over, MetaModel, Objective};
use super::metrics::{evaluate, roc_auc, Evaluation};
use super::preprocess::{block_columns, drop_incomplete, DropReport, FeatureMatrix, Preprocessor};
use super::schema::Block;
use super::specialist::{train_specialist_traced, SpecialistModel};
use super::StratifyError;
use crate::scalar::Scalar;

pub const MODEL_SCHEMA: &str = "predihealth.stacked-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub objective: Objective,
    /// Folds used to produce out-of-fold specialist probabilities for the meta-model.
    pub folds: usize,
    /// Share of each class held out for evaluation.
    pub test_fraction: f64,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            objective: Objective::default(),
            folds: 5,
            test_fraction: 0.2,
            epochs: super::specialist::DEFAULT_EPOCHS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedModel<T> {
    pub schema: String,
    pub seed: u64,
    pub objective: Objective,
    pub preprocessor: Preprocessor<T>,
    pub clinical: SpecialistModel<T>,
    pub echo: SpecialistModel<T>,
    pub meta: MetaModel<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct HeldOut<T> {
    pub stacked: Evaluation<T>,
    /// Clinical specialist alone at its own best operating point.
    pub clinical: Evaluation<T>,
    pub echo: Evaluation<T>,
    pub auc_stacked: Option<f64>,
    pub auc_clinical: Option<f64>,
    pub auc_echo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct TrainReport<T> {
    pub drop: DropReport,
    pub train_rows: usize,
    pub test_rows: usize,
    pub meta_feasible: bool,
    /// `None` when nothing was held out.
    pub held_out: Option<HeldOut<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction<T> {
    pub probability: T,
    pub at_risk: bool,
    pub p_clinical: T,
    pub p_echo: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPatient<T> {
    pub patient_id: String,
    pub probability: T,
    pub at_risk: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StratifiedCohort<T> {
    pub ranked: Vec<RankedPatient<T>>,
    /// Patients with missing features, with the names of what is missing.
    pub unscorable: Vec<(String, Vec<String>)>,
}

fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Stratified split of row indices into (train, test), both ascending.
fn split(labels: &[bool], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Stratified fold assignment.
fn folds(labels: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let mut fold = vec![0; labels.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    fold
}

fn pick<T: Copy>(v: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&i| v[i]).collect()
}

fn fit_block<T: Scalar>(
    m: &FeatureMatrix<T>,
    labels: &[bool],
    block: Block,
    seed: u64,
    epochs: usize,
) -> Result<SpecialistModel<T>, StratifyError> {
    let (data, width) = m.block(block);
    train_specialist_traced(&data, width, labels, block, seed, epochs).map(|(s, _)| s)
}

fn block_proba<T: Scalar>(model: &SpecialistModel<T>, m: &FeatureMatrix<T>) -> Vec<T> {
    let (data, _) = m.block(model.kind);
    model.predict_block(&data)
}

/// Out-of-fold specialist probabilities over the training rows.
fn out_of_fold<T: Scalar>(
    m: &FeatureMatrix<T>,
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<(Vec<T>, Vec<T>), StratifyError> {
    let k = cfg.folds.max(2);
    let fold = folds(labels, k, cfg.seed);
    let mut p_c = vec![T::zero(); labels.len()];
    let mut p_e = vec![T::zero(); labels.len()];
    for f in 0..k {
        let fit_rows: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] != f).collect();
        let held: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] == f).collect();
        if held.is_empty() {
            continue;
        }
        let fit_m = m.select_rows(&fit_rows);
        let fit_y = pick(labels, &fit_rows);
        let held_m = m.select_rows(&held);
        let seed = derive_seed(cfg.seed, 10 + f as u64);
        let c = fit_block(&fit_m, &fit_y, Block::Clinical, seed, cfg.epochs)?;
        let e = fit_block(&fit_m, &fit_y, Block::Echo, seed, cfg.epochs)?;
        for ((i, pc), pe) in held.iter().zip(block_proba(&c, &held_m)).zip(block_proba(&e, &held_m)) {
            p_c[*i] = pc;
            p_e[*i] = pe;
        }
    }
    Ok((p_c, p_e))
}

fn auc<T: Scalar>(scores: &[T], truth: &[bool]) -> Option<f64> {
    roc_auc(scores, truth).map(Scalar::as_f64)
}

/// Drops incomplete rows, splits, fits the encoding on the training split,
/// trains both specialists and the meta-model, and scores the held-out rows.
pub fn train_stacked<T: Scalar>(
    raw: &RawDataset,
    cfg: &TrainConfig,
) -> Result<(StackedModel<T>, TrainReport<T>), StratifyError> {
    if raw.is_empty() {
        return Err(StratifyError::EmptyDataset);
    }
    let (kept, drop) = drop_incomplete(raw);
    if kept.is_empty() {
        return Err(StratifyError::AllRowsDropped);
    }
    let labels: Vec<bool> = kept.iter().map(|r| r.label).collect();
    let (train_idx, test_idx) = split(&labels, cfg.test_fraction, cfg.seed);
    let train_rows: Vec<&FeatureRow> = train_idx.iter().map(|&i| &kept[i].row).collect();
    let test_rows: Vec<&FeatureRow> = test_idx.iter().map(|&i| &kept[i].row).collect();
    let y_train = pick(&labels, &train_idx);
    let y_test = pick(&labels, &test_idx);

    let pre = Preprocessor::<T>::fit(&train_rows)?;
    let m_train = pre.transform(&train_rows)?;

    let (oof_c, oof_e) = out_of_fold(&m_train, &y_train, cfg)?;
    let meta_fit = train_meta(&oof_c, &oof_e, &y_train, cfg.objective)?;
    let seed = derive_seed(cfg.seed, 3);
    let clinical = fit_block(&m_train, &y_train, Block::Clinical, seed, cfg.epochs)?;
    let echo = fit_block(&m_train, &y_train, Block::Echo, seed, cfg.epochs)?;

    let model = StackedModel {
        schema: MODEL_SCHEMA.to_owned(),
        seed: cfg.seed,
        objective: cfg.objective,
        preprocessor: pre,
        clinical,
        echo,
        meta: meta_fit.model.clone(),
    };

    let held_out = if test_rows.is_empty() {
        None
    } else {
        let m_test = model.preprocessor.transform(&test_rows)?;
        let p_c = block_proba(&model.clinical, &m_test);
        let p_e = block_proba(&model.echo, &m_test);
        let blended: Vec<T> = p_c.iter().zip(&p_e).map(|(c, e)| model.meta.blend(*c, *e)).collect();
        let stacked_pred: Vec<bool> = blended.iter().map(|p| model.meta.label(*p)).collect();
        // each specialist alone, with its threshold chosen the same way
        let solo = |w: T, probs: &[T]| -> Result<Evaluation<T>, StratifyError> {
            let fit = train_meta_over(&oof_c, &oof_e, &y_train, cfg.objective, &[w])?;
            let pred: Vec<bool> = probs.iter().map(|p| *p >= fit.model.theta).collect();
            evaluate(&pred, &y_test)
        };
        Some(HeldOut {
            stacked: evaluate(&stacked_pred, &y_test)?,
            clinical: solo(T::one(), &p_c)?,
            echo: solo(T::zero(), &p_e)?,
            auc_stacked: auc(&blended, &y_test),
            auc_clinical: auc(&p_c, &y_test),
            auc_echo: auc(&p_e, &y_test),
        })
    };

    let report = TrainReport {
        drop,
        train_rows: train_idx.len(),
        test_rows: test_idx.len(),
        meta_feasible: meta_fit.model.feasible,
        held_out,
    };
    Ok((model, report))
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> StackedModel<T> {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, StratifyError> {
        let model: Self = serde_json::from_str(text).map_err(|e| StratifyError::Artifact(e.to_string()))?;
        if model.schema != MODEL_SCHEMA {
            return Err(StratifyError::Artifact(format!("unsupported schema `{}`", model.schema)));
        }
        let cols = &model.preprocessor.columns;
        for s in [&model.clinical, &model.echo] {
            if s.width() != block_columns(cols, s.kind).len() {
                return Err(StratifyError::Artifact(format!("{:?} weights do not match its feature block", s.kind)));
            }
        }
        Ok(model)
    }
}

pub fn predict<T: Scalar>(model: &StackedModel<T>, row: &FeatureRow) -> Result<Prediction<T>, StratifyError> {
    let x = model.preprocessor.encode_row(row)?;
    let cols = &model.preprocessor.columns;
    let part = |block| block_columns(cols, block).into_iter().map(|j| x[j]).collect::<Vec<T>>();
    let p_clinical = model.clinical.predict_proba(&part(Block::Clinical));
    let p_echo = model.echo.predict_proba(&part(Block::Echo));
    let probability = model.meta.blend(p_clinical, p_echo);
    Ok(Prediction { probability, at_risk: model.meta.label(probability), p_clinical, p_echo })
}

/// One encoded column's share of a patient's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight<T> {
    pub column: String,
    /// Meta weight times specialist weight times the encoded value, summed
    /// over the blocks that see the column. Positive pushes toward at-risk.
    pub contribution: T,
}

/// The `k` columns with the largest absolute contribution, largest first.
pub fn highlights<T: Scalar>(
    model: &StackedModel<T>,
    row: &FeatureRow,
    k: usize,
) -> Result<Vec<Highlight<T>>, StratifyError> {
    let x = model.preprocessor.encode_row(row)?;
    let cols = &model.preprocessor.columns;
    let mut contrib = vec![T::zero(); cols.len()];
    for (spec, w) in [(&model.clinical, model.meta.w_clinical), (&model.echo, model.meta.w_echo)] {
        for (j, beta) in block_columns(cols, spec.kind).into_iter().zip(&spec.weights) {
            contrib[j] += w * *beta * x[j];
        }
    }
    let mut out: Vec<Highlight<T>> = cols
        .iter()
        .zip(contrib)
        .map(|(c, contribution)| Highlight { column: c.name.clone(), contribution })
        .collect();
    out.sort_by(|a, b| {
        b.contribution
            .abs()
            .partial_cmp(&a.contribution.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.column.cmp(&b.column))
    });
    out.truncate(k);
    Ok(out)
}

/// Sorts scored patients by descending probability, ties by id.
pub fn rank<T: Scalar>(mut ranked: Vec<RankedPatient<T>>) -> Vec<RankedPatient<T>> {
    ranked.sort_by(|a, b| {
        b.probability
            .partial_cmp(&a.probability)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.patient_id.cmp(&b.patient_id))
    });
    ranked
}

pub fn stratify_cohort<T: Scalar>(model: &StackedModel<T>, patients: &[FeatureRow]) -> StratifiedCohort<T> {
    let mut ranked = Vec::with_capacity(patients.len());
    let mut unscorable = Vec::new();
    for p in patients {
        match predict(model, p) {
            Ok(pred) => ranked.push(RankedPatient {
                patient_id: p.patient_id.clone(),
                probability: pred.probability,
                at_risk: pred.at_risk,
            }),
            Err(StratifyError::MissingFeatures(m)) => unscorable.push((p.patient_id.clone(), m)),
            Err(e) => unscorable.push((p.patient_id.clone(), vec![e.to_string()])),
        }
    }
    unscorable.sort();
    StratifiedCohort { ranked: rank(ranked), unscorable }
}
