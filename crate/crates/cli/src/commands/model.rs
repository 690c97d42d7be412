use std::path::{Path, PathBuf};

use predihealth::model::PatientRecord;
use predihealth::stratify::{
    evaluate as score_labels, load_dataset, predict, roc_auc, train_stacked, Evaluation, FeatureRow, Objective,
    StratifyError, TrainConfig, TrainReport,
};
use predihealth::StackedModel;
use predihealth_gateway::{rank_candidates, EnrollmentQueue};
use serde::Serialize;

use super::{fmt_opt, read_json, read_text, write_file, write_json, Ctx};
use crate::args::{EvaluateArgs, ObjectiveArg, StratifyArgs, TrainArgs};
use crate::error::CliError;

fn metrics_row(name: &str, e: &Evaluation<f64>, auc: Option<f64>) -> String {
    let m = &e.metrics;
    format!(
        "{name:<10} {:>9} {:>9} {:>11} {:>8} {:>8} {:>7}   tp={} tn={} fp={} fn={}",
        fmt_opt(m.accuracy),
        fmt_opt(m.precision),
        fmt_opt(m.sensitivity),
        fmt_opt(m.f1),
        fmt_opt(m.dor),
        fmt_opt(auc),
        e.counts.tp,
        e.counts.tn,
        e.counts.fp,
        e.counts.fn_,
    )
}

const HEADER: &str = "           accuracy precision sensitivity       f1      dor     auc";

#[derive(Serialize)]
struct TrainOutput<'a> {
    model: &'a Path,
    seed: u64,
    meta: &'a predihealth::MetaModel,
    report: &'a TrainReport<f64>,
}

pub fn train(ctx: &Ctx, a: &TrainArgs) -> Result<(), CliError> {
    let raw = load_dataset(&a.data)?;
    let mut tc = TrainConfig { seed: ctx.cfg.seed, ..TrainConfig::default() };
    tc.objective = match a.objective {
        ObjectiveArg::F1 => Objective::MaxF1,
        ObjectiveArg::Sensitivity => match (a.precision_floor, tc.objective) {
            (Some(floor), _) => Objective::SensitivityAtPrecision { floor },
            (None, default) => default,
        },
    };
    if a.precision_floor.is_some() && a.objective == ObjectiveArg::F1 {
        return Err(CliError::Usage("--precision-floor only applies to --objective sensitivity".into()));
    }
    tc.folds = a.folds.unwrap_or(tc.folds);
    tc.test_fraction = a.test_fraction.unwrap_or(tc.test_fraction);
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    if tc.folds < 2 || !(0.0..1.0).contains(&tc.test_fraction) || tc.epochs == 0 {
        return Err(CliError::Usage("need --folds >= 2, --test-fraction in [0, 1) and --epochs >= 1".into()));
    }

    let (model, report) = train_stacked::<f64>(&raw, &tc)?;
    write_file(&a.out, model.to_json().as_bytes())?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    let out = TrainOutput { model: &a.out, seed: tc.seed, meta: &model.meta, report: &report };
    ctx.emit(&out, || {
        let mut lines = vec![format!(
            "trained on {} rows, held out {} ({} of {} dropped as incomplete)",
            report.train_rows,
            report.test_rows,
            report.drop.dropped.len(),
            report.drop.input_rows
        )];
        lines.push(format!(
            "blend: w_clinical={:.4} w_echo={:.4} theta={:.4}{}",
            model.meta.w_clinical,
            model.meta.w_echo,
            model.meta.theta,
            if model.meta.feasible { "" } else { " (precision floor not met; best-F1 fallback)" }
        ));
        match &report.held_out {
            Some(h) => {
                lines.push(HEADER.into());
                lines.push(metrics_row("stacked", &h.stacked, h.auc_stacked));
                lines.push(metrics_row("clinical", &h.clinical, h.auc_clinical));
                lines.push(metrics_row("echo", &h.echo, h.auc_echo));
            }
            None => lines.push("no held-out rows; metrics not computed".into()),
        }
        lines.push(format!("model written to {}", a.out.display()));
        lines.join("\n")
    })
}

fn load_model(ctx: &Ctx, flag: &Option<PathBuf>) -> Result<StackedModel, CliError> {
    let path = flag.as_ref().or(ctx.cfg.model.as_ref()).ok_or_else(|| {
        CliError::Usage("no model given; pass --model or set `model` in the config".into())
    })?;
    StackedModel::from_json(&read_text(path)?)
        .map_err(|e| CliError::Input { path: path.clone(), reason: e.to_string() })
}

#[derive(Serialize)]
struct EvaluateOutput {
    rows: usize,
    scored: usize,
    skipped: Vec<String>,
    evaluation: Evaluation<f64>,
    auc: Option<f64>,
}

pub fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<(), CliError> {
    let model = load_model(ctx, &a.model)?;
    let raw = load_dataset(&a.data)?;
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    for r in &raw.rows {
        match predict(&model, &r.row) {
            Ok(p) => {
                predicted.push(p.at_risk);
                scores.push(p.probability);
                truth.push(r.label);
            }
            Err(StratifyError::MissingFeatures(_)) => skipped.push(r.row.patient_id.clone()),
            Err(e) => return Err(e.into()),
        }
    }
    if predicted.is_empty() {
        return Err(StratifyError::AllRowsDropped.into());
    }
    let evaluation = score_labels::<f64>(&predicted, &truth)?;
    let out = EvaluateOutput { rows: raw.len(), scored: predicted.len(), skipped, evaluation, auc: roc_auc(&scores, &truth) };
    ctx.emit(&out, || {
        format!(
            "scored {} of {} rows\n{HEADER}\n{}",
            out.scored,
            out.rows,
            metrics_row("stacked", &out.evaluation, out.auc)
        )
    })
}

fn candidate_rows(path: &Path) -> Result<Vec<(FeatureRow, Option<predihealth::model::Enrollment>)>, CliError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let records: Vec<PatientRecord> = read_json(path)?;
        Ok(records.iter().map(|p| (FeatureRow::from(p), Some(p.enrollment))).collect())
    } else {
        Ok(load_dataset(path)?.rows.into_iter().map(|r| (r.row, None)).collect())
    }
}

pub fn stratify(ctx: &Ctx, a: &StratifyArgs) -> Result<(), CliError> {
    let model = load_model(ctx, &a.model)?;
    let mut queue: EnrollmentQueue = rank_candidates(&model, &candidate_rows(&a.patients)?);
    if let Some(k) = a.top {
        queue.items.truncate(k);
    }
    if let Some(path) = &a.out {
        write_json(path, &queue)?;
    }
    ctx.emit(&queue, || {
        let mut lines = vec![format!("{:>5}  {:<12} {:>8}  {:<7}  top factors", "rank", "patient", "p(risk)", "at risk")];
        for i in &queue.items {
            let factors: Vec<String> =
                i.highlights.iter().map(|h| format!("{} {:+.2}", h.column, h.contribution)).collect();
            lines.push(format!(
                "{:>5}  {:<12} {:>8.4}  {:<7}  {}",
                i.rank,
                i.patient_id,
                i.probability,
                if i.at_risk { "yes" } else { "no" },
                factors.join(", ")
            ));
        }
        for u in &queue.unscorable {
            lines.push(format!("    -  {:<12} unscorable, missing {}", u.patient_id, u.missing.join(", ")));
        }
        lines.join("\n")
    })
}
