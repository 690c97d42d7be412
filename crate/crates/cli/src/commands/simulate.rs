use std::collections::BTreeSet;
use std::path::Path;

use chrono::{DateTime, Utc};
use predihealth::model::{
    ClinicalFeatures, EchoFeatures, Enrollment, LocationMode, Nyha, PatientId, PatientRecord, Sample, Sex,
};
use predihealth::sim::{gen_cohort_with, gen_trace, CohortSpec, EpisodeKind, EpisodeSpec, TraceSpec};
use predihealth::stratify::write_dataset;
use predihealth_gateway::replay::{kinds_for, provision};
use predihealth_gateway::{replay, IngestTarget, ReplayReport, Tokens};
use serde_json::json;

use super::export::instant;
use super::{read_json, read_text, write_file, write_json, Ctx};
use crate::args::{CadenceArgs, CohortArgs, SimulateCommand, TraceArgs};
use crate::error::CliError;

pub async fn run(ctx: &Ctx, what: SimulateCommand) -> Result<(), CliError> {
    match what {
        SimulateCommand::Cohort(a) => cohort(ctx, &a),
        SimulateCommand::Trace(a) => trace(ctx, &a).await,
    }
}

/// `--seed`, else the spec file's own seed, else the configured seed.
fn seed(ctx: &Ctx, from_spec: Option<u64>) -> u64 {
    ctx.seed_flag.or(from_spec).unwrap_or(ctx.cfg.seed)
}

fn cohort(ctx: &Ctx, a: &CohortArgs) -> Result<(), CliError> {
    let (mut spec, spec_seed) = match &a.spec {
        Some(path) => {
            let s: CohortSpec = read_json(path)?;
            let seed = s.seed;
            (s, Some(seed))
        }
        None => (CohortSpec::default(), None),
    };
    spec.seed = seed(ctx, spec_seed);
    spec.n = a.n.unwrap_or(spec.n);
    spec.prevalence = a.prevalence.unwrap_or(spec.prevalence);
    spec.missing_rows = a.missing_rows.unwrap_or(spec.missing_rows);
    spec.clinical_signal = a.clinical_signal.unwrap_or(spec.clinical_signal);
    spec.echo_signal = a.echo_signal.unwrap_or(spec.echo_signal);
    spec.noise = a.noise.unwrap_or(spec.noise);
    if let Some(p) = &a.id_prefix {
        spec.id_prefix = p.clone();
    }

    let cohort = gen_cohort_with(&spec)?;
    let mut csv = Vec::new();
    write_dataset(&cohort.dataset(), &mut csv)?;
    write_file(&a.out, &csv)?;
    if let Some(path) = &a.signal_out {
        write_json(path, &cohort.signal)?;
    }
    if let Some(path) = &a.records_out {
        write_json(path, &cohort.patients)?;
    }
    let summary = json!({
        "out": a.out,
        "rows": cohort.patients.len(),
        "positives": cohort.positives(),
        "incomplete": cohort.incomplete.len(),
        "seed": spec.seed,
    });
    ctx.emit(&summary, || {
        format!(
            "{} patients ({} at risk, {} incomplete), seed {}, written to {}",
            cohort.patients.len(),
            cohort.positives(),
            cohort.incomplete.len(),
            spec.seed,
            a.out.display()
        )
    })
}

fn parse_kind(raw: &str) -> Option<EpisodeKind> {
    let norm: String = raw.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
    match norm.as_str() {
        "fluidoverload" => Some(EpisodeKind::FluidOverload),
        "afburst" | "af" => Some(EpisodeKind::AFBurst),
        "hypertensivesurge" => Some(EpisodeKind::HypertensiveSurge),
        "infection" => Some(EpisodeKind::Infection),
        _ => None,
    }
}

fn parse_episode(raw: &str) -> Result<EpisodeSpec, CliError> {
    let bad = |why: &str| CliError::Usage(format!("--episode `{raw}`: {why}; expected KIND,ONSET,RAMP_HOURS,MAGNITUDE"));
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    let [kind, onset, hours, magnitude] = parts[..] else {
        return Err(bad("wrong number of fields"));
    };
    let kind = parse_kind(kind)
        .ok_or_else(|| bad("kind is one of fluid_overload, af_burst, hypertensive_surge, infection"))?;
    let onset = DateTime::parse_from_rfc3339(onset).map_err(|_| bad("onset is not RFC 3339"))?.with_timezone(&Utc);
    let duration_hours = hours.parse().map_err(|_| bad("ramp hours is not a number"))?;
    let magnitude = magnitude.parse().map_err(|_| bad("magnitude is not a number"))?;
    Ok(EpisodeSpec { kind, onset, duration_hours, magnitude })
}

fn apply_cadence(spec: &mut TraceSpec, c: &CadenceArgs) {
    let cad = &mut spec.cadence;
    for (field, flag) in [
        (&mut cad.watch, c.cadence_watch),
        (&mut cad.weight, c.cadence_weight),
        (&mut cad.blood_pressure, c.cadence_blood_pressure),
        (&mut cad.rhythm, c.cadence_rhythm),
        (&mut cad.resp_rate, c.cadence_resp_rate),
        (&mut cad.body_temp, c.cadence_body_temp),
        (&mut cad.activity, c.cadence_activity),
        (&mut cad.sleep, c.cadence_sleep),
        (&mut cad.env, c.cadence_env),
    ] {
        if let Some(v) = flag {
            *field = v;
        }
    }
}

fn trace_spec(ctx: &Ctx, a: &TraceArgs) -> Result<TraceSpec, CliError> {
    let (mut spec, spec_seed) = match &a.spec {
        Some(path) => {
            let s: TraceSpec = read_json(path)?;
            let seed = s.seed;
            (s, Some(seed))
        }
        None => (TraceSpec::default(), None),
    };
    spec.seed = seed(ctx, spec_seed);
    if let Some(p) = &a.patient {
        spec.patient_id = p.clone();
    }
    spec.start = instant("start", a.start.as_deref(), spec.start)?;
    spec.days = a.days.unwrap_or(spec.days);
    spec.include_env = a.include_env.unwrap_or(spec.include_env);
    if a.device_prefix.is_some() {
        spec.device_prefix = a.device_prefix.clone();
    }
    if !a.episodes.is_empty() {
        spec.episodes = a.episodes.iter().map(|e| parse_episode(e)).collect::<Result<_, _>>()?;
    }
    apply_cadence(&mut spec, &a.cadence);
    Ok(spec)
}

fn read_stream(path: &Path) -> Result<Vec<Sample>, CliError> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Input { path: path.into(), reason: format!("line {}: {e}", i + 1) })
        })
        .collect()
}

fn stream_bytes(samples: &[Sample]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut out, s).map_err(|e| CliError::Internal(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Stand-in record for a simulated patient the gateway has never seen.
fn placeholder_record(id: &PatientId) -> PatientRecord {
    PatientRecord {
        patient_id: id.clone(),
        age: 70.0,
        sex: Sex::F,
        bmi: 27.0,
        clinical: ClinicalFeatures {
            diagnosis_primary: "I50.9".into(),
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

async fn tokens_for(a: &TraceArgs, target: &IngestTarget, samples: &[Sample]) -> Result<Tokens, CliError> {
    if let Some(path) = a.credentials.as_deref().filter(|p| p.exists()) {
        return read_json(path);
    }
    let patients: BTreeSet<PatientId> = samples.iter().map(|s| s.patient_id().clone()).collect();
    if patients.len() > 1 && a.record.is_some() {
        return Err(CliError::Usage("--record describes one patient but the stream has several".into()));
    }
    let mut tokens = Tokens::new();
    for pid in &patients {
        let record = match &a.record {
            Some(path) => {
                let r: PatientRecord = read_json(path)?;
                if &r.patient_id != pid {
                    return Err(CliError::Usage(format!(
                        "--record is for {} but the stream is for {pid}",
                        r.patient_id
                    )));
                }
                r
            }
            None => placeholder_record(pid),
        };
        tokens.extend(provision(target, &record, &kinds_for(samples, pid)).await?);
    }
    if let Some(path) = &a.credentials {
        write_json(path, &tokens)?;
    }
    Ok(tokens)
}

async fn trace(ctx: &Ctx, a: &TraceArgs) -> Result<(), CliError> {
    let samples = match &a.stream {
        Some(path) => read_stream(path)?,
        None => gen_trace(&trace_spec(ctx, a)?)?,
    };
    if let Some(path) = &a.out {
        write_file(path, &stream_bytes(&samples)?)?;
    }
    if a.offline {
        let Some(out) = &a.out else {
            return Err(CliError::Usage("--offline needs --out".into()));
        };
        let summary = json!({ "out": out, "samples": samples.len() });
        return ctx.emit(&summary, || format!("{} samples written to {}", samples.len(), out.display()));
    }
    if a.speed.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
        return Err(CliError::Usage("--speed must be a positive number".into()));
    }

    let target = IngestTarget::http(a.target.as_str());
    let tokens = tokens_for(a, &target, &samples).await?;
    let report: ReplayReport = replay(&samples, &tokens, a.speed, &target).await?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    ctx.emit(&report, || {
        let mut lines = vec![format!(
            "{} messages on {} streams: {} accepted ({} duplicate), {} rejected, {} alert(s) raised, {:.0} msg/s",
            report.messages,
            report.streams,
            report.accepted,
            report.duplicates,
            report.rejected.len(),
            report.alerts,
            report.throughput_per_s
        )];
        for r in &report.rejected {
            lines.push(format!("  rejected {} {} at {}: {} ({})", r.device_id, r.metric, r.ts, r.code, r.message));
        }
        lines.join("\n")
    })?;
    if !report.rejected.is_empty() {
        return Err(CliError::Rejected { count: report.rejected.len(), messages: report.messages });
    }
    Ok(())
}
