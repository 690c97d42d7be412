use chrono::{DateTime, Utc};
use predihealth::fhir::{export_bundle, FhirError};
use predihealth::model::PatientId;
use predihealth::store::SeriesStore;
use serde_json::json;

use super::{write_file, Ctx};
use crate::args::ExportArgs;
use crate::error::CliError;

pub fn instant(flag: &str, raw: Option<&str>, default: DateTime<Utc>) -> Result<DateTime<Utc>, CliError> {
    match raw {
        None => Ok(default),
        Some(r) => DateTime::parse_from_rfc3339(r)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|_| CliError::Usage(format!("--{flag} `{r}` is not an RFC 3339 instant"))),
    }
}

pub fn run(ctx: &Ctx, a: &ExportArgs) -> Result<(), CliError> {
    let t0 = instant("from", a.from.as_deref(), DateTime::<Utc>::MIN_UTC)?;
    let t1 = instant("to", a.to.as_deref(), DateTime::<Utc>::MAX_UTC)?;
    if t0 > t1 {
        return Err(CliError::Usage("--from is after --to".into()));
    }
    // opening creates the directory; do not leave one behind for a typo
    if !ctx.cfg.data_dir.is_dir() {
        return Err(FhirError::UnknownPatient(a.patient.clone()).into());
    }
    let store = SeriesStore::open(&ctx.cfg.data_dir, ctx.cfg.durability)
        .map_err(|e| CliError::Input { path: ctx.cfg.data_dir.clone(), reason: e.to_string() })?;
    let bundle = export_bundle(&store, &PatientId::new(a.patient.as_str()), t0, t1)?;
    let mut text = serde_json::to_vec_pretty(&bundle).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push(b'\n');
    match &a.out {
        Some(path) => {
            write_file(path, &text)?;
            let summary = json!({ "patient": a.patient, "entries": bundle.entry.len(), "out": path });
            ctx.emit(&summary, || format!("{} observation(s) written to {}", bundle.entry.len(), path.display()))
        }
        None => {
            use std::io::Write;
            std::io::stdout().lock().write_all(&text).map_err(|e| CliError::Internal(format!("stdout: {e}")))
        }
    }
}
