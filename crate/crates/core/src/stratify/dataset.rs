//! Dataset CSV loading and writing.
//!
//! One header row: `patient_id`, every feature column, then `label`. Column
//! order is free but the set must match exactly. Empty, `NA`, `NaN`, `null`
//! and `?` cells are missing.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{csv_header, FeatureKind, FEATURES, LABEL_COLUMN, PATIENT_ID_COLUMN};
use super::StratifyError;
use crate::model::{PatientRecord, Sex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Num(f64),
    Bool(bool),
    Cat(String),
}

/// One patient's features in [`FEATURES`] order; `None` is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub patient_id: String,
    pub cells: Vec<Option<Cell>>,
}

impl FeatureRow {
    /// Names of required features that are missing.
    pub fn missing(&self) -> Vec<String> {
        FEATURES
            .iter()
            .zip(&self.cells)
            .filter(|(spec, cell)| cell.is_none() && !spec.optional)
            .map(|(spec, _)| spec.name.to_owned())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub row: FeatureRow,
    pub label: bool,
    /// 1-based line in the source file, when loaded from CSV.
    pub line: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawDataset {
    pub rows: Vec<LabeledRow>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.label).collect()
    }
}

fn is_missing(raw: &str) -> bool {
    matches!(raw.trim(), "" | "NA" | "N/A" | "NaN" | "nan" | "null" | "?")
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "yes" | "y" | "true" | "si" | "sì" => Some(true),
        "0" | "no" | "n" | "false" => Some(false),
        _ => None,
    }
}

fn parse_cell(kind: FeatureKind, raw: &str) -> Option<Cell> {
    match kind {
        FeatureKind::Numeric => raw.trim().parse::<f64>().ok().filter(|v| v.is_finite()).map(Cell::Num),
        FeatureKind::Boolean => parse_bool(raw).map(Cell::Bool),
        FeatureKind::Categorical => Some(Cell::Cat(raw.trim().to_owned())),
    }
}

pub fn load_dataset(path: &Path) -> Result<RawDataset, StratifyError> {
    let file = std::fs::File::open(path).map_err(|e| StratifyError::Io(format!("{}: {e}", path.display())))?;
    read_dataset(file)
}

pub fn read_dataset(reader: impl Read) -> Result<RawDataset, StratifyError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = csv.headers().map_err(|e| StratifyError::ParseError { line: 1, reason: e.to_string() })?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();

    let position = |name: &str| names.iter().position(|h| *h == name);
    for expected in csv_header() {
        if position(expected).is_none() {
            return Err(StratifyError::SchemaMismatch(expected.to_owned()));
        }
    }
    if let Some(extra) = names.iter().find(|h| !csv_header().contains(h)) {
        return Err(StratifyError::SchemaMismatch((*extra).to_owned()));
    }
    let id_col = position(PATIENT_ID_COLUMN).unwrap();
    let label_col = position(LABEL_COLUMN).unwrap();
    let feature_cols: Vec<usize> = FEATURES.iter().map(|f| position(f.name).unwrap()).collect();

    let mut rows = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| StratifyError::ParseError { line, reason: e.to_string() })?;
        let label_raw = &record[label_col];
        let label = parse_bool(label_raw).ok_or_else(|| StratifyError::ParseError {
            line,
            reason: format!("label `{label_raw}` is not 0/1"),
        })?;
        let mut cells = Vec::with_capacity(FEATURES.len());
        for (spec, &col) in FEATURES.iter().zip(&feature_cols) {
            let raw = &record[col];
            if is_missing(raw) {
                cells.push(None);
                continue;
            }
            let cell = parse_cell(spec.kind, raw).ok_or_else(|| StratifyError::ParseError {
                line,
                reason: format!("column {}: `{raw}` is not a valid {:?}", spec.name, spec.kind),
            })?;
            cells.push(Some(cell));
        }
        rows.push(LabeledRow {
            row: FeatureRow { patient_id: record[id_col].trim().to_owned(), cells },
            label,
            line: Some(line),
        });
    }
    Ok(RawDataset { rows })
}

fn render(cell: &Option<Cell>) -> String {
    match cell {
        None => String::new(),
        Some(Cell::Num(v)) => v.to_string(),
        Some(Cell::Bool(b)) => (if *b { "1" } else { "0" }).to_owned(),
        Some(Cell::Cat(s)) => s.clone(),
    }
}

pub fn write_dataset(dataset: &RawDataset, writer: impl Write) -> Result<(), StratifyError> {
    let mut csv = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| StratifyError::Io(e.to_string());
    csv.write_record(csv_header()).map_err(io)?;
    for r in &dataset.rows {
        let mut fields = vec![r.row.patient_id.clone()];
        fields.extend(r.row.cells.iter().map(render));
        fields.push((if r.label { "1" } else { "0" }).to_owned());
        csv.write_record(&fields).map_err(io)?;
    }
    csv.flush().map_err(|e| StratifyError::Io(e.to_string()))
}

impl From<&PatientRecord> for FeatureRow {
    fn from(p: &PatientRecord) -> Self {
        let c = &p.clinical;
        let e = &p.echo;
        let num = |v: f64| Some(Cell::Num(v));
        let opt = |v: Option<f64>| v.map(Cell::Num);
        let flag = |v: bool| Some(Cell::Bool(v));
        let cells = vec![
            Some(Cell::Cat(c.diagnosis_primary.clone())),
            c.diagnosis_secondary.clone().map(Cell::Cat),
            flag(c.hfpef),
            num(c.ef_percent),
            Some(Cell::Cat(c.nyha.as_str().to_owned())),
            num(p.age),
            num(p.bmi),
            Some(Cell::Cat(match p.sex {
                Sex::M => "M".to_owned(),
                Sex::F => "F".to_owned(),
            })),
            flag(c.hypertension),
            flag(c.dyslipidemia),
            flag(c.diabetes),
            flag(c.copd),
            flag(c.beta_blocker),
            flag(c.ace_sartan),
            flag(c.anti_aldosterone),
            opt(e.posterior_wall_mm),
            opt(e.septum_mm),
            opt(e.lves_diam_mm),
            opt(e.lved_diam_mm),
            opt(e.rv_diam_mm),
            opt(e.lvmi_g_m2),
            opt(e.left_atrium),
            opt(e.tapse_mm),
            opt(e.radial_strain),
            flag(e.lbbb),
            flag(e.rbbb),
            opt(e.nt_probnp_pg_ml),
            opt(e.creatinine_mg_dl),
            opt(e.glucose_mg_dl),
            flag(e.afib),
            flag(e.flutter),
            flag(e.pacemaker),
            opt(e.hb_g_dl),
        ];
        debug_assert_eq!(cells.len(), FEATURES.len());
        FeatureRow { patient_id: p.patient_id.as_str().to_owned(), cells }
    }
}
