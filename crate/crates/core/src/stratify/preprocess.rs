//! Row-drop for missing values, then standardization of numeric columns,
//! 0/1 encoding of booleans, and one-hot encoding of categoricals.

use serde::{Deserialize, Serialize};

use super::dataset::{Cell, FeatureRow, LabeledRow, RawDataset};
use super::schema::{Block, FeatureKind, FEATURES};
use super::StratifyError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRow {
    pub patient_id: String,
    pub line: Option<usize>,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DropReport {
    pub input_rows: usize,
    pub output_rows: usize,
    pub dropped: Vec<DroppedRow>,
}

/// Splits off rows with any missing required feature.
pub fn drop_incomplete(raw: &RawDataset) -> (Vec<LabeledRow>, DropReport) {
    let mut kept = Vec::with_capacity(raw.len());
    let mut dropped = Vec::new();
    for r in &raw.rows {
        let missing = r.row.missing();
        if missing.is_empty() {
            kept.push(r.clone());
        } else {
            dropped.push(DroppedRow { patient_id: r.row.patient_id.clone(), line: r.line, missing });
        }
    }
    let report = DropReport { input_rows: raw.len(), output_rows: kept.len(), dropped };
    (kept, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum ColumnEncoding<T> {
    Standardized { mean: T, scale: T },
    Binary,
    OneHot { category: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDescriptor<T> {
    /// Output column name, e.g. `EF` or `NYHA=III`.
    pub name: String,
    /// Index into the feature schema.
    pub feature: usize,
    #[serde(flatten)]
    pub encoding: ColumnEncoding<T>,
}

impl<T> ColumnDescriptor<T> {
    pub fn in_block(&self, block: Block) -> bool {
        FEATURES[self.feature].in_block(block)
    }
}

/// Fitted encoding, reusable on new rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor<T> {
    pub columns: Vec<ColumnDescriptor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    /// Row-major.
    pub data: Vec<T>,
    pub n_rows: usize,
    pub columns: Vec<ColumnDescriptor<T>>,
    pub row_ids: Vec<String>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.n_cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.n_rows).map(|i| self.row(i)[j]).collect()
    }

    /// Column indices belonging to `block`.
    pub fn block_columns(&self, block: Block) -> Vec<usize> {
        block_columns(&self.columns, block)
    }

    /// Row-major sub-matrix with only the given block's columns.
    pub fn block(&self, block: Block) -> (Vec<T>, usize) {
        let cols = self.block_columns(block);
        let mut out = Vec::with_capacity(self.n_rows * cols.len());
        for i in 0..self.n_rows {
            let row = self.row(i);
            out.extend(cols.iter().map(|&j| row[j]));
        }
        (out, cols.len())
    }

    /// Sub-matrix of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix<T> {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols());
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            data,
            n_rows: rows.len(),
            columns: self.columns.clone(),
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
        }
    }
}

pub(crate) fn block_columns<T>(columns: &[ColumnDescriptor<T>], block: Block) -> Vec<usize> {
    columns.iter().enumerate().filter(|(_, c)| c.in_block(block)).map(|(j, _)| j).collect()
}

fn category_of(cell: &Option<Cell>) -> String {
    match cell {
        Some(Cell::Cat(s)) => s.clone(),
        Some(Cell::Num(v)) => v.to_string(),
        Some(Cell::Bool(b)) => b.to_string(),
        None => String::new(),
    }
}

fn numeric_of(cell: &Option<Cell>) -> Option<f64> {
    match cell {
        Some(Cell::Num(v)) => Some(*v),
        Some(Cell::Bool(b)) => Some(if *b { 1.0 } else { 0.0 }),
        _ => None,
    }
}

impl<T: Scalar> Preprocessor<T> {
    /// Learns standardization parameters and category vocabularies from
    /// complete rows.
    pub fn fit(rows: &[&FeatureRow]) -> Result<Self, StratifyError> {
        if rows.is_empty() {
            return Err(StratifyError::AllRowsDropped);
        }
        let n = T::of_usize(rows.len());
        let mut columns = Vec::new();
        for (f, spec) in FEATURES.iter().enumerate() {
            match spec.kind {
                FeatureKind::Numeric => {
                    let values: Vec<T> = rows
                        .iter()
                        .map(|r| numeric_of(&r.cells[f]).map(T::of))
                        .collect::<Option<_>>()
                        .ok_or_else(|| StratifyError::MissingFeatures(vec![spec.name.to_owned()]))?;
                    let mean = values.iter().copied().sum::<T>() / n;
                    let var = values.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
                    let sd = var.sqrt();
                    // constant columns leave rounding residue in the variance
                    let floor = T::of(1e-9) * mean.abs().max(T::one());
                    let scale = if sd > floor { sd } else { T::one() };
                    columns.push(ColumnDescriptor {
                        name: spec.name.to_owned(),
                        feature: f,
                        encoding: ColumnEncoding::Standardized { mean, scale },
                    });
                }
                FeatureKind::Boolean => columns.push(ColumnDescriptor {
                    name: spec.name.to_owned(),
                    feature: f,
                    encoding: ColumnEncoding::Binary,
                }),
                FeatureKind::Categorical => {
                    let mut cats: Vec<String> = rows.iter().map(|r| category_of(&r.cells[f])).collect();
                    cats.sort();
                    cats.dedup();
                    for category in cats {
                        columns.push(ColumnDescriptor {
                            name: format!("{}={}", spec.name, category),
                            feature: f,
                            encoding: ColumnEncoding::OneHot { category },
                        });
                    }
                }
            }
        }
        Ok(Preprocessor { columns })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Encodes one complete row. Unseen categories encode as all zeros.
    pub fn encode_row(&self, row: &FeatureRow) -> Result<Vec<T>, StratifyError> {
        let missing = row.missing();
        if !missing.is_empty() {
            return Err(StratifyError::MissingFeatures(missing));
        }
        let mut out = Vec::with_capacity(self.columns.len());
        for c in &self.columns {
            let cell = &row.cells[c.feature];
            let v = match &c.encoding {
                ColumnEncoding::Standardized { mean, scale } => {
                    let x = numeric_of(cell).ok_or_else(|| StratifyError::MissingFeatures(vec![c.name.clone()]))?;
                    (T::of(x) - *mean) / *scale
                }
                ColumnEncoding::Binary => match cell {
                    Some(Cell::Bool(true)) => T::one(),
                    Some(Cell::Bool(false)) => T::zero(),
                    Some(Cell::Num(v)) => {
                        if *v != 0.0 {
                            T::one()
                        } else {
                            T::zero()
                        }
                    }
                    _ => return Err(StratifyError::MissingFeatures(vec![c.name.clone()])),
                },
                ColumnEncoding::OneHot { category } => {
                    if category_of(cell) == *category {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
            };
            out.push(v);
        }
        Ok(out)
    }

    pub fn transform(&self, rows: &[&FeatureRow]) -> Result<FeatureMatrix<T>, StratifyError> {
        let mut data = Vec::with_capacity(rows.len() * self.width());
        for r in rows {
            data.extend(self.encode_row(r)?);
        }
        Ok(FeatureMatrix {
            data,
            n_rows: rows.len(),
            columns: self.columns.clone(),
            row_ids: rows.iter().map(|r| r.patient_id.clone()).collect(),
        })
    }
}

/// Drops incomplete rows, then fits and applies the encoding on what is left.
pub fn preprocess<T: Scalar>(
    raw: &RawDataset,
) -> Result<(FeatureMatrix<T>, Vec<bool>, DropReport), StratifyError> {
    if raw.is_empty() {
        return Err(StratifyError::EmptyDataset);
    }
    let (kept, report) = drop_incomplete(raw);
    if kept.is_empty() {
        return Err(StratifyError::AllRowsDropped);
    }
    let rows: Vec<&FeatureRow> = kept.iter().map(|r| &r.row).collect();
    let pre = Preprocessor::<T>::fit(&rows)?;
    let matrix = pre.transform(&rows)?;
    Ok((matrix, kept.iter().map(|r| r.label).collect(), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::patient;
    use crate::stratify::schema::feature_index;

    fn dataset(n: usize) -> RawDataset {
        let rows = (0..n)
            .map(|i| {
                let mut p = patient(&format!("P{i}"));
                p.age = 40.0 + (i * 7 % 45) as f64;
                p.bmi = 20.0 + (i * 3 % 15) as f64;
                p.echo.tapse_mm = Some(12.0 + (i % 9) as f64);
                p.clinical.nyha = crate::model::Nyha::ALL[i % 4];
                p.clinical.diabetes = i % 3 == 0;
                LabeledRow { row: FeatureRow::from(&p), label: i % 2 == 0, line: Some(i + 2) }
            })
            .collect();
        RawDataset { rows }
    }

    #[test]
    fn five_rows_two_missing_tapse() {
        let mut ds = dataset(5);
        let tapse = feature_index("TAPSE").unwrap();
        ds.rows[1].row.cells[tapse] = None;
        ds.rows[3].row.cells[tapse] = None;
        let (m, labels, report) = preprocess::<f64>(&ds).unwrap();
        assert_eq!(m.n_rows, 3);
        assert_eq!(labels.len(), 3);
        assert_eq!(report.input_rows, 5);
        assert_eq!(report.output_rows, 3);
        let ids: Vec<_> = report.dropped.iter().map(|d| d.patient_id.as_str()).collect();
        assert_eq!(ids, vec!["P1", "P3"]);
        assert!(report.dropped.iter().all(|d| d.missing == vec!["TAPSE".to_owned()]));
    }

    #[test]
    fn complete_dataset_keeps_all_rows() {
        let ds = dataset(12);
        let (m, _, report) = preprocess::<f64>(&ds).unwrap();
        assert_eq!(m.n_rows, 12);
        assert!(report.dropped.is_empty());
    }

    #[test]
    fn all_rows_dropped() {
        let mut ds = dataset(3);
        for r in &mut ds.rows {
            r.row.cells[feature_index("Hb").unwrap()] = None;
        }
        assert!(matches!(preprocess::<f64>(&ds), Err(StratifyError::AllRowsDropped)));
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_variance() {
        let (m, _, _) = preprocess::<f64>(&dataset(40)).unwrap();
        for (j, c) in m.columns.iter().enumerate() {
            if let ColumnEncoding::Standardized { scale, .. } = c.encoding {
                let col = m.column(j);
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                assert!(mean.abs() < 1e-9, "{} mean {mean}", c.name);
                if scale != 1.0 {
                    assert!((var - 1.0).abs() < 1e-6, "{} var {var}", c.name);
                }
            }
        }
        let nyha: Vec<_> = m.columns.iter().filter(|c| c.name.starts_with("NYHA=")).collect();
        assert_eq!(nyha.len(), 4);
    }

    #[test]
    fn reprocessing_standardized_output_changes_nothing() {
        let ds = dataset(30);
        let (m, _, _) = preprocess::<f64>(&ds).unwrap();
        // feed the standardized numbers back in as raw values
        let mut again = ds.clone();
        for (i, r) in again.rows.iter_mut().enumerate() {
            for (j, c) in m.columns.iter().enumerate() {
                if matches!(c.encoding, ColumnEncoding::Standardized { .. }) {
                    r.row.cells[c.feature] = Some(Cell::Num(m.row(i)[j]));
                }
            }
        }
        let (m2, _, _) = preprocess::<f64>(&again).unwrap();
        assert_eq!(m.n_rows, m2.n_rows);
        for (a, b) in m.data.iter().zip(&m2.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn blocks_share_ef() {
        let (m, _, _) = preprocess::<f64>(&dataset(10)).unwrap();
        let clin = m.block_columns(Block::Clinical);
        let echo = m.block_columns(Block::Echo);
        let ef = m.columns.iter().position(|c| c.name == "EF").unwrap();
        assert!(clin.contains(&ef) && echo.contains(&ef));
        assert_eq!(clin.len() + echo.len(), m.n_cols() + 1);
    }

    #[test]
    fn works_in_f32() {
        let (m, _, _) = preprocess::<f32>(&dataset(10)).unwrap();
        assert!(m.data.iter().all(|v| v.is_finite()));
    }
}
