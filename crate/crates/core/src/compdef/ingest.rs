//! CSV ingestion for site data files.

use std::path::Path;

use super::ModelFormula;
use crate::cox::{CoxError, SurvivalDataset};
use crate::numerics::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("duplicate column {0:?} in header")]
    DuplicateColumn(String),
    #[error("line {line}, column {column:?}: {value:?} is not numeric (factor covariates are not supported; recode as 0/1 indicators)")]
    NonNumeric { line: u64, column: String, value: String },
    #[error("line {line}, column {column:?}: {message}")]
    InvalidValue { line: u64, column: String, message: String },
    #[error("no usable rows ({dropped} dropped for missing values)")]
    NoRows { dropped: usize },
    #[error(transparent)]
    Cox(#[from] CoxError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSurvival {
    pub dataset: SurvivalDataset,
    pub n_used: usize,
    pub n_dropped_missing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedMatrix {
    pub matrix: Matrix,
    pub column_names: Vec<String>,
    pub n_used: usize,
    pub n_dropped_missing: usize,
}

enum Cell {
    Missing,
    Number(f64),
}

fn parse_cell(raw: &str, line: u64, column: &str) -> Result<Cell, IngestError> {
    let s = raw.trim();
    if s.is_empty() || s == "NA" {
        return Ok(Cell::Missing);
    }
    if s.eq_ignore_ascii_case("true") {
        return Ok(Cell::Number(1.0));
    }
    if s.eq_ignore_ascii_case("false") {
        return Ok(Cell::Number(0.0));
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Cell::Number(v)),
        _ => Err(IngestError::NonNumeric { line, column: column.into(), value: s.into() }),
    }
}

/// Reads the named columns; returns kept rows (in file order) and the number
/// of rows dropped for a missing value.
fn read_columns(text: &str, wanted: &[&str]) -> Result<(Vec<Vec<f64>>, Vec<u64>, usize), IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| IngestError::Csv(e.to_string()))?.clone();
    let header_names: Vec<&str> = headers.iter().map(str::trim).collect();
    let mut idx = Vec::with_capacity(wanted.len());
    for w in wanted {
        let hits: Vec<usize> =
            header_names.iter().enumerate().filter(|(_, h)| *h == w).map(|(i, _)| i).collect();
        match hits.len() {
            0 => return Err(IngestError::MissingColumn((*w).into())),
            1 => idx.push(hits[0]),
            _ => return Err(IngestError::DuplicateColumn((*w).into())),
        }
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(idx.len());
        let mut missing = false;
        for (&i, name) in idx.iter().zip(wanted) {
            let raw = record.get(i).unwrap_or("");
            match parse_cell(raw, line, name)? {
                Cell::Missing => missing = true,
                Cell::Number(v) => row.push(v),
            }
        }
        if missing {
            dropped += 1;
        } else {
            rows.push(row);
            lines.push(line);
        }
    }
    if rows.is_empty() {
        return Err(IngestError::NoRows { dropped });
    }
    Ok((rows, lines, dropped))
}

fn read_file(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })
}

/// Selects the formula's columns. Covariate order follows the formula, not
/// the file.
pub fn parse_csv_survival(text: &str, formula: &ModelFormula) -> Result<LoadedSurvival, IngestError> {
    let wanted = formula.columns();
    let (rows, lines, dropped) = read_columns(text, &wanted)?;
    let p = formula.covariates.len();
    let mut time = Vec::with_capacity(rows.len());
    let mut event = Vec::with_capacity(rows.len());
    let mut x = Vec::with_capacity(rows.len() * p);
    for (row, &line) in rows.iter().zip(&lines) {
        if row[0] < 0.0 {
            return Err(IngestError::InvalidValue {
                line,
                column: formula.time_var.clone(),
                message: format!("time {} is negative", row[0]),
            });
        }
        time.push(row[0]);
        event.push(match row[1] {
            v if v == 1.0 => true,
            v if v == 0.0 => false,
            v => {
                return Err(IngestError::InvalidValue {
                    line,
                    column: formula.event_var.clone(),
                    message: format!("event indicator must be 0 or 1, got {v}"),
                })
            }
        });
        x.extend_from_slice(&row[2..]);
    }
    let n_used = time.len();
    let covariates = Matrix::from_row_major(n_used, p, x).map_err(CoxError::from)?;
    let dataset = SurvivalDataset::new(time, event, covariates, formula.covariates.clone())?;
    Ok(LoadedSurvival { dataset, n_used, n_dropped_missing: dropped })
}

pub fn load_csv_survival(path: impl AsRef<Path>, formula: &ModelFormula) -> Result<LoadedSurvival, IngestError> {
    parse_csv_survival(&read_file(path.as_ref())?, formula)
}

/// Reads every column as a numeric matrix.
pub fn parse_csv_matrix(text: &str) -> Result<LoadedMatrix, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let names: Vec<String> =
        reader.headers().map_err(|e| IngestError::Csv(e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(IngestError::Csv("header row is empty".into()));
    }
    let wanted: Vec<&str> = names.iter().map(String::as_str).collect();
    let (rows, _, dropped) = read_columns(text, &wanted)?;
    let n_used = rows.len();
    let matrix = Matrix::from_rows(&rows).map_err(|e| IngestError::Csv(e.to_string()))?;
    Ok(LoadedMatrix { matrix, column_names: names, n_used, n_dropped_missing: dropped })
}

pub fn load_csv_matrix(path: impl AsRef<Path>) -> Result<LoadedMatrix, IngestError> {
    parse_csv_matrix(&read_file(path.as_ref())?)
}

/// Writes a dataset as CSV with the given response column names. Floats use
/// shortest round-trip text, so reading the file back is exact.
pub fn survival_to_csv(d: &SurvivalDataset, time_var: &str, event_var: &str) -> String {
    let mut out = String::new();
    out.push_str(time_var);
    out.push(',');
    out.push_str(event_var);
    for name in d.covariate_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..d.n() {
        out.push_str(&format!("{},{}", d.time()[i], u8::from(d.event()[i])));
        for x in d.covariates().row(i) {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    out
}

/// Writes a matrix as CSV with columns `c1..cp`.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let header: Vec<String> = (1..=m.cols()).map(|j| format!("c{j}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
