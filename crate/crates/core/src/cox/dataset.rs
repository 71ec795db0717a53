use serde::{Deserialize, Serialize};

use super::CoxError;
use crate::numerics::Matrix;

/// Right-censored survival records for one stratum (one site).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    time: Vec<f64>,
    event: Vec<bool>,
    covariates: Matrix,
    covariate_names: Vec<String>,
}

impl SurvivalDataset {
    pub fn new(
        time: Vec<f64>,
        event: Vec<bool>,
        covariates: Matrix,
        covariate_names: Vec<String>,
    ) -> Result<Self, CoxError> {
        let n = time.len();
        if event.len() != n || covariates.rows() != n {
            return Err(CoxError::Dimension(format!(
                "time has {n} entries, event {}, covariates {} rows",
                event.len(),
                covariates.rows()
            )));
        }
        if covariate_names.len() != covariates.cols() {
            return Err(CoxError::Dimension(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                covariates.cols()
            )));
        }
        if let Some(i) = time.iter().position(|t| !t.is_finite() || *t < 0.0) {
            return Err(CoxError::InvalidData(format!("subject {i}: time {} is not a nonnegative number", time[i])));
        }
        if !event.iter().any(|&e| e) {
            return Err(CoxError::NoEvents);
        }
        Ok(Self { time, event, covariates, covariate_names })
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.cols()
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn event(&self) -> &[bool] {
        &self.event
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    /// Subset of rows, in the given order. Fails if the subset has no events.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, CoxError> {
        let p = self.p();
        let mut values = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            values.extend_from_slice(self.covariates.row(r));
        }
        Self::new(
            rows.iter().map(|&r| self.time[r]).collect(),
            rows.iter().map(|&r| self.event[r]).collect(),
            Matrix::from_row_major(rows.len(), p, values)?,
            self.covariate_names.clone(),
        )
    }
}
