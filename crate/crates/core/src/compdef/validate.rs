//! Dry-run validation of a site's data against a definition.

use serde::{Deserialize, Serialize};

use super::{parse_csv_matrix, parse_csv_survival, CompType, ComputationDefinition, IngestError};
use crate::cox::{cox_fit, cox_local_stats, CoxError, FitError, FitOptions, SurvivalDataset};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetValidationReport {
    pub ok: bool,
    pub n_used: usize,
    pub n_dropped_missing: usize,
    pub messages: Vec<String>,
}

impl DatasetValidationReport {
    fn failed(message: String) -> Self {
        Self { ok: false, n_used: 0, n_dropped_missing: 0, messages: vec![message] }
    }
}

/// A site's ingested data, typed by computation.
#[derive(Debug, Clone, PartialEq)]
pub enum SiteData {
    Survival(SurvivalDataset),
    Matrix(Matrix),
}

impl SiteData {
    pub fn n(&self) -> usize {
        match self {
            SiteData::Survival(d) => d.n(),
            SiteData::Matrix(m) => m.rows(),
        }
    }
}

pub struct Validated {
    pub report: DatasetValidationReport,
    /// Present exactly when `report.ok`.
    pub data: Option<SiteData>,
}

/// Options used for the dry run.
pub fn dry_run_options() -> FitOptions {
    FitOptions { max_iter: 5, ..FitOptions::default() }
}

/// Checks already-ingested data. Failures are reported, never raised.
pub fn validate_dataset(defn: &ComputationDefinition, data: &SiteData) -> DatasetValidationReport {
    let mut report =
        DatasetValidationReport { ok: false, n_used: data.n(), n_dropped_missing: 0, messages: Vec::new() };
    match (defn.comp_type(), data) {
        (CompType::StratifiedCoxModel, SiteData::Survival(d)) => {
            let formula = defn.formula().expect("cox definitions carry a formula");
            if d.covariate_names() != formula.covariates.as_slice() {
                report.messages.push(format!(
                    "covariates {:?} do not match the formula's {:?}",
                    d.covariate_names(),
                    formula.covariates
                ));
                return report;
            }
            let opts = dry_run_options();
            let fit = cox_fit(|beta| cox_local_stats(d, beta, opts.ties), d.p(), &opts);
            match fit {
                Ok(res) => {
                    report.ok = true;
                    report.messages.push(format!(
                        "dry-run fit on {} subjects with {} events succeeded ({} evaluations)",
                        d.n(),
                        d.n_events(),
                        res.iterations
                    ));
                    report.messages.extend(res.warnings);
                }
                Err(FitError::NonIdentifiable(why)) => {
                    report.messages.push(format!("singular information matrix: {why}"));
                }
                Err(e) => report.messages.push(format!("dry-run fit failed: {e}")),
            }
        }
        (CompType::RankKSvd, SiteData::Matrix(m)) => {
            if m.rows() == 0 || m.cols() == 0 {
                report.messages.push(format!("matrix must have n >= 1 and p >= 1, got {}x{}", m.rows(), m.cols()));
            } else if m.as_slice().iter().any(|v| !v.is_finite()) {
                report.messages.push("matrix contains non-finite values".into());
            } else {
                report.ok = true;
                report.messages.push(format!("{}x{} matrix accepted", m.rows(), m.cols()));
            }
        }
        (t, _) => report.messages.push(format!("data kind does not match a {t} definition")),
    }
    report
}

/// Ingests CSV text for `defn` and validates it.
pub fn validate_csv(defn: &ComputationDefinition, csv: &str) -> Validated {
    let loaded = match defn.comp_type() {
        CompType::StratifiedCoxModel => {
            let formula = defn.formula().expect("cox definitions carry a formula");
            parse_csv_survival(csv, formula).map(|l| (SiteData::Survival(l.dataset), l.n_used, l.n_dropped_missing))
        }
        CompType::RankKSvd => {
            parse_csv_matrix(csv).map(|l| (SiteData::Matrix(l.matrix), l.n_used, l.n_dropped_missing))
        }
    };
    let (data, n_used, dropped) = match loaded {
        Ok(v) => v,
        Err(IngestError::Cox(CoxError::NoEvents)) => {
            return Validated { report: DatasetValidationReport::failed("no events in the data".into()), data: None }
        }
        Err(e) => return Validated { report: DatasetValidationReport::failed(e.to_string()), data: None },
    };
    let mut report = validate_dataset(defn, &data);
    report.n_used = n_used;
    report.n_dropped_missing = dropped;
    if dropped > 0 {
        report.messages.insert(0, format!("{dropped} observations deleted due to missingness"));
    }
    let data = report.ok.then_some(data);
    Validated { report, data }
}
