use serde::{Deserialize, Serialize};

use super::{cox_aggregate, cox_local_stats, CoxError, CoxLocalStats, SurvivalDataset, TiesMethod};
use crate::numerics::{Cholesky, Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Budget of likelihood evaluations, the initial one included.
    pub max_iter: usize,
    pub tol: f64,
    pub ties: TiesMethod,
    pub init: Option<Vector>,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 20, tol: 1e-9, ties: TiesMethod::Efron, init: None, max_halvings: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFitResult {
    pub beta: Vector,
    pub variance: Matrix,
    pub loglik_initial: f64,
    pub loglik_final: f64,
    /// Number of times the statistics were evaluated (one request per site each).
    pub iterations: usize,
    pub converged: bool,
    pub covariate_names: Vec<String>,
    /// Log-likelihood after every accepted evaluation, starting with the initial one.
    pub loglik_trace: Vec<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CoxFitResult {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.beta.len()).map(|j| self.variance.get(j, j).sqrt()).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FitError<E> {
    #[error("statistics provider failed: {0}")]
    Provider(E),
    #[error("invalid fit options: {0}")]
    InvalidOptions(String),
    #[error("information matrix is singular at the starting value; the model is not identifiable ({0})")]
    NonIdentifiable(String),
    #[error(transparent)]
    Cox(#[from] CoxError),
}

/// Newton–Raphson maximization of the (aggregated) partial likelihood.
///
/// `provider` maps β to the summed statistics over all strata; it is the only
/// access the fitter has to the data. Steps that lower the log-likelihood are
/// halved up to `max_halvings` times; if that fails the fit stops where it is.
pub fn cox_fit<E, F>(mut provider: F, p: usize, opts: &FitOptions) -> Result<CoxFitResult, FitError<E>>
where
    F: FnMut(&Vector) -> Result<CoxLocalStats, E>,
{
    if opts.max_iter < 1 || !(opts.tol > 0.0) {
        return Err(FitError::InvalidOptions(format!("max_iter={} tol={}", opts.max_iter, opts.tol)));
    }
    let mut beta = match &opts.init {
        Some(init) if init.len() != p => {
            return Err(FitError::InvalidOptions(format!("init has {} entries, expected {p}", init.len())))
        }
        Some(init) => init.clone(),
        None => Vector::zeros(p),
    };

    let mut eval = |b: &Vector, count: &mut usize| -> Result<CoxLocalStats, FitError<E>> {
        *count += 1;
        let s = provider(b).map_err(FitError::Provider)?;
        if s.p() != p {
            return Err(CoxError::Dimension(format!("provider returned p={} but the model has p={p}", s.p())).into());
        }
        s.validate()?;
        Ok(s)
    };

    let mut iterations = 0;
    let mut stats = eval(&beta, &mut iterations)?;
    let loglik_initial = stats.loglik;
    let initial_info_diag: Vec<f64> = (0..p).map(|j| stats.info.get(j, j)).collect();
    let mut chol = Cholesky::factor(&stats.info).map_err(|e| FitError::NonIdentifiable(e.to_string()))?;
    let mut trace = vec![stats.loglik];
    let mut warnings = Vec::new();
    let mut converged = false;

    'outer: while iterations < opts.max_iter {
        let mut step = chol.solve(&stats.score)?;
        let mut halvings = 0;
        let (candidate, cand_stats) = loop {
            let candidate = beta.add(&step)?;
            let cand_stats = eval(&candidate, &mut iterations)?;
            if cand_stats.loglik >= stats.loglik {
                break (candidate, cand_stats);
            }
            if halvings == opts.max_halvings || iterations >= opts.max_iter {
                warnings.push(format!(
                    "step halving failed to increase the log-likelihood after {halvings} halvings"
                ));
                break 'outer;
            }
            step = step.scaled(0.5);
            halvings += 1;
        };

        let delta = cand_stats.loglik - stats.loglik;
        match Cholesky::factor(&cand_stats.info) {
            Ok(c) => chol = c,
            Err(e) => {
                warnings.push(format!("information matrix became singular ({e}); stopping"));
                break;
            }
        }
        beta = candidate;
        stats = cand_stats;
        trace.push(stats.loglik);
        if delta.abs() <= opts.tol * (stats.loglik.abs() + opts.tol) {
            converged = true;
            break;
        }
    }

    for j in 0..p {
        if stats.info.get(j, j) < 1e-8 * initial_info_diag[j] {
            warnings.push(format!("coefficient {j} may be infinite (monotone likelihood)"));
        }
    }

    Ok(CoxFitResult {
        variance: chol.inverse()?,
        beta,
        loglik_initial,
        loglik_final: stats.loglik,
        iterations,
        converged,
        covariate_names: Vec::new(),
        loglik_trace: trace,
        warnings,
    })
}

/// Centralized stratified fit: every dataset is one stratum.
pub fn cox_fit_pooled(datasets: &[SurvivalDataset], opts: &FitOptions) -> Result<CoxFitResult, FitError<CoxError>> {
    let first = datasets.first().ok_or_else(|| CoxError::Dimension("no datasets".into()))?;
    let names = first.covariate_names().to_vec();
    if let Some(k) = datasets.iter().position(|d| d.covariate_names() != names.as_slice()) {
        return Err(CoxError::Dimension(format!("dataset {k} has different covariates than dataset 0")).into());
    }
    let ties = opts.ties;
    let provider = |beta: &Vector| -> Result<CoxLocalStats, CoxError> {
        let parts = datasets.iter().map(|d| cox_local_stats(d, beta, ties)).collect::<Result<Vec<_>, _>>()?;
        cox_aggregate(&parts)
    };
    let mut fit = cox_fit(provider, names.len(), opts)?;
    fit.covariate_names = names;
    Ok(fit)
}

impl<E> From<crate::numerics::NumericsError> for FitError<E> {
    fn from(e: crate::numerics::NumericsError) -> Self {
        FitError::Cox(CoxError::Numerics(e))
    }
}
