//! The master: a registry of sites for one computation, and the run loops
//! that drive them.

mod transport;

#[cfg(test)]
mod tests;

pub use transport::{HttpTransport, SiteTransport, TransportError};

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::compdef::{CompType, ComputationDefinition, DatasetValidationReport};
use crate::cox::{cox_aggregate, cox_fit, cox_summary, CoxFitResult, CoxLocalStats, FitError, FitOptions, SummaryTable, TiesMethod};
use crate::numerics::Vector;
use crate::protocol::{
    decode, encode, DataFile, Direction, ErrorCode, ExecuteParams, ExecuteResult, Transcript, WireMessage,
};
use crate::site::SiteReply;
use crate::svd::{master_run_svd, SvdError, SvdFederation, SvdOptions, SvdResult, SvdRunError};

#[derive(Clone)]
pub struct SiteHandle {
    pub name: String,
    pub transport: Arc<dyn SiteTransport>,
    /// Label of the data file the site was given; informational only.
    pub data_file_name: String,
}

impl SiteHandle {
    pub fn new(name: impl Into<String>, transport: Arc<dyn SiteTransport>, data_file_name: impl Into<String>) -> Self {
        Self { name: name.into(), transport, data_file_name: data_file_name.into() }
    }

    pub fn http(name: impl Into<String>, url: &str, token: &str, data_file_name: impl Into<String>) -> Self {
        Self::new(name, Arc::new(HttpTransport::new(url, token)), data_file_name)
    }
}

impl std::fmt::Debug for SiteHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SiteHandle")
            .field("name", &self.name)
            .field("transport", &self.transport.describe())
            .field("data_file_name", &self.data_file_name)
            .finish()
    }
}

/// How transport failures are retried. A request that may already have been
/// applied is retried only if repeating it is harmless.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 1, backoff: Duration::from_secs(2) }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MasterError {
    #[error("a site named {0:?} is already registered")]
    DuplicateSite(String),
    #[error("no sites registered")]
    NoSites,
    #[error("site {site} is unreachable: {message}")]
    Unreachable { site: String, message: String },
    #[error("computation {defn} is not registered at site {site}")]
    NotRegistered { site: String, defn: String },
    #[error("site {site} failed with {code}: {message}")]
    Site { site: String, code: ErrorCode, message: String },
    #[error("site {site} sent an unexpected reply: {message}")]
    Protocol { site: String, message: String },
    #[error("this is a {actual} computation, not {expected}")]
    WrongCompType { expected: CompType, actual: CompType },
    #[error("sites disagree: {0}")]
    Inconsistent(String),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Svd(#[from] SvdError),
}

impl MasterError {
    /// The site the failure is attributed to, if any.
    pub fn site(&self) -> Option<&str> {
        match self {
            MasterError::Unreachable { site, .. }
            | MasterError::NotRegistered { site, .. }
            | MasterError::Site { site, .. }
            | MasterError::Protocol { site, .. } => Some(site),
            _ => None,
        }
    }
}

/// Sends a definition and a site's data file to that site.
pub fn upload_computation(
    site: &SiteHandle,
    defn: &ComputationDefinition,
    csv: &str,
) -> Result<DatasetValidationReport, MasterError> {
    let msg = WireMessage::UploadComputation {
        definition: defn.clone(),
        data: DataFile { file_name: site.data_file_name.clone(), csv: csv.to_string() },
    };
    let reply = site
        .transport
        .upload(&encode(&msg))
        .map_err(|e| MasterError::Unreachable { site: site.name.clone(), message: e.to_string() })?;
    match decode(&reply.body) {
        Ok(WireMessage::ExecuteResponse { result: ExecuteResult::Upload(report), .. }) => Ok(report),
        Ok(WireMessage::ErrorResponse { code, message, .. }) => {
            Err(MasterError::Site { site: site.name.clone(), code, message })
        }
        Ok(other) => Err(MasterError::Protocol { site: site.name.clone(), message: format!("got {}", other.kind()) }),
        Err(e) => Err(MasterError::Protocol { site: site.name.clone(), message: e.to_string() }),
    }
}

struct Exchange {
    request: Vec<u8>,
    reply: Result<SiteReply, TransportError>,
}

pub struct MasterState {
    defn: ComputationDefinition,
    sites: Vec<SiteHandle>,
    transcript: Mutex<Transcript>,
    retry: RetryPolicy,
}

impl MasterState {
    pub fn new(defn: ComputationDefinition) -> Self {
        Self { defn, sites: Vec::new(), transcript: Mutex::new(Transcript::new()), retry: RetryPolicy::default() }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn defn(&self) -> &ComputationDefinition {
        &self.defn
    }

    pub fn sites(&self) -> &[SiteHandle] {
        &self.sites
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Checks that the site answers and knows this computation, then appends it.
    pub fn add_site(&mut self, handle: SiteHandle) -> Result<(), MasterError> {
        if self.sites.iter().any(|s| s.name == handle.name) {
            return Err(MasterError::DuplicateSite(handle.name));
        }
        let site = handle.name.clone();
        let unreachable = |message: String| MasterError::Unreachable { site: site.clone(), message };
        let health = handle.transport.health().map_err(|e| unreachable(e.to_string()))?;
        if !health.is_success() {
            return Err(unreachable(format!("health probe returned HTTP {}", health.status)));
        }
        let id = self.defn.id().to_string();
        let status = handle.transport.status(&id).map_err(|e| unreachable(e.to_string()))?;
        if status.status == 404 {
            return Err(MasterError::NotRegistered { site, defn: id });
        }
        if !status.is_success() {
            return Err(match decode(&status.body) {
                Ok(WireMessage::ErrorResponse { code, message, .. }) => MasterError::Site { site, code, message },
                _ => MasterError::Protocol { site, message: format!("status probe returned HTTP {}", status.status) },
            });
        }
        tracing::debug!(site = %handle.name, at = %handle.transport.describe(), "site added");
        self.sites.push(handle);
        Ok(())
    }

    fn send(&self, site: &SiteHandle, bytes: &[u8], repeatable: bool) -> Result<SiteReply, TransportError> {
        let id = self.defn.id().to_string();
        let mut attempt = 0;
        loop {
            match site.transport.execute(&id, bytes) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    let retry_ok = repeatable || matches!(e, TransportError::NotDelivered(_));
                    if attempt >= self.retry.retries || !retry_ok {
                        return Err(e);
                    }
                    attempt += 1;
                    tracing::warn!(site = %site.name, error = %e, "retrying after backoff");
                    thread::sleep(self.retry.backoff);
                }
            }
        }
    }

    /// Sites sorted by name. Replies are always reduced in this order, so
    /// results do not depend on the order sites were added.
    pub fn reduction_order(&self) -> Vec<&SiteHandle> {
        let mut order: Vec<&SiteHandle> = self.sites.iter().collect();
        order.sort_by(|a, b| a.name.cmp(&b.name));
        order
    }

    /// Sends the same request to every site concurrently. Replies are
    /// recorded and returned in reduction order; the first failing site in
    /// that order is reported.
    fn broadcast(&self, params: ExecuteParams) -> Result<Vec<ExecuteResult>, MasterError> {
        if self.sites.is_empty() {
            return Err(MasterError::NoSites);
        }
        let order = self.reduction_order();
        let method = params.method();
        let repeatable = !method.is_mutating() || matches!(params, ExecuteParams::SvdInit | ExecuteParams::SvdUStep { .. });
        let request = encode(&WireMessage::ExecuteRequest { defn_id: self.defn.id(), params });
        let exchanges: Vec<Exchange> = if order.len() == 1 {
            vec![Exchange { request: request.clone(), reply: self.send(order[0], &request, repeatable) }]
        } else {
            thread::scope(|scope| {
                let handles: Vec<_> = order
                    .iter()
                    .map(|site| {
                        let request = &request;
                        scope.spawn(move || Exchange { request: request.clone(), reply: self.send(site, request, repeatable) })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("site worker panicked")).collect()
            })
        };

        let mut transcript = self.transcript.lock().unwrap_or_else(|p| p.into_inner());
        let mut results = Vec::with_capacity(exchanges.len());
        let mut first_error = None;
        for (site, ex) in order.iter().zip(exchanges) {
            transcript.record(Direction::MasterToSite, &site.name, &ex.request).expect("encoded by us");
            let outcome = match ex.reply {
                Err(e) => Err(MasterError::Unreachable { site: site.name.clone(), message: e.to_string() }),
                Ok(reply) => match transcript.record(Direction::SiteToMaster, &site.name, &reply.body) {
                    Err(e) => Err(MasterError::Protocol { site: site.name.clone(), message: e.to_string() }),
                    Ok(()) => self.interpret(site, &transcript.entries().last().expect("just recorded").message, method.as_str()),
                },
            };
            match outcome {
                Ok(r) => results.push(r),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(results),
        }
    }

    fn interpret(&self, site: &SiteHandle, msg: &WireMessage, method: &str) -> Result<ExecuteResult, MasterError> {
        match msg {
            WireMessage::ExecuteResponse { defn_id, result } if *defn_id == self.defn.id() && result.method_name() == method => {
                Ok(result.clone())
            }
            WireMessage::ErrorResponse { code, message, .. } => {
                Err(MasterError::Site { site: site.name.clone(), code: *code, message: message.clone() })
            }
            other => Err(MasterError::Protocol {
                site: site.name.clone(),
                message: format!("expected a {method} response, got {}", other.kind()),
            }),
        }
    }

    fn require(&self, expected: CompType) -> Result<(), MasterError> {
        let actual = self.defn.comp_type();
        if actual != expected {
            return Err(MasterError::WrongCompType { expected, actual });
        }
        if self.sites.is_empty() {
            return Err(MasterError::NoSites);
        }
        Ok(())
    }

    /// One round of local statistics from every site, summed in site order.
    pub fn cox_round(&self, beta: &Vector) -> Result<CoxLocalStats, MasterError> {
        let p = beta.len();
        let parts = self
            .broadcast(ExecuteParams::CoxLocalStats { beta: beta.clone() })?
            .into_iter()
            .zip(self.reduction_order())
            .map(|(r, site)| match r {
                ExecuteResult::CoxLocalStats(s) if s.p() == p => Ok(s),
                ExecuteResult::CoxLocalStats(s) => {
                    Err(MasterError::Inconsistent(format!("site {} returned p={}, expected {p}", site.name, s.p())))
                }
                _ => Err(MasterError::Protocol { site: site.name.clone(), message: "wrong result kind".into() }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        cox_aggregate(&parts).map_err(|e| MasterError::Numeric(e.to_string()))
    }

    /// Stratified Cox fit with each site as one stratum. Sites compute
    /// Efron-tied statistics, so other tie methods are rejected.
    pub fn run_cox(&self, opts: &FitOptions) -> Result<CoxFitResult, MasterError> {
        self.require(CompType::StratifiedCoxModel)?;
        if opts.ties != TiesMethod::Efron {
            return Err(MasterError::InvalidOptions("sites compute Efron statistics; ties must be efron".into()));
        }
        let formula = self.defn.formula().expect("cox definitions carry a formula");
        let p = formula.covariates.len();
        let mut fit = cox_fit(|beta| self.cox_round(beta), p, opts).map_err(|e| match e {
            FitError::Provider(e) => e,
            FitError::InvalidOptions(m) => MasterError::InvalidOptions(m),
            FitError::NonIdentifiable(m) => MasterError::Numeric(format!("model is not identifiable: {m}")),
            FitError::Cox(e) => MasterError::Numeric(e.to_string()),
        })?;
        fit.covariate_names = formula.covariates.clone();
        Ok(fit)
    }

    pub fn run_svd(&self, opts: &SvdOptions) -> Result<SvdResult, MasterError> {
        self.run_svd_with_hook(opts, |_| {})
    }

    /// As [`run_svd`](Self::run_svd), calling `after_component(r)` once the
    /// r-th component has been stored at every site.
    pub fn run_svd_with_hook(&self, opts: &SvdOptions, after_component: impl FnMut(usize)) -> Result<SvdResult, MasterError> {
        self.require(CompType::RankKSvd)?;
        let mut fed = Remote { master: self, hook: after_component };
        master_run_svd(&mut fed, opts).map_err(|e| match e {
            SvdRunError::Site(e) => e,
            SvdRunError::Svd(e) => MasterError::Svd(e),
        })
    }

    pub fn summarize(&self, fit: &CoxFitResult) -> SummaryTable {
        cox_summary(fit)
    }
}

struct Remote<'a, H> {
    master: &'a MasterState,
    hook: H,
}

impl<H: FnMut(usize)> SvdFederation for Remote<'_, H> {
    type Error = MasterError;

    fn init_all(&mut self) -> Result<Vec<(usize, usize)>, MasterError> {
        let replies = self.master.broadcast(ExecuteParams::SvdInit)?;
        Ok(replies
            .into_iter()
            .map(|r| match r {
                ExecuteResult::SvdInit { n, p } => (n, p),
                _ => unreachable!("checked by interpret"),
            })
            .collect())
    }

    fn v_step_all(&mut self, u_norm: f64) -> Result<Vec<Vector>, MasterError> {
        let replies = self.master.broadcast(ExecuteParams::SvdVStep { u_norm })?;
        Ok(replies
            .into_iter()
            .map(|r| match r {
                ExecuteResult::SvdVStep { v } => v,
                _ => unreachable!("checked by interpret"),
            })
            .collect())
    }

    fn u_step_all(&mut self, v: &Vector) -> Result<Vec<f64>, MasterError> {
        let replies = self.master.broadcast(ExecuteParams::SvdUStep { v: v.clone() })?;
        Ok(replies
            .into_iter()
            .map(|r| match r {
                ExecuteResult::SvdUStep { u_norm_sq } => u_norm_sq,
                _ => unreachable!("checked by interpret"),
            })
            .collect())
    }

    fn finalize_all(&mut self, v: &Vector, d: f64) -> Result<(), MasterError> {
        let replies = self.master.broadcast(ExecuteParams::SvdFinalizeComponent { v: v.clone(), d })?;
        let counts: Vec<usize> = replies
            .into_iter()
            .map(|r| match r {
                ExecuteResult::SvdFinalizeComponent { components } => components,
                _ => unreachable!("checked by interpret"),
            })
            .collect();
        if counts.windows(2).any(|w| w[0] != w[1]) {
            return Err(MasterError::Inconsistent(format!("sites hold different component counts {counts:?}")));
        }
        (self.hook)(counts[0]);
        Ok(())
    }
}

/// Renders an SVD result: singular values `$d`, then the `$v` columns.
pub fn render_svd(result: &SvdResult) -> String {
    let d: Vec<String> = result.d.iter().map(|x| format!("{x:.7}")).collect();
    let mut out = format!("$d\n{}\n\n$v\n", d.join(" "));
    for i in 0..result.v.rows() {
        let row: Vec<String> = result.v.row(i).iter().map(|x| format!("{x:>14.7e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
