//! In-process federations for tests, examples and `fedfit simulate`.
//!
//! A [`LoopbackSite`] calls [`SiteService::handle`] directly, so it runs the
//! same authorization, validation, persistence and logging code as the HTTP
//! server. [`conformance_suite`] checks that the two really are
//! indistinguishable.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::DateTime;
use rand::Rng;
use serde::Serialize;
use serde_json::Value;

use crate::compdef::{
    matrix_to_csv, survival_to_csv, CompType, ComputationDefinition, ComputationId, ModelFormula,
};
use crate::cox::{cox_fit_pooled, CoxFitResult, FitOptions};
use crate::master::{upload_computation, HttpTransport, MasterError, MasterState, SiteHandle, SiteTransport, TransportError};
use crate::numerics::Vector;
use crate::protocol::{encode, ExecuteParams, WireMessage};
use crate::site::{spawn_site_server, ServeError, SiteConfig, SiteError, SiteReply, SiteRequest, SiteServerHandle, SiteService};
use crate::svd::{svd_oracle, SvdOptions, SvdResult};
use crate::synth::{contiguous_split, row_block, rng, split_dataset, standard_normal_matrix, SurvivalScenario};

pub const MASTER_TOKEN: &str = "master-token";
pub const OTHER_TOKEN: &str = "other-token";
pub const OPERATOR_TOKEN: &str = "operator-token";

/// A site config with three peers: `master` (uploads and runs), `other`
/// (a second analyst) and `operator`.
pub fn sim_site_config(name: &str, workspace: impl Into<PathBuf>) -> SiteConfig {
    let localhost: SocketAddr = "127.0.0.1:0".parse().expect("valid address");
    SiteConfig::new(name, localhost, workspace)
        .with_peer("master", MASTER_TOKEN, false)
        .with_peer("other", OTHER_TOKEN, false)
        .with_peer("operator", OPERATOR_TOKEN, true)
}

/// A transport failure to inject on the next execute call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Delivered normally; lets a later fault target a specific call.
    Pass,
    /// The request is dropped before the site sees it.
    Drop,
    /// The site applies the request but the reply is lost.
    LoseReply,
}

/// An in-process site. Faults are consumed one per execute call.
pub struct LoopbackSite {
    config: SiteConfig,
    token: String,
    service: Mutex<Option<Arc<SiteService>>>,
    faults: Mutex<VecDeque<Fault>>,
}

impl LoopbackSite {
    pub fn open(config: SiteConfig, token: &str) -> Result<Self, SiteError> {
        let service = Arc::new(SiteService::open(&config)?);
        Ok(Self { config, token: token.to_string(), service: Mutex::new(Some(service)), faults: Mutex::default() })
    }

    /// Another client of the same running site, speaking with `token`.
    pub fn as_peer(&self, token: &str) -> Self {
        let service = self.service.lock().expect("lock").clone();
        Self { config: self.config.clone(), token: token.to_string(), service: Mutex::new(service), faults: Mutex::default() }
    }

    pub fn config(&self) -> &SiteConfig {
        &self.config
    }

    pub fn service(&self) -> Option<Arc<SiteService>> {
        self.service.lock().expect("lock").clone()
    }

    pub fn inject(&self, fault: Fault) {
        self.faults.lock().expect("lock").push_back(fault);
    }

    /// Drops the in-memory service. Until [`restart`](Self::restart), every
    /// call fails as undelivered.
    pub fn crash(&self) {
        self.service.lock().expect("lock").take();
    }

    /// Reopens the service from its workspace.
    pub fn restart(&self) -> Result<(), SiteError> {
        let service = Arc::new(SiteService::open(&self.config)?);
        *self.service.lock().expect("lock") = Some(service);
        Ok(())
    }

    fn call(&self, req: SiteRequest<'_>) -> Result<SiteReply, TransportError> {
        let service = self.service().ok_or_else(|| TransportError::NotDelivered(format!("{} is down", self.config.name)))?;
        Ok(service.handle(Some(&self.token), req))
    }
}

impl SiteTransport for LoopbackSite {
    fn health(&self) -> Result<SiteReply, TransportError> {
        self.call(SiteRequest::Health)
    }

    fn upload(&self, body: &[u8]) -> Result<SiteReply, TransportError> {
        self.call(SiteRequest::Upload { body })
    }

    fn execute(&self, defn_id: &str, body: &[u8]) -> Result<SiteReply, TransportError> {
        let fault = self.faults.lock().expect("lock").pop_front();
        match fault {
            Some(Fault::Drop) => Err(TransportError::NotDelivered("injected drop".into())),
            Some(Fault::LoseReply) => {
                self.call(SiteRequest::Execute { defn_id, body })?;
                Err(TransportError::NoReply("injected lost reply".into()))
            }
            Some(Fault::Pass) | None => self.call(SiteRequest::Execute { defn_id, body }),
        }
    }

    fn status(&self, defn_id: &str) -> Result<SiteReply, TransportError> {
        self.call(SiteRequest::Status { defn_id })
    }

    fn withdraw(&self, defn_id: &str) -> Result<SiteReply, TransportError> {
        self.call(SiteRequest::Withdraw { defn_id })
    }

    fn read_log(&self, defn_id: &str) -> Result<SiteReply, TransportError> {
        self.call(SiteRequest::ReadLog { defn_id, since: None, until: None })
    }

    fn describe(&self) -> String {
        format!("loopback:{}", self.config.name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("expected {expected} datasets, got {actual}")]
    Count { expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Site(#[from] SiteError),
    #[error(transparent)]
    Master(#[from] MasterError),
    #[error("site {site} rejected its data: {messages:?}")]
    Rejected { site: String, messages: Vec<String> },
    #[error("simulated data: {0}")]
    Data(String),
}

/// Loopback sites `site1..siteN` sharing one computation, each with its own
/// workspace under a temporary directory (or a caller-supplied root).
pub struct SimFederation {
    _tmp: Option<tempfile::TempDir>,
    root: PathBuf,
    defn: ComputationDefinition,
    sites: Vec<Arc<LoopbackSite>>,
}

/// Starts `n` loopback sites and uploads `defn` with `datasets[j]` (CSV
/// text) to site `j+1`. Every upload must validate.
pub fn spawn_sites(n: usize, defn: &ComputationDefinition, datasets: &[String]) -> Result<SimFederation, SimError> {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path().to_path_buf();
    let mut fed = spawn_sites_in(&root, n, defn, datasets)?;
    fed._tmp = Some(tmp);
    Ok(fed)
}

/// As [`spawn_sites`], with workspaces under `root`.
pub fn spawn_sites_in(root: &Path, n: usize, defn: &ComputationDefinition, datasets: &[String]) -> Result<SimFederation, SimError> {
    if datasets.len() != n || n == 0 {
        return Err(SimError::Count { expected: n, actual: datasets.len() });
    }
    let mut sites = Vec::with_capacity(n);
    for (j, csv) in datasets.iter().enumerate() {
        let name = format!("site{}", j + 1);
        let site = Arc::new(LoopbackSite::open(sim_site_config(&name, root.join(&name)), MASTER_TOKEN)?);
        let handle = SiteHandle::new(&name, site.clone(), format!("{name}.csv"));
        let report = upload_computation(&handle, defn, csv)?;
        if !report.ok {
            return Err(SimError::Rejected { site: name, messages: report.messages });
        }
        sites.push(site);
    }
    Ok(SimFederation { _tmp: None, root: root.to_path_buf(), defn: defn.clone(), sites })
}

impl SimFederation {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn defn(&self) -> &ComputationDefinition {
        &self.defn
    }

    pub fn site(&self, j: usize) -> &Arc<LoopbackSite> {
        &self.sites[j]
    }

    pub fn sites(&self) -> &[Arc<LoopbackSite>] {
        &self.sites
    }

    pub fn handles(&self) -> Vec<SiteHandle> {
        self.sites
            .iter()
            .map(|s| {
                let name = s.config().name.clone();
                SiteHandle::new(&name, s.clone() as Arc<dyn SiteTransport>, format!("{name}.csv"))
            })
            .collect()
    }

    /// A master with every site added in order.
    pub fn master(&self) -> Result<MasterState, MasterError> {
        let mut master = MasterState::new(self.defn.clone());
        for h in self.handles() {
            master.add_site(h)?;
        }
        Ok(master)
    }

    /// Number of `method` requests `site j` has logged for this computation.
    pub fn logged_requests(&self, j: usize, method: &str) -> usize {
        let Some(service) = self.sites[j].service() else { return 0 };
        let filter = crate::site::LogFilter { defn_id: Some(self.defn.id()), since: None, until: None };
        service
            .request_log()
            .query(&filter)
            .map(|entries| entries.iter().filter(|e| e.method == method).count())
            .unwrap_or(0)
    }
}

/// A definition whose id and timestamp come from `seed`, so reruns produce
/// identical bytes.
pub fn seeded_definition(seed: u64, comp_type: CompType, formula: Option<ModelFormula>, name: &str) -> ComputationDefinition {
    let id = ComputationId::from_u128(rng(seed ^ 0x5eed).random());
    let created_at = DateTime::from_timestamp(0, 0).expect("epoch");
    ComputationDefinition::new(id, comp_type, formula, name, format!("simulated {}", comp_type.display_name()), created_at)
        .expect("formula matches type")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxSimConfig {
    pub seed: u64,
    pub sites: usize,
    pub n_per_site: usize,
    pub beta: Vec<f64>,
}

impl Default for CoxSimConfig {
    fn default() -> Self {
        Self { seed: 1, sites: 3, n_per_site: 200, beta: vec![0.5, -0.3, 0.2] }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoxSimReport {
    pub defn_id: String,
    pub distributed: CoxFitResult,
    pub pooled: CoxFitResult,
    pub max_abs_beta_diff: f64,
    pub max_abs_se_diff: f64,
}

/// Generates data, splits it over loopback sites and fits the model both
/// distributed and pooled.
pub fn simulate_cox(cfg: &CoxSimConfig) -> Result<CoxSimReport, SimError> {
    let p = cfg.beta.len();
    let covs: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    let formula: ModelFormula =
        format!("Surv(time, status) ~ {}", covs.join(" + ")).parse().map_err(|e| SimError::Data(format!("{e}")))?;
    let defn = seeded_definition(cfg.seed, CompType::StratifiedCoxModel, Some(formula), "simulated cox");
    let data = SurvivalScenario::new(cfg.sites * cfg.n_per_site, cfg.beta.clone())
        .generate(&mut rng(cfg.seed))
        .map_err(|e| SimError::Data(e.to_string()))?;
    let parts = split_dataset(&data, cfg.sites).map_err(|e| SimError::Data(e.to_string()))?;
    let csvs: Vec<String> = parts.iter().map(|d| survival_to_csv(d, "time", "status")).collect();
    let fed = spawn_sites(cfg.sites, &defn, &csvs)?;
    let opts = FitOptions::default();
    let distributed = fed.master()?.run_cox(&opts)?;
    let mut pooled = cox_fit_pooled(&parts, &opts).map_err(|e| SimError::Data(e.to_string()))?;
    pooled.covariate_names = distributed.covariate_names.clone();
    let max_abs_beta_diff = max_abs_diff(distributed.beta.as_slice(), pooled.beta.as_slice());
    let max_abs_se_diff = max_abs_diff(&distributed.standard_errors(), &pooled.standard_errors());
    Ok(CoxSimReport { defn_id: defn.id().to_string(), distributed, pooled, max_abs_beta_diff, max_abs_se_diff })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdSimConfig {
    pub seed: u64,
    pub sites: usize,
    pub n_per_site: usize,
    pub p: usize,
    pub k: usize,
    pub thr: f64,
    pub max_iter: usize,
}

impl Default for SvdSimConfig {
    fn default() -> Self {
        Self { seed: 1, sites: 3, n_per_site: 50, p: 6, k: 2, thr: 1e-12, max_iter: 2000 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SvdSimReport {
    pub defn_id: String,
    pub distributed: SvdResult,
    pub oracle: SvdResult,
    pub max_abs_d_diff: f64,
    pub max_v_distance: f64,
}

pub fn simulate_svd(cfg: &SvdSimConfig) -> Result<SvdSimReport, SimError> {
    let defn = seeded_definition(cfg.seed, CompType::RankKSvd, None, "simulated svd");
    let x = standard_normal_matrix(cfg.sites * cfg.n_per_site, cfg.p, &mut rng(cfg.seed));
    let csvs: Vec<String> =
        contiguous_split(x.rows(), cfg.sites).into_iter().map(|r| matrix_to_csv(&row_block(&x, r))).collect();
    let fed = spawn_sites(cfg.sites, &defn, &csvs)?;
    let opts = SvdOptions { k: cfg.k, thr: cfg.thr, max_iter: cfg.max_iter };
    let distributed = fed.master()?.run_svd(&opts)?;
    let oracle = svd_oracle(&x, cfg.k).map_err(|e| SimError::Data(e.to_string()))?;
    let max_abs_d_diff = max_abs_diff(distributed.d.as_slice(), oracle.d.as_slice());
    let max_v_distance = (0..cfg.k)
        .map(|r| crate::svd::sign_aligned_distance(&distributed.v.column(r), &oracle.v.column(r)))
        .fold(0.0, f64::max);
    Ok(SvdSimReport { defn_id: defn.id().to_string(), distributed, oracle, max_abs_d_diff, max_v_distance })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One site as seen by the conformance suite: a client for the analyst who
/// uploads, and one for a second, unrelated peer.
pub struct SiteUnderTest {
    pub owner: Box<dyn SiteTransport>,
    pub other: Box<dyn SiteTransport>,
    /// Keeps a server alive for the duration of a scenario.
    pub guard: Option<Box<dyn std::any::Any>>,
}

/// A reply reduced to what must match: the status and the decoded body.
#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub step: String,
    pub status: Option<u16>,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub name: &'static str,
    pub observed: Vec<Observed>,
}

/// Runs every scenario against a fresh site from `make(scenario, workspace)`.
pub fn conformance_suite(mut make: impl FnMut(&str, &Path) -> SiteUnderTest) -> Result<Vec<ScenarioOutcome>, SimError> {
    let tmp = tempfile::tempdir()?;
    let cox = conformance_cox_definition();
    let svd = seeded_definition(11, CompType::RankKSvd, None, "conformance svd");
    let cox_upload = encode(&WireMessage::UploadComputation {
        definition: cox.clone(),
        data: crate::protocol::DataFile { file_name: "site.csv".into(), csv: conformance_cox_csv() },
    });
    let svd_upload = encode(&WireMessage::UploadComputation {
        definition: svd.clone(),
        data: crate::protocol::DataFile { file_name: "site.csv".into(), csv: conformance_matrix_csv() },
    });
    let exec = |defn: &ComputationDefinition, params: ExecuteParams| {
        encode(&WireMessage::ExecuteRequest { defn_id: defn.id(), params })
    };

    let mut outcomes = Vec::new();
    let mut scenario = |name: &'static str, steps: &dyn Fn(&SiteUnderTest, &mut Vec<Observed>)| {
        let ws = tmp.path().join(name);
        let site = make(name, &ws);
        let mut observed = Vec::new();
        steps(&site, &mut observed);
        outcomes.push(ScenarioOutcome { name, observed });
    };

    let cox_id = cox.id().to_string();
    let svd_id = svd.id().to_string();
    scenario("cox_stats", &|s, o| {
        o.push(observe("upload", s.owner.upload(&cox_upload)));
        o.push(observe("reupload", s.owner.upload(&cox_upload)));
        o.push(observe("status", s.owner.status(&cox_id)));
        for beta in [vec![0.0, 0.0], vec![0.3, -0.7]] {
            let req = exec(&cox, ExecuteParams::CoxLocalStats { beta: Vector::new(beta).expect("finite") });
            o.push(observe("stats", s.owner.execute(&cox_id, &req)));
        }
    });
    scenario("unknown_id_denied", &|s, o| {
        let req = exec(&cox, ExecuteParams::CoxLocalStats { beta: Vector::zeros(2) });
        o.push(observe("execute", s.owner.execute(&cox_id, &req)));
        o.push(observe("status", s.owner.status(&cox_id)));
    });
    scenario("cross_tenant", &|s, o| {
        o.push(observe("upload", s.owner.upload(&cox_upload)));
        let req = exec(&cox, ExecuteParams::CoxLocalStats { beta: Vector::zeros(2) });
        o.push(observe("other_execute", s.other.execute(&cox_id, &req)));
        o.push(observe("other_withdraw", s.other.withdraw(&cox_id)));
        o.push(observe("other_upload_same_id", s.other.upload(&cox_upload)));
    });
    scenario("illegal_and_malformed", &|s, o| {
        o.push(observe("upload", s.owner.upload(&cox_upload)));
        o.push(observe("svd_on_cox", s.owner.execute(&cox_id, &exec(&cox, ExecuteParams::SvdInit))));
        let wrong_p = exec(&cox, ExecuteParams::CoxLocalStats { beta: Vector::zeros(3) });
        o.push(observe("wrong_p", s.owner.execute(&cox_id, &wrong_p)));
        o.push(observe("garbage", s.owner.execute(&cox_id, b"{not json")));
        let mut future: Value = serde_json::from_slice(&exec(&cox, ExecuteParams::CoxLocalStats { beta: Vector::zeros(2) }))
            .expect("own encoding");
        future["protocolVersion"] = Value::from(99);
        o.push(observe("future_version", s.owner.execute(&cox_id, future.to_string().as_bytes())));
    });
    scenario("svd_three_iterations", &|s, o| {
        o.push(observe("upload", s.owner.upload(&svd_upload)));
        o.push(observe("init", s.owner.execute(&svd_id, &exec(&svd, ExecuteParams::SvdInit))));
        let mut u_norm = 1.0;
        let mut v = Vector::zeros(3);
        for _ in 0..3 {
            let r = s.owner.execute(&svd_id, &exec(&svd, ExecuteParams::SvdVStep { u_norm }));
            if let Some(WireMessage::ExecuteResponse { result: crate::protocol::ExecuteResult::SvdVStep { v: got }, .. }) =
                r.as_ref().ok().and_then(|r| crate::protocol::decode(&r.body).ok())
            {
                v = got.scaled(1.0 / crate::numerics::norm2(&got));
            }
            o.push(observe("v_step", r));
            let r = s.owner.execute(&svd_id, &exec(&svd, ExecuteParams::SvdUStep { v: v.clone() }));
            if let Some(WireMessage::ExecuteResponse { result: crate::protocol::ExecuteResult::SvdUStep { u_norm_sq }, .. }) =
                r.as_ref().ok().and_then(|r| crate::protocol::decode(&r.body).ok())
            {
                u_norm = u_norm_sq.sqrt();
            }
            o.push(observe("u_step", r));
        }
        let fin = exec(&svd, ExecuteParams::SvdFinalizeComponent { v: v.clone(), d: u_norm });
        o.push(observe("finalize", s.owner.execute(&svd_id, &fin)));
        o.push(observe("status", s.owner.status(&svd_id)));
    });
    Ok(outcomes)
}

/// Describes every place two suite runs differ.
pub fn conformance_diff(a: &[ScenarioOutcome], b: &[ScenarioOutcome]) -> Vec<String> {
    let mut out = Vec::new();
    if a.len() != b.len() {
        out.push(format!("{} scenarios vs {}", a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(b) {
        if x.observed.len() != y.observed.len() {
            out.push(format!("{}: {} steps vs {}", x.name, x.observed.len(), y.observed.len()));
        }
        for (i, (p, q)) in x.observed.iter().zip(&y.observed).enumerate() {
            if p != q {
                out.push(format!("{} step {i} ({}): {:?} {} vs {:?} {}", x.name, p.step, p.status, p.body, q.status, q.body));
            }
        }
    }
    out
}

fn observe(step: &str, r: Result<SiteReply, TransportError>) -> Observed {
    match r {
        Ok(reply) => Observed {
            step: step.to_string(),
            status: Some(reply.status),
            body: serde_json::from_slice(&reply.body).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&reply.body).into())),
        },
        Err(e) => Observed { step: step.to_string(), status: None, body: Value::String(e.to_string()) },
    }
}

fn conformance_cox_definition() -> ComputationDefinition {
    let formula: ModelFormula = "Surv(time, status) ~ age + dose".parse().expect("valid formula");
    seeded_definition(7, CompType::StratifiedCoxModel, Some(formula), "conformance cox")
}

fn conformance_cox_csv() -> String {
    "time,status,age,dose\n5,1,0.5,1\n8,0,-1.2,0\n3,1,0.3,1\n8,1,1.1,0\n12,0,-0.4,1\n2,1,0.9,0\n7,1,-0.8,1\n".into()
}

fn conformance_matrix_csv() -> String {
    "a,b,c\n1,2,0.5\n-1,0.3,2\n0.7,-1.5,1\n2,1,-0.2\n".into()
}

/// Loopback sites for [`conformance_suite`].
pub fn loopback_factory() -> impl FnMut(&str, &Path) -> SiteUnderTest {
    |_, ws| {
        let site = LoopbackSite::open(sim_site_config("site1", ws), MASTER_TOKEN).expect("open loopback site");
        let other = site.as_peer(OTHER_TOKEN);
        SiteUnderTest { owner: Box::new(site), other: Box::new(other), guard: None }
    }
}

/// HTTP servers on ephemeral ports for [`conformance_suite`].
pub fn http_factory() -> impl FnMut(&str, &Path) -> SiteUnderTest {
    |_, ws| {
        let server: SiteServerHandle = spawn_site_server(&sim_site_config("site1", ws)).expect("start site server");
        let url = server.url();
        SiteUnderTest {
            owner: Box::new(HttpTransport::new(&url, MASTER_TOKEN)),
            other: Box::new(HttpTransport::new(&url, OTHER_TOKEN)),
            guard: Some(Box::new(server)),
        }
    }
}

/// Starts one HTTP site per CSV, uploads `defn` to each and returns handles
/// pointing at them. The servers stop when the returned guards drop.
pub fn spawn_http_sites(
    root: &Path,
    defn: &ComputationDefinition,
    datasets: &[String],
) -> Result<(Vec<SiteServerHandle>, Vec<SiteHandle>), SimError> {
    let mut servers = Vec::new();
    let mut handles = Vec::new();
    for (j, csv) in datasets.iter().enumerate() {
        let name = format!("site{}", j + 1);
        let server = spawn_site_server(&sim_site_config(&name, root.join(&name))).map_err(|e| match e {
            ServeError::Site(e) => SimError::Site(e),
            other => SimError::Data(other.to_string()),
        })?;
        let handle = SiteHandle::http(&name, &server.url(), MASTER_TOKEN, format!("{name}.csv"));
        let report = upload_computation(&handle, defn, csv)?;
        if !report.ok {
            return Err(SimError::Rejected { site: name, messages: report.messages });
        }
        servers.push(server);
        handles.push(handle);
    }
    Ok((servers, handles))
}
