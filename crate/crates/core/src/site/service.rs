//! The transport-independent core of a site server: requests in as bytes,
//! replies out as bytes. The HTTP layer and the in-process loopback both
//! call [`SiteService::handle`].

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde_json::json;

use super::config::{Peer, SiteConfig};
use super::log::{LogEntry, LogFilter, Outcome, RequestLog};
use super::workspace::{Access, InstanceFile, StoredComputation, Workspace, WorkspaceError};
use crate::compdef::{validate_csv, CompType, ComputationId, SiteData};
use crate::cox::{cox_local_stats, CoxError, TiesMethod};
use crate::protocol::{decode, encode, ErrorCode, ExecuteParams, ExecuteResult, Method, WireMessage, PROTOCOL_VERSION};
use crate::svd::{SvdError, SvdSlaveState};

#[derive(Debug, thiserror::Error)]
pub enum SiteError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("request log: {0}")]
    Log(#[from] std::io::Error),
    #[error("stored state for {id} does not fit its data: {message}")]
    State { id: ComputationId, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteRequest<'a> {
    Health,
    Upload { body: &'a [u8] },
    Execute { defn_id: &'a str, body: &'a [u8] },
    Status { defn_id: &'a str },
    Withdraw { defn_id: &'a str },
    ReadLog { defn_id: &'a str, since: Option<DateTime<Utc>>, until: Option<DateTime<Utc>> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteReply {
    pub status: u16,
    pub body: Vec<u8>,
}

impl SiteReply {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

struct Live {
    stored: StoredComputation,
    svd: Option<SvdSlaveState>,
}

/// Who is asking. `None` inside means the request carried no known token.
struct Caller<'a> {
    peer: Option<&'a Peer>,
}

impl Caller<'_> {
    fn name(&self) -> &str {
        self.peer.map_or("anonymous", |p| p.name.as_str())
    }

    fn is_operator(&self) -> bool {
        self.peer.is_some_and(|p| p.operator)
    }
}

/// Failure carried through a handler: wire code, message and log outcome.
struct Fail {
    code: ErrorCode,
    message: String,
    report: Option<crate::compdef::DatasetValidationReport>,
}

impl Fail {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), report: None }
    }

    fn outcome(&self) -> Outcome {
        match self.code {
            ErrorCode::Unauthenticated | ErrorCode::Forbidden | ErrorCode::NotFound => Outcome::Denied,
            _ => Outcome::Error,
        }
    }
}

pub struct SiteService {
    name: String,
    gatekeeping: bool,
    peers: Vec<Peer>,
    workspace: Workspace,
    log: RequestLog,
    computations: RwLock<BTreeMap<ComputationId, Arc<Mutex<Live>>>>,
    /// Serializes uploads and withdrawals against each other.
    registry_lock: Mutex<()>,
}

impl SiteService {
    /// Opens the workspace and resumes every stored computation.
    pub fn open(config: &SiteConfig) -> Result<Self, SiteError> {
        let workspace = Workspace::open(&config.workspace)?;
        let log = RequestLog::open(config.log_path())?;
        let mut computations = BTreeMap::new();
        for stored in workspace.load_all()? {
            let id = stored.definition.id();
            let svd = match (&stored.data, &stored.instance.svd) {
                (SiteData::Matrix(x), Some(state)) => Some(
                    SvdSlaveState::resume(x.clone(), state.clone())
                        .map_err(|e| SiteError::State { id, message: e.to_string() })?,
                ),
                (SiteData::Matrix(x), None) => {
                    Some(SvdSlaveState::new(x.clone()).map_err(|e| SiteError::State { id, message: e.to_string() })?)
                }
                _ => None,
            };
            computations.insert(id, Arc::new(Mutex::new(Live { stored, svd })));
        }
        Ok(Self {
            name: config.name.clone(),
            gatekeeping: config.gatekeeping,
            peers: config.peers.clone(),
            workspace,
            log,
            computations: RwLock::new(computations),
            registry_lock: Mutex::new(()),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn request_log(&self) -> &RequestLog {
        &self.log
    }

    pub fn computation_ids(&self) -> Vec<ComputationId> {
        self.computations.read().unwrap_or_else(|p| p.into_inner()).keys().copied().collect()
    }

    pub fn handle(&self, token: Option<&str>, req: SiteRequest<'_>) -> SiteReply {
        if let SiteRequest::Health = req {
            let body = json!({"status": "ok", "site": self.name, "protocolVersion": PROTOCOL_VERSION});
            return SiteReply { status: 200, body: body.to_string().into_bytes() };
        }
        let start = Instant::now();
        let caller = Caller { peer: token.and_then(|t| self.peers.iter().find(|p| p.token == t)) };
        let (method, path_id) = match req {
            SiteRequest::Health => unreachable!(),
            SiteRequest::Upload { .. } => ("Upload".to_string(), None),
            SiteRequest::Execute { defn_id, body } => (peek_method(body), Some(defn_id)),
            SiteRequest::Status { defn_id } => ("Status".into(), Some(defn_id)),
            SiteRequest::Withdraw { defn_id } => ("Withdraw".into(), Some(defn_id)),
            SiteRequest::ReadLog { defn_id, .. } => ("ReadLog".into(), Some(defn_id)),
        };
        let mut logged_id = path_id.and_then(|s| s.parse::<ComputationId>().ok());

        let result = if self.gatekeeping && caller.peer.is_none() {
            Err(Fail::new(ErrorCode::Unauthenticated, "missing or unknown bearer token"))
        } else {
            match req {
                SiteRequest::Health => unreachable!(),
                SiteRequest::Upload { body } => self.upload(&caller, body, &mut logged_id),
                SiteRequest::Execute { defn_id, body } => self.execute(&caller, defn_id, body),
                SiteRequest::Status { defn_id } => self.status(&caller, defn_id),
                SiteRequest::Withdraw { defn_id } => self.withdraw(&caller, defn_id),
                SiteRequest::ReadLog { defn_id, since, until } => self.read_log(&caller, defn_id, since, until),
            }
        };

        let (reply, outcome, detail) = match result {
            Ok(body) => (SiteReply { status: 200, body }, Outcome::Ok, None),
            Err(fail) => {
                let outcome = fail.outcome();
                let detail = format!("{}: {}", fail.code, fail.message);
                let msg = WireMessage::ErrorResponse {
                    defn_id: logged_id,
                    code: fail.code,
                    message: fail.message,
                    site: Some(self.name.clone()),
                    report: fail.report,
                };
                (SiteReply { status: fail.code.http_status(), body: encode(&msg) }, outcome, Some(detail))
            }
        };
        let entry = LogEntry {
            timestamp: Utc::now(),
            peer: caller.name().to_string(),
            defn_id: logged_id,
            method,
            outcome,
            detail,
            duration_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if let Err(e) = self.log.append(&entry) {
            tracing::error!(site = %self.name, error = %e, "request log append failed");
            let msg = WireMessage::error(logged_id, ErrorCode::Internal, format!("request log: {e}"), Some(&self.name));
            return SiteReply { status: 500, body: encode(&msg) };
        }
        reply
    }

    fn lookup(&self, raw_id: &str) -> Result<(ComputationId, Arc<Mutex<Live>>), Fail> {
        let id: ComputationId =
            raw_id.parse().map_err(|_| Fail::new(ErrorCode::NotFound, format!("no computation {raw_id:?}")))?;
        let map = self.computations.read().unwrap_or_else(|p| p.into_inner());
        let live = map.get(&id).cloned().ok_or_else(|| Fail::new(ErrorCode::NotFound, format!("no computation {id}")))?;
        Ok((id, live))
    }

    /// Knowing an id is not enough: the caller must own it or be an operator.
    fn authorize(&self, caller: &Caller<'_>, live: &Live) -> Result<(), Fail> {
        if !self.gatekeeping || caller.is_operator() || caller.name() == live.stored.access.owner {
            Ok(())
        } else {
            Err(Fail::new(
                ErrorCode::Forbidden,
                format!("peer {} is not authorized for computation {}", caller.name(), live.stored.definition.id()),
            ))
        }
    }

    fn upload(&self, caller: &Caller<'_>, body: &[u8], logged_id: &mut Option<ComputationId>) -> Result<Vec<u8>, Fail> {
        let msg = decode(body).map_err(|e| Fail::new(ErrorCode::BadRequest, e.to_string()))?;
        let WireMessage::UploadComputation { definition, data } = msg else {
            return Err(Fail::new(ErrorCode::BadRequest, format!("expected UploadComputation, got {}", msg.kind())));
        };
        let id = definition.id();
        *logged_id = Some(id);
        let _registry = self.registry_lock.lock().unwrap_or_else(|p| p.into_inner());

        let existing = self.computations.read().unwrap_or_else(|p| p.into_inner()).get(&id).cloned();
        if let Some(live) = existing {
            let live = live.lock().unwrap_or_else(|p| p.into_inner());
            self.authorize(caller, &live)?;
            let same = live.stored.definition.to_canonical_json() == definition.to_canonical_json()
                && live.stored.csv == data.csv;
            if !same {
                return Err(Fail::new(ErrorCode::Conflict, format!("computation {id} already exists with different content")));
            }
            let report = validate_csv(&definition, &data.csv).report;
            return Ok(encode(&WireMessage::ExecuteResponse { defn_id: id, result: ExecuteResult::Upload(report) }));
        }

        let validated = validate_csv(&definition, &data.csv);
        let Some(site_data) = validated.data else {
            let mut fail = Fail::new(ErrorCode::ValidationFailed, validated.report.messages.join("; "));
            fail.report = Some(validated.report);
            return Err(fail);
        };
        let svd = match &site_data {
            SiteData::Matrix(x) => {
                Some(SvdSlaveState::new(x.clone()).map_err(|e| Fail::new(ErrorCode::ValidationFailed, e.to_string()))?)
            }
            SiteData::Survival(_) => None,
        };
        let stored = StoredComputation {
            instance: InstanceFile {
                defn_id: id,
                comp_type: definition.comp_type(),
                last_modified: Utc::now(),
                svd: svd.as_ref().map(|s| s.iteration_state().clone()),
            },
            definition,
            csv: data.csv,
            data: site_data,
            access: Access { owner: caller.name().to_string(), data_file_name: data.file_name },
        };
        if let Err(e) = self.workspace.save(&stored) {
            let _ = self.workspace.remove(id);
            return Err(Fail::new(ErrorCode::Internal, e.to_string()));
        }
        self.computations
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id, Arc::new(Mutex::new(Live { stored, svd })));
        tracing::info!(site = %self.name, defn = %id, owner = caller.name(), "computation registered");
        Ok(encode(&WireMessage::ExecuteResponse { defn_id: id, result: ExecuteResult::Upload(validated.report) }))
    }

    fn execute(&self, caller: &Caller<'_>, raw_id: &str, body: &[u8]) -> Result<Vec<u8>, Fail> {
        let (id, live) = self.lookup(raw_id)?;
        let mut live = live.lock().unwrap_or_else(|p| p.into_inner());
        self.authorize(caller, &live)?;
        let msg = decode(body).map_err(|e| {
            let code = match e {
                crate::protocol::DecodeError::UnsupportedVersion(_) => ErrorCode::UnsupportedVersion,
                _ => ErrorCode::BadRequest,
            };
            Fail::new(code, e.to_string())
        })?;
        let WireMessage::ExecuteRequest { defn_id, params } = msg else {
            return Err(Fail::new(ErrorCode::BadRequest, format!("expected ExecuteRequest, got {}", msg.kind())));
        };
        if defn_id != id {
            return Err(Fail::new(ErrorCode::BadRequest, format!("body names {defn_id}, path names {id}")));
        }
        let comp_type = live.stored.definition.comp_type();
        let method = params.method();
        if !method.legal_for(comp_type) {
            return Err(Fail::new(ErrorCode::IllegalMethod, format!("{method} is not available for a {comp_type} computation")));
        }
        let result = match params {
            ExecuteParams::CoxLocalStats { beta } => {
                let SiteData::Survival(data) = &live.stored.data else { unreachable!("checked by legal_for") };
                let stats = cox_local_stats(data, &beta, TiesMethod::Efron).map_err(|e| match e {
                    CoxError::Dimension(m) => Fail::new(ErrorCode::BadRequest, m),
                    other => Fail::new(ErrorCode::NumericFailure, other.to_string()),
                })?;
                ExecuteResult::CoxLocalStats(stats)
            }
            params => self.svd_step(&mut live, params)?,
        };
        Ok(encode(&WireMessage::ExecuteResponse { defn_id: id, result }))
    }

    /// Runs one SVD step and persists the new state before replying. If the
    /// state cannot be written, the in-memory state is rolled back.
    fn svd_step(&self, live: &mut Live, params: ExecuteParams) -> Result<ExecuteResult, Fail> {
        let svd = live.svd.as_mut().expect("SVD computations always carry state");
        let before = svd.iteration_state().clone();
        let numeric = |e: SvdError| match e {
            SvdError::Dimension(m) => Fail::new(ErrorCode::BadRequest, m),
            other => Fail::new(ErrorCode::NumericFailure, other.to_string()),
        };
        let result = match params {
            ExecuteParams::SvdInit => ExecuteResult::SvdInit { n: svd.init(), p: svd.p() },
            ExecuteParams::SvdVStep { u_norm } => ExecuteResult::SvdVStep { v: svd.v_step(u_norm).map_err(numeric)? },
            ExecuteParams::SvdUStep { v } => {
                if v.len() != svd.p() {
                    return Err(Fail::new(ErrorCode::BadRequest, format!("v has {} entries, expected {}", v.len(), svd.p())));
                }
                ExecuteResult::SvdUStep { u_norm_sq: svd.u_step(&v).map_err(numeric)? }
            }
            ExecuteParams::SvdFinalizeComponent { v, d } => {
                svd.finalize_component(&v, d).map_err(numeric)?;
                ExecuteResult::SvdFinalizeComponent { components: svd.iteration_state().components() }
            }
            ExecuteParams::CoxLocalStats { .. } => unreachable!("handled by the caller"),
        };
        let mut instance = live.stored.instance.clone();
        instance.svd = Some(svd.iteration_state().clone());
        instance.last_modified = Utc::now();
        if let Err(e) = self.workspace.save_instance(&instance) {
            let x = svd.x().clone();
            *svd = SvdSlaveState::resume(x, before).expect("previous state fit the data");
            return Err(Fail::new(ErrorCode::Internal, e.to_string()));
        }
        live.stored.instance = instance;
        Ok(result)
    }

    fn status(&self, caller: &Caller<'_>, raw_id: &str) -> Result<Vec<u8>, Fail> {
        let (id, live) = self.lookup(raw_id)?;
        let live = live.lock().unwrap_or_else(|p| p.into_inner());
        self.authorize(caller, &live)?;
        let def = &live.stored.definition;
        let mut body = json!({
            "defnId": id.to_string(),
            "compType": def.comp_type().as_str(),
            "name": def.name(),
            "dataFileName": live.stored.access.data_file_name,
            "site": self.name,
        });
        if def.comp_type() == CompType::RankKSvd {
            body["components"] = json!(live.svd.as_ref().map_or(0, |s| s.iteration_state().components()));
        }
        Ok(body.to_string().into_bytes())
    }

    fn withdraw(&self, caller: &Caller<'_>, raw_id: &str) -> Result<Vec<u8>, Fail> {
        if self.gatekeeping && !caller.is_operator() {
            return Err(Fail::new(ErrorCode::Forbidden, "only a site operator may withdraw computations"));
        }
        let _registry = self.registry_lock.lock().unwrap_or_else(|p| p.into_inner());
        let (id, live) = self.lookup(raw_id)?;
        // Wait for any in-flight request on this computation to finish.
        let _live = live.lock().unwrap_or_else(|p| p.into_inner());
        self.computations.write().unwrap_or_else(|p| p.into_inner()).remove(&id);
        self.workspace.remove(id).map_err(|e| Fail::new(ErrorCode::Internal, e.to_string()))?;
        tracing::info!(site = %self.name, defn = %id, "computation withdrawn");
        Ok(json!({"withdrawn": id.to_string(), "site": self.name}).to_string().into_bytes())
    }

    fn read_log(
        &self,
        caller: &Caller<'_>,
        raw_id: &str,
        since: Option<DateTime<Utc>>,
        until: Option<DateTime<Utc>>,
    ) -> Result<Vec<u8>, Fail> {
        let id: ComputationId =
            raw_id.parse().map_err(|_| Fail::new(ErrorCode::NotFound, format!("no computation {raw_id:?}")))?;
        if self.gatekeeping && !caller.is_operator() {
            let (_, live) = self.lookup(raw_id)?;
            let live = live.lock().unwrap_or_else(|p| p.into_inner());
            self.authorize(caller, &live)?;
        }
        let entries = self
            .log
            .query(&LogFilter { defn_id: Some(id), since, until })
            .map_err(|e| Fail::new(ErrorCode::Internal, e.to_string()))?;
        Ok(serde_json::to_vec(&json!({ "entries": entries })).expect("plain values"))
    }
}

/// Best-effort method name for the log, read before full validation.
fn peek_method(body: &[u8]) -> String {
    serde_json::from_slice::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v.get("method").and_then(|m| m.as_str()).and_then(Method::parse))
        .map_or_else(|| "Execute".to_string(), |m| m.as_str().to_string())
}
