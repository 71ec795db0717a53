//! Wire messages exchanged between the master and site servers.
//!
//! Every message is one canonical JSON object carrying `protocolVersion` and
//! `kind`. Floats are written in shortest round-trip form, so decoding an
//! encoded message reproduces every `f64` bit for bit.

use std::fmt;

use chrono::{DateTime, Utc};
use serde_json::{json, Map, Value};

use crate::canonical::to_canonical_string;
use crate::compdef::{CompType, ComputationDefinition, ComputationId, DatasetValidationReport};
use crate::cox::CoxLocalStats;
use crate::numerics::{Matrix, Vector};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    CoxLocalStats,
    SvdInit,
    SvdVStep,
    SvdUStep,
    SvdFinalizeComponent,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::CoxLocalStats, Method::SvdInit, Method::SvdVStep, Method::SvdUStep, Method::SvdFinalizeComponent];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CoxLocalStats => "CoxLocalStats",
            Method::SvdInit => "SvdInit",
            Method::SvdVStep => "SvdVStep",
            Method::SvdUStep => "SvdUStep",
            Method::SvdFinalizeComponent => "SvdFinalizeComponent",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn legal_for(self, comp_type: CompType) -> bool {
        match self {
            Method::CoxLocalStats => comp_type == CompType::StratifiedCoxModel,
            _ => comp_type == CompType::RankKSvd,
        }
    }

    /// Whether the method changes persisted site state.
    pub fn is_mutating(self) -> bool {
        !matches!(self, Method::CoxLocalStats)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecuteParams {
    CoxLocalStats { beta: Vector },
    SvdInit,
    SvdVStep { u_norm: f64 },
    SvdUStep { v: Vector },
    SvdFinalizeComponent { v: Vector, d: f64 },
}

impl ExecuteParams {
    pub fn method(&self) -> Method {
        match self {
            ExecuteParams::CoxLocalStats { .. } => Method::CoxLocalStats,
            ExecuteParams::SvdInit => Method::SvdInit,
            ExecuteParams::SvdVStep { .. } => Method::SvdVStep,
            ExecuteParams::SvdUStep { .. } => Method::SvdUStep,
            ExecuteParams::SvdFinalizeComponent { .. } => Method::SvdFinalizeComponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecuteResult {
    CoxLocalStats(CoxLocalStats),
    SvdInit { n: usize, p: usize },
    SvdVStep { v: Vector },
    SvdUStep { u_norm_sq: f64 },
    SvdFinalizeComponent { components: usize },
    /// Acknowledges an accepted upload.
    Upload(DatasetValidationReport),
}

impl ExecuteResult {
    /// The `method` field on the wire.
    pub fn method_name(&self) -> &'static str {
        match self {
            ExecuteResult::CoxLocalStats(_) => Method::CoxLocalStats.as_str(),
            ExecuteResult::SvdInit { .. } => Method::SvdInit.as_str(),
            ExecuteResult::SvdVStep { .. } => Method::SvdVStep.as_str(),
            ExecuteResult::SvdUStep { .. } => Method::SvdUStep.as_str(),
            ExecuteResult::SvdFinalizeComponent { .. } => Method::SvdFinalizeComponent.as_str(),
            ExecuteResult::Upload(_) => "Upload",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    BadRequest,
    UnsupportedVersion,
    Unauthenticated,
    Forbidden,
    NotFound,
    Conflict,
    ValidationFailed,
    IllegalMethod,
    NumericFailure,
    Internal,
}

impl ErrorCode {
    const ALL: [ErrorCode; 10] = [
        ErrorCode::BadRequest,
        ErrorCode::UnsupportedVersion,
        ErrorCode::Unauthenticated,
        ErrorCode::Forbidden,
        ErrorCode::NotFound,
        ErrorCode::Conflict,
        ErrorCode::ValidationFailed,
        ErrorCode::IllegalMethod,
        ErrorCode::NumericFailure,
        ErrorCode::Internal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::BadRequest => "BadRequest",
            ErrorCode::UnsupportedVersion => "UnsupportedVersion",
            ErrorCode::Unauthenticated => "Unauthenticated",
            ErrorCode::Forbidden => "Forbidden",
            ErrorCode::NotFound => "NotFound",
            ErrorCode::Conflict => "Conflict",
            ErrorCode::ValidationFailed => "ValidationFailed",
            ErrorCode::IllegalMethod => "IllegalMethod",
            ErrorCode::NumericFailure => "NumericFailure",
            ErrorCode::Internal => "Internal",
        }
    }

    pub fn parse(s: &str) -> Option<ErrorCode> {
        ErrorCode::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::BadRequest | ErrorCode::UnsupportedVersion | ErrorCode::IllegalMethod => 400,
            ErrorCode::Unauthenticated => 401,
            ErrorCode::Forbidden => 403,
            ErrorCode::NotFound => 404,
            ErrorCode::Conflict => 409,
            ErrorCode::ValidationFailed | ErrorCode::NumericFailure => 422,
            ErrorCode::Internal => 500,
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataFile {
    pub file_name: String,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    UploadComputation {
        definition: ComputationDefinition,
        data: DataFile,
    },
    ExecuteRequest {
        defn_id: ComputationId,
        params: ExecuteParams,
    },
    ExecuteResponse {
        defn_id: ComputationId,
        result: ExecuteResult,
    },
    /// `defn_id` is absent only when the failing request could not be read
    /// far enough to name one.
    ErrorResponse {
        defn_id: Option<ComputationId>,
        code: ErrorCode,
        message: String,
        site: Option<String>,
        report: Option<DatasetValidationReport>,
    },
}

impl WireMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::UploadComputation { .. } => "UploadComputation",
            WireMessage::ExecuteRequest { .. } => "ExecuteRequest",
            WireMessage::ExecuteResponse { .. } => "ExecuteResponse",
            WireMessage::ErrorResponse { .. } => "ErrorResponse",
        }
    }

    pub fn defn_id(&self) -> Option<ComputationId> {
        match self {
            WireMessage::UploadComputation { definition, .. } => Some(definition.id()),
            WireMessage::ExecuteRequest { defn_id, .. } | WireMessage::ExecuteResponse { defn_id, .. } => {
                Some(*defn_id)
            }
            WireMessage::ErrorResponse { defn_id, .. } => *defn_id,
        }
    }

    pub fn error(
        defn_id: Option<ComputationId>,
        code: ErrorCode,
        message: impl Into<String>,
        site: Option<&str>,
    ) -> Self {
        WireMessage::ErrorResponse {
            defn_id,
            code,
            message: message.into(),
            site: site.map(str::to_string),
            report: None,
        }
    }

    pub fn to_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("protocolVersion".into(), json!(PROTOCOL_VERSION));
        obj.insert("kind".into(), json!(self.kind()));
        match self {
            WireMessage::UploadComputation { definition, data } => {
                obj.insert("definition".into(), definition.to_json_value());
                obj.insert("data".into(), json!({"fileName": data.file_name, "csv": data.csv}));
            }
            WireMessage::ExecuteRequest { defn_id, params } => {
                obj.insert("defnId".into(), json!(defn_id.to_string()));
                obj.insert("method".into(), json!(params.method().as_str()));
                let p = match params {
                    ExecuteParams::CoxLocalStats { beta } => json!({"beta": beta.as_slice()}),
                    ExecuteParams::SvdInit => json!({}),
                    ExecuteParams::SvdVStep { u_norm } => json!({"uNorm": u_norm}),
                    ExecuteParams::SvdUStep { v } => json!({"v": v.as_slice()}),
                    ExecuteParams::SvdFinalizeComponent { v, d } => json!({"v": v.as_slice(), "d": d}),
                };
                obj.insert("params".into(), p);
            }
            WireMessage::ExecuteResponse { defn_id, result } => {
                obj.insert("defnId".into(), json!(defn_id.to_string()));
                obj.insert("method".into(), json!(result.method_name()));
                let r = match result {
                    ExecuteResult::CoxLocalStats(s) => json!({
                        "loglik": s.loglik,
                        "score": s.score.as_slice(),
                        "info": s.info.as_slice(),
                        "nEvents": s.n_events,
                        "nSubjects": s.n_subjects,
                    }),
                    ExecuteResult::SvdInit { n, p } => json!({"n": n, "p": p}),
                    ExecuteResult::SvdVStep { v } => json!({"v": v.as_slice()}),
                    ExecuteResult::SvdUStep { u_norm_sq } => json!({"uNormSq": u_norm_sq}),
                    ExecuteResult::SvdFinalizeComponent { components } => json!({"components": components}),
                    ExecuteResult::Upload(report) => json!({"report": report}),
                };
                obj.insert("result".into(), r);
            }
            WireMessage::ErrorResponse { defn_id, code, message, site, report } => {
                if let Some(id) = defn_id {
                    obj.insert("defnId".into(), json!(id.to_string()));
                }
                obj.insert("code".into(), json!(code.as_str()));
                obj.insert("message".into(), json!(message));
                if let Some(s) = site {
                    obj.insert("site".into(), json!(s));
                }
                if let Some(r) = report {
                    obj.insert("report".into(), json!(r));
                }
            }
        }
        Value::Object(obj)
    }
}

pub fn encode(msg: &WireMessage) -> Vec<u8> {
    to_canonical_string(&msg.to_value()).into_bytes()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("not valid JSON: {0}")]
    Syntax(String),
    #[error("unsupported protocolVersion {0} (this build speaks {PROTOCOL_VERSION})")]
    UnsupportedVersion(u64),
    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> DecodeError {
    DecodeError::Schema { pointer: pointer.into(), message: message.into() }
}

/// Read access to one JSON object, tracking its pointer for error reports.
struct Obj<'a> {
    map: &'a Map<String, Value>,
    at: String,
}

impl<'a> Obj<'a> {
    fn new(v: &'a Value, at: String) -> Result<Self, DecodeError> {
        match v {
            Value::Object(map) => Ok(Self { map, at }),
            _ => Err(schema(if at.is_empty() { "/" } else { &at }, "expected an object")),
        }
    }

    fn ptr(&self, key: &str) -> String {
        format!("{}/{}", self.at, key)
    }

    fn get(&self, key: &str) -> Result<&'a Value, DecodeError> {
        self.map.get(key).ok_or_else(|| schema(self.ptr(key), "missing field"))
    }

    fn obj(&self, key: &str) -> Result<Obj<'a>, DecodeError> {
        Obj::new(self.get(key)?, self.ptr(key))
    }

    fn str(&self, key: &str) -> Result<&'a str, DecodeError> {
        self.get(key)?.as_str().ok_or_else(|| schema(self.ptr(key), "expected a string"))
    }

    fn opt_str(&self, key: &str) -> Result<Option<&'a str>, DecodeError> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(_) => self.str(key).map(Some),
        }
    }

    fn f64(&self, key: &str) -> Result<f64, DecodeError> {
        self.get(key)?.as_f64().ok_or_else(|| schema(self.ptr(key), "expected a number"))
    }

    fn usize(&self, key: &str) -> Result<usize, DecodeError> {
        self.get(key)?
            .as_u64()
            .and_then(|v| usize::try_from(v).ok())
            .ok_or_else(|| schema(self.ptr(key), "expected a nonnegative integer"))
    }

    fn numbers(&self, key: &str) -> Result<Vec<f64>, DecodeError> {
        let arr = self.get(key)?.as_array().ok_or_else(|| schema(self.ptr(key), "expected an array"))?;
        arr.iter()
            .enumerate()
            .map(|(i, v)| v.as_f64().ok_or_else(|| schema(format!("{}/{i}", self.ptr(key)), "expected a number")))
            .collect()
    }

    fn vector(&self, key: &str) -> Result<Vector, DecodeError> {
        Vector::new(self.numbers(key)?).map_err(|e| schema(self.ptr(key), e.to_string()))
    }

    fn defn_id(&self) -> Result<ComputationId, DecodeError> {
        self.str("defnId")?.parse().map_err(|e: crate::compdef::DefinitionError| schema(self.ptr("defnId"), e.to_string()))
    }

    fn report(&self, key: &str) -> Result<DatasetValidationReport, DecodeError> {
        serde_json::from_value(self.get(key)?.clone()).map_err(|e| schema(self.ptr(key), e.to_string()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<WireMessage, DecodeError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    decode_value(&value)
}

pub fn decode_value(value: &Value) -> Result<WireMessage, DecodeError> {
    let root = Obj::new(value, String::new())?;
    let version = root
        .get("protocolVersion")?
        .as_u64()
        .ok_or_else(|| schema("/protocolVersion", "expected a nonnegative integer"))?;
    if version != PROTOCOL_VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    match root.str("kind")? {
        "UploadComputation" => {
            let definition = ComputationDefinition::from_json_value(root.get("definition")?)
                .map_err(|e| schema("/definition", e.to_string()))?;
            let data = root.obj("data")?;
            Ok(WireMessage::UploadComputation {
                definition,
                data: DataFile { file_name: data.str("fileName")?.into(), csv: data.str("csv")?.into() },
            })
        }
        "ExecuteRequest" => {
            let defn_id = root.defn_id()?;
            let method = Method::parse(root.str("method")?).ok_or_else(|| schema("/method", "unknown method"))?;
            let p = root.obj("params")?;
            let params = match method {
                Method::CoxLocalStats => ExecuteParams::CoxLocalStats { beta: p.vector("beta")? },
                Method::SvdInit => ExecuteParams::SvdInit,
                Method::SvdVStep => ExecuteParams::SvdVStep { u_norm: p.f64("uNorm")? },
                Method::SvdUStep => ExecuteParams::SvdUStep { v: p.vector("v")? },
                Method::SvdFinalizeComponent => ExecuteParams::SvdFinalizeComponent { v: p.vector("v")?, d: p.f64("d")? },
            };
            Ok(WireMessage::ExecuteRequest { defn_id, params })
        }
        "ExecuteResponse" => {
            let defn_id = root.defn_id()?;
            let r = root.obj("result")?;
            let result = match root.str("method")? {
                "Upload" => ExecuteResult::Upload(r.report("report")?),
                "CoxLocalStats" => {
                    let score = r.vector("score")?;
                    let p = score.len();
                    let info = r.numbers("info")?;
                    if info.len() != p * p {
                        return Err(schema("/result/info", format!("expected {} entries for p={p}", p * p)));
                    }
                    let info = Matrix::from_row_major(p, p, info).map_err(|e| schema("/result/info", e.to_string()))?;
                    ExecuteResult::CoxLocalStats(CoxLocalStats {
                        loglik: r.f64("loglik")?,
                        score,
                        info,
                        n_events: r.usize("nEvents")?,
                        n_subjects: r.usize("nSubjects")?,
                    })
                }
                "SvdInit" => ExecuteResult::SvdInit { n: r.usize("n")?, p: r.usize("p")? },
                "SvdVStep" => ExecuteResult::SvdVStep { v: r.vector("v")? },
                "SvdUStep" => ExecuteResult::SvdUStep { u_norm_sq: r.f64("uNormSq")? },
                "SvdFinalizeComponent" => ExecuteResult::SvdFinalizeComponent { components: r.usize("components")? },
                _ => return Err(schema("/method", "unknown method")),
            };
            Ok(WireMessage::ExecuteResponse { defn_id, result })
        }
        "ErrorResponse" => {
            let defn_id = match root.opt_str("defnId")? {
                None => None,
                Some(_) => Some(root.defn_id()?),
            };
            let code = ErrorCode::parse(root.str("code")?).ok_or_else(|| schema("/code", "unknown error code"))?;
            let report = match root.map.get("report") {
                None | Some(Value::Null) => None,
                Some(_) => Some(root.report("report")?),
            };
            Ok(WireMessage::ErrorResponse {
                defn_id,
                code,
                message: root.str("message")?.into(),
                site: root.opt_str("site")?.map(str::to_string),
                report,
            })
        }
        _ => Err(schema("/kind", "unknown message kind")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    MasterToSite,
    SiteToMaster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub site: String,
    pub timestamp: DateTime<Utc>,
    pub bytes: usize,
    pub message: WireMessage,
}

/// Append-only record of every message a master sent or received.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records raw bytes as they crossed the wire. Bytes that do not decode
    /// are not recorded; the caller reports the decode failure itself.
    pub fn record(&mut self, direction: Direction, site: &str, bytes: &[u8]) -> Result<(), DecodeError> {
        let message = decode(bytes)?;
        self.entries.push(TranscriptEntry {
            direction,
            site: site.to_string(),
            timestamp: Utc::now(),
            bytes: bytes.len(),
            message,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_site(&self) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries.iter().filter(|e| e.direction == Direction::SiteToMaster)
    }

    /// Only for constructing adversarial transcripts in tests and demos.
    pub fn push_entry(&mut self, entry: TranscriptEntry) {
        self.entries.push(entry);
    }
}

/// Field names that would indicate subject-level data leaving a site.
const RAW_DATA_FIELDS: [&str; 14] = [
    "time", "times", "event", "events", "status", "censor", "covariates", "x", "data", "rows", "records", "u",
    "uLocal", "uCurrent",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyViolation {
    pub entry: usize,
    pub site: String,
    pub pointer: String,
    pub reason: String,
}

fn scan(v: &Value, at: &str, limit: usize, out: &mut Vec<(String, String)>) {
    match v {
        Value::Array(items) => {
            if items.iter().all(Value::is_number) && items.len() > limit {
                out.push((at.to_string(), format!("numeric array of length {} exceeds {limit}", items.len())));
            }
            for (i, item) in items.iter().enumerate() {
                scan(item, &format!("{at}/{i}"), limit, out);
            }
        }
        Value::Object(map) => {
            for (k, item) in map {
                let ptr = format!("{at}/{k}");
                if RAW_DATA_FIELDS.contains(&k.as_str()) {
                    out.push((ptr.clone(), format!("field {k:?} is named like raw data")));
                }
                scan(item, &ptr, limit, out);
            }
        }
        _ => {}
    }
}

/// Every site-to-master payload that could carry subject-level data.
pub fn privacy_violations(t: &Transcript, p: usize) -> Vec<PrivacyViolation> {
    let limit = p.max(p * p);
    let mut found = Vec::new();
    for (i, e) in t.entries.iter().enumerate() {
        if e.direction != Direction::SiteToMaster {
            continue;
        }
        let mut hits = Vec::new();
        scan(&e.message.to_value(), "", limit, &mut hits);
        found.extend(hits.into_iter().map(|(pointer, reason)| PrivacyViolation {
            entry: i,
            site: e.site.clone(),
            pointer,
            reason,
        }));
    }
    found
}

pub fn transcript_assert_private(t: &Transcript, p: usize) -> bool {
    privacy_violations(t, p).is_empty()
}

/// Count of numbers in a message's payload (`params`, `result` or `report`).
pub fn payload_numbers(msg: &WireMessage) -> usize {
    fn count(v: &Value) -> usize {
        match v {
            Value::Number(_) => 1,
            Value::Array(a) => a.iter().map(count).sum(),
            Value::Object(m) => m.values().map(count).sum(),
            _ => 0,
        }
    }
    let v = msg.to_value();
    ["params", "result", "report"].iter().filter_map(|k| v.get(k)).map(count).sum()
}

pub fn largest_numeric_array(msg: &WireMessage) -> usize {
    fn walk(v: &Value) -> usize {
        match v {
            Value::Array(a) => {
                let own = if a.iter().all(Value::is_number) { a.len() } else { 0 };
                a.iter().map(walk).fold(own, usize::max)
            }
            Value::Object(m) => m.values().map(walk).max().unwrap_or(0),
            _ => 0,
        }
    }
    walk(&msg.to_value())
}

/// Site replies whose payload exceeds the per-message bound: `p² + p + 3`
/// numbers for Cox, `p + 1` for SVD (the one-time `SvdInit` reply is exempt).
pub fn payload_bound_violations(t: &Transcript, p: usize, comp_type: CompType) -> Vec<usize> {
    t.entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.direction == Direction::SiteToMaster)
        .filter(|(_, e)| {
            let n = payload_numbers(&e.message);
            match (&e.message, comp_type) {
                (WireMessage::ExecuteResponse { result: ExecuteResult::SvdInit { .. }, .. }, _) => n > 2,
                (WireMessage::ExecuteResponse { result: ExecuteResult::Upload(_), .. }, _) => false,
                (_, CompType::StratifiedCoxModel) => n > p * p + p + 3,
                (_, CompType::RankKSvd) => n > p + 1,
            }
        })
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id() -> ComputationId {
        ComputationId::from_u128(0x0123456789abcdef0123456789abcdef)
    }

    fn vecf(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn golden_cox_request() {
        let msg = WireMessage::ExecuteRequest { defn_id: id(), params: ExecuteParams::CoxLocalStats { beta: vecf(&[0.0, 0.0]) } };
        let golden = include_str!("../tests/data/golden_execute_cox.json");
        assert_eq!(String::from_utf8(encode(&msg)).unwrap(), golden.trim_end());
        assert_eq!(decode(golden.as_bytes()).unwrap(), msg);
    }

    #[test]
    fn float_probe_round_trips() {
        let msg = WireMessage::ExecuteRequest { defn_id: id(), params: ExecuteParams::SvdVStep { u_norm: 9.707451 } };
        let bytes = encode(&msg);
        assert!(String::from_utf8_lossy(&bytes).contains("9.707451"));
        let ExecuteParams::SvdVStep { u_norm } = (match decode(&bytes).unwrap() {
            WireMessage::ExecuteRequest { params, .. } => params,
            other => panic!("{other:?}"),
        }) else {
            panic!()
        };
        assert_eq!(u_norm.to_bits(), 9.707451_f64.to_bits());
    }

    #[test]
    fn version_gate() {
        let bad = br#"{"defnId":"0123456789abcdef0123456789abcdef","kind":"ExecuteRequest","method":"SvdInit","params":{},"protocolVersion":2}"#;
        assert_eq!(decode(bad), Err(DecodeError::UnsupportedVersion(2)));
    }

    #[test]
    fn schema_errors_carry_pointers() {
        let cases: [(&str, &str); 5] = [
            (r#"{"kind":"ExecuteRequest","protocolVersion":1}"#, "/defnId"),
            (r#"{"defnId":"0123456789abcdef0123456789abcdef","kind":"ExecuteRequest","method":"CoxLocalStats","params":{"beta":[1,"a"]},"protocolVersion":1}"#, "/params/beta/1"),
            (r#"{"defnId":"0123456789abcdef0123456789abcdef","kind":"ExecuteRequest","method":"Eval","params":{},"protocolVersion":1}"#, "/method"),
            (r#"{"defnId":"0123456789abcdef0123456789abcdef","kind":"ExecuteResponse","method":"CoxLocalStats","result":{"info":[1,2],"loglik":0,"nEvents":1,"nSubjects":1,"score":[1,2]},"protocolVersion":1}"#, "/result/info"),
            (r#"{"kind":"Shell","protocolVersion":1}"#, "/kind"),
        ];
        for (text, want) in cases {
            match decode(text.as_bytes()) {
                Err(DecodeError::Schema { pointer, .. }) => assert_eq!(pointer, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(decode(b"[1,2"), Err(DecodeError::Syntax(_))));
        assert!(matches!(decode(b"[1]"), Err(DecodeError::Schema { .. })));
    }

    #[test]
    fn methods_are_scoped_to_comp_type() {
        assert!(Method::CoxLocalStats.legal_for(CompType::StratifiedCoxModel));
        assert!(!Method::CoxLocalStats.legal_for(CompType::RankKSvd));
        assert!(!Method::SvdVStep.legal_for(CompType::StratifiedCoxModel));
    }

    fn cox_reply(p: usize, extra: usize) -> WireMessage {
        let stats = CoxLocalStats {
            loglik: -1.0,
            score: Vector::zeros(p),
            info: Matrix::identity(p),
            n_events: 3,
            n_subjects: 10 + extra,
        };
        WireMessage::ExecuteResponse { defn_id: id(), result: ExecuteResult::CoxLocalStats(stats) }
    }

    fn transcript_of(msgs: &[WireMessage]) -> Transcript {
        let mut t = Transcript::new();
        for m in msgs {
            t.record(Direction::SiteToMaster, "site1", &encode(m)).unwrap();
        }
        t
    }

    #[test]
    fn privacy_of_aggregates_and_doctored_transcript() {
        let t = transcript_of(&[cox_reply(7, 0)]);
        assert!(transcript_assert_private(&t, 7));
        assert_eq!(largest_numeric_array(&t.entries()[0].message), 49);
        assert_eq!(payload_numbers(&t.entries()[0].message), 49 + 7 + 3);
        assert!(payload_bound_violations(&t, 7, CompType::StratifiedCoxModel).is_empty());

        let mut doctored = t.clone();
        let leak = WireMessage::ExecuteResponse {
            defn_id: id(),
            result: ExecuteResult::SvdVStep { v: Vector::filled(200, 1.0) },
        };
        doctored.record(Direction::SiteToMaster, "site1", &encode(&leak)).unwrap();
        assert!(!transcript_assert_private(&doctored, 7));
        let v = privacy_violations(&doctored, 7);
        assert_eq!((v[0].entry, v[0].pointer.as_str()), (1, "/result/v"));
    }

    #[test]
    fn raw_field_names_flagged() {
        let mut t = Transcript::new();
        let msg = WireMessage::error(Some(id()), ErrorCode::Internal, "x", Some("s"));
        t.record(Direction::SiteToMaster, "s", &encode(&msg)).unwrap();
        assert!(transcript_assert_private(&t, 2));
        let mut v = msg.to_value();
        v["time"] = json!([1.0]);
        let mut hits = Vec::new();
        scan(&v, "", 4, &mut hits);
        assert_eq!(hits[0].0, "/time");
    }

    fn finite() -> impl Strategy<Value = f64> + Clone {
        any::<f64>().prop_filter("finite", |x| x.is_finite())
    }

    fn params() -> impl Strategy<Value = ExecuteParams> {
        let v = prop::collection::vec(finite(), 1..6).prop_map(|x| Vector::new(x).unwrap());
        prop_oneof![
            v.clone().prop_map(|beta| ExecuteParams::CoxLocalStats { beta }),
            Just(ExecuteParams::SvdInit),
            finite().prop_map(|u_norm| ExecuteParams::SvdVStep { u_norm }),
            v.clone().prop_map(|v| ExecuteParams::SvdUStep { v }),
            (v, finite()).prop_map(|(v, d)| ExecuteParams::SvdFinalizeComponent { v, d }),
        ]
    }

    fn result() -> impl Strategy<Value = ExecuteResult> {
        let stats = (1usize..4).prop_flat_map(|p| {
            (finite(), prop::collection::vec(finite(), p), prop::collection::vec(finite(), p * p), 0usize..100)
                .prop_map(move |(loglik, s, i, n)| {
                    ExecuteResult::CoxLocalStats(CoxLocalStats {
                        loglik,
                        score: Vector::new(s).unwrap(),
                        info: Matrix::from_row_major(p, p, i).unwrap(),
                        n_events: n / 2,
                        n_subjects: n,
                    })
                })
        });
        prop_oneof![
            stats,
            (0usize..1000, 1usize..50).prop_map(|(n, p)| ExecuteResult::SvdInit { n, p }),
            prop::collection::vec(finite(), 1..5).prop_map(|v| ExecuteResult::SvdVStep { v: Vector::new(v).unwrap() }),
            finite().prop_map(|u_norm_sq| ExecuteResult::SvdUStep { u_norm_sq }),
            (0usize..9).prop_map(|components| ExecuteResult::SvdFinalizeComponent { components }),
            (any::<bool>(), 0usize..9, ".{0,12}").prop_map(|(ok, n, m)| ExecuteResult::Upload(DatasetValidationReport {
                ok,
                n_used: n,
                n_dropped_missing: 1,
                messages: vec![m],
            })),
        ]
    }

    fn message() -> impl Strategy<Value = WireMessage> {
        let defn = any::<u128>().prop_map(ComputationId::from_u128);
        prop_oneof![
            (defn.clone(), params()).prop_map(|(defn_id, params)| WireMessage::ExecuteRequest { defn_id, params }),
            (defn.clone(), result()).prop_map(|(defn_id, result)| WireMessage::ExecuteResponse { defn_id, result }),
            (prop::option::of(defn), 0usize..10, ".{0,20}", prop::option::of("[a-z]{1,5}")).prop_map(
                |(defn_id, c, message, site)| WireMessage::ErrorResponse {
                    defn_id,
                    code: ErrorCode::ALL[c],
                    message,
                    site,
                    report: None,
                }
            ),
            ("[a-z ]{1,8}", "[a-z,0-9\n\"]{0,40}").prop_map(|(name, csv)| WireMessage::UploadComputation {
                definition: ComputationDefinition::svd(name, "t"),
                data: DataFile { file_name: "site.csv".into(), csv },
            }),
        ]
    }

    fn bits(v: &Value) -> Value {
        // Map every float to its bit pattern so the comparison is exact even for -0.0.
        match v {
            Value::Number(n) if n.is_f64() => json!(n.as_f64().unwrap().to_bits()),
            Value::Array(a) => Value::Array(a.iter().map(bits).collect()),
            Value::Object(m) => Value::Object(m.iter().map(|(k, x)| (k.clone(), bits(x))).collect()),
            other => other.clone(),
        }
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(msg in message()) {
            let bytes = encode(&msg);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &msg);
            prop_assert_eq!(bits(&back.to_value()), bits(&msg.to_value()));
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
