//! Computation definitions: what is to be computed, shared between the
//! master and every site before any data moves.

mod formula;
mod ingest;
mod validate;

pub use formula::{parse_formula, FormulaError, ModelFormula};
pub use ingest::{
    load_csv_matrix, load_csv_survival, matrix_to_csv, parse_csv_matrix, parse_csv_survival, survival_to_csv,
    IngestError, LoadedMatrix, LoadedSurvival,
};
pub use validate::{dry_run_options, validate_csv, validate_dataset, DatasetValidationReport, SiteData, Validated};

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use rand::{rngs::StdRng, Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::canonical::to_canonical_string;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompType {
    StratifiedCoxModel,
    #[serde(rename = "RankKSVD")]
    RankKSvd,
}

impl CompType {
    pub fn as_str(self) -> &'static str {
        match self {
            CompType::StratifiedCoxModel => "StratifiedCoxModel",
            CompType::RankKSvd => "RankKSVD",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            CompType::StratifiedCoxModel => "Stratified Cox Model",
            CompType::RankKSvd => "Rank K SVD",
        }
    }
}

impl fmt::Display for CompType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CompType {
    type Err = DefinitionError;
    fn from_str(s: &str) -> Result<Self, DefinitionError> {
        match s {
            "StratifiedCoxModel" | "cox" => Ok(CompType::StratifiedCoxModel),
            "RankKSVD" | "svd" => Ok(CompType::RankKSvd),
            other => Err(DefinitionError::UnknownType(other.into())),
        }
    }
}

pub fn available_computations() -> Vec<(CompType, &'static str)> {
    [CompType::StratifiedCoxModel, CompType::RankKSvd].into_iter().map(|t| (t, t.display_name())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComputationId(u128);

impl ComputationId {
    pub fn from_u128(v: u128) -> Self {
        Self(v)
    }

    pub fn as_u128(self) -> u128 {
        self.0
    }
}

impl fmt::Display for ComputationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl FromStr for ComputationId {
    type Err = DefinitionError;
    fn from_str(s: &str) -> Result<Self, DefinitionError> {
        let ok = s.len() == 32 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if !ok {
            return Err(DefinitionError::BadId(s.into()));
        }
        u128::from_str_radix(s, 16).map(Self).map_err(|_| DefinitionError::BadId(s.into()))
    }
}

impl Serialize for ComputationId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComputationId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 128 bits from an OS-seeded generator.
pub fn new_computation_id() -> ComputationId {
    ComputationId(StdRng::from_os_rng().random())
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DefinitionError {
    #[error("unknown computation type {0:?}")]
    UnknownType(String),
    #[error("{0:?} is not a 32-digit lowercase hex identifier")]
    BadId(String),
    #[error("a {0} definition requires a formula")]
    MissingFormula(CompType),
    #[error("a {0} definition takes no formula")]
    UnexpectedFormula(CompType),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("malformed definition: {0}")]
    Malformed(String),
    #[error("unsupported schemaVersion {0}")]
    SchemaVersion(u64),
}

/// The shareable description of one computation. Holds no subject data.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputationDefinition {
    id: ComputationId,
    comp_type: CompType,
    formula: Option<ModelFormula>,
    name: String,
    title: String,
    created_at: DateTime<Utc>,
}

impl ComputationDefinition {
    pub fn new(
        id: ComputationId,
        comp_type: CompType,
        formula: Option<ModelFormula>,
        name: impl Into<String>,
        title: impl Into<String>,
        created_at: DateTime<Utc>,
    ) -> Result<Self, DefinitionError> {
        match (comp_type, &formula) {
            (CompType::StratifiedCoxModel, None) => return Err(DefinitionError::MissingFormula(comp_type)),
            (CompType::RankKSvd, Some(_)) => return Err(DefinitionError::UnexpectedFormula(comp_type)),
            _ => {}
        }
        // Whole seconds only, so the text form round-trips exactly.
        let created_at = DateTime::from_timestamp(created_at.timestamp(), 0).expect("in range");
        Ok(Self { id, comp_type, formula, name: name.into(), title: title.into(), created_at })
    }

    pub fn cox(formula: ModelFormula, name: impl Into<String>, title: impl Into<String>) -> Self {
        Self::new(new_computation_id(), CompType::StratifiedCoxModel, Some(formula), name, title, Utc::now())
            .expect("formula supplied")
    }

    pub fn svd(name: impl Into<String>, title: impl Into<String>) -> Self {
        Self::new(new_computation_id(), CompType::RankKSvd, None, name, title, Utc::now()).expect("no formula")
    }

    pub fn id(&self) -> ComputationId {
        self.id
    }

    pub fn comp_type(&self) -> CompType {
        self.comp_type
    }

    pub fn formula(&self) -> Option<&ModelFormula> {
        self.formula.as_ref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn to_json_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("compType".into(), json!(self.comp_type.as_str()));
        obj.insert("createdAt".into(), json!(self.created_at.to_rfc3339_opts(SecondsFormat::Secs, true)));
        if let Some(f) = &self.formula {
            obj.insert("formula".into(), json!(f.source_text));
        }
        obj.insert("id".into(), json!(self.id.to_string()));
        obj.insert("name".into(), json!(self.name));
        obj.insert("schemaVersion".into(), json!(SCHEMA_VERSION));
        obj.insert("title".into(), json!(self.title));
        Value::Object(obj)
    }

    /// Canonical file form: sorted keys, compact, one trailing LF.
    pub fn to_canonical_json(&self) -> String {
        let mut s = to_canonical_string(&self.to_json_value());
        s.push('\n');
        s
    }

    pub fn from_json_value(v: &Value) -> Result<Self, DefinitionError> {
        let obj = v.as_object().ok_or_else(|| DefinitionError::Malformed("not a JSON object".into()))?;
        let text = |key: &str| -> Result<&str, DefinitionError> {
            obj.get(key)
                .and_then(Value::as_str)
                .ok_or_else(|| DefinitionError::Malformed(format!("missing string field {key:?}")))
        };
        let version = obj
            .get("schemaVersion")
            .and_then(Value::as_u64)
            .ok_or_else(|| DefinitionError::Malformed("missing schemaVersion".into()))?;
        if version != SCHEMA_VERSION {
            return Err(DefinitionError::SchemaVersion(version));
        }
        let comp_type: CompType = text("compType")?.parse()?;
        let id: ComputationId = text("id")?.parse()?;
        let created_at = DateTime::parse_from_rfc3339(text("createdAt")?)
            .map_err(|e| DefinitionError::Malformed(format!("createdAt: {e}")))?
            .with_timezone(&Utc);
        let formula = match obj.get("formula") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(parse_formula(s)?),
            Some(_) => return Err(DefinitionError::Malformed("formula must be a string".into())),
        };
        Self::new(id, comp_type, formula, text("name")?, text("title")?, created_at)
    }

    pub fn from_json_str(s: &str) -> Result<Self, DefinitionError> {
        let v: Value = serde_json::from_str(s).map_err(|e| DefinitionError::Malformed(e.to_string()))?;
        Self::from_json_value(&v)
    }
}
