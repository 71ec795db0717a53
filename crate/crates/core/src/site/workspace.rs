//! On-disk layout of a site:
//!
//! ```text
//! <root>/defn/<id>/definition.json   canonical compdef
//! <root>/defn/<id>/data.csv          the data file as uploaded
//! <root>/defn/<id>/data.bin          the same rows, re-encoded column-wise
//! <root>/defn/<id>/access.json       owner peer and data file label
//! <root>/instances/<id>.json         iteration state, rewritten after every change
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::compdef::{CompType, ComputationDefinition, ComputationId, SiteData};
use crate::cox::SurvivalDataset;
use crate::numerics::Matrix;
use crate::svd::SvdIterationState;

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: corrupt file: {message}")]
    Corrupt { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io { path: path.display().to_string(), source }
}

fn corrupt(path: &Path, message: impl Into<String>) -> WorkspaceError {
    WorkspaceError::Corrupt { path: path.display().to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Access {
    pub owner: String,
    pub data_file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InstanceFile {
    pub defn_id: ComputationId,
    pub comp_type: CompType,
    pub last_modified: DateTime<Utc>,
    /// Present for SVD computations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svd: Option<SvdIterationState>,
}

/// Everything stored for one computation.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredComputation {
    pub definition: ComputationDefinition,
    pub csv: String,
    pub data: SiteData,
    pub access: Access,
    pub instance: InstanceFile,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

/// Writes via a temporary file and rename, so a crash never leaves a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), WorkspaceError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, WorkspaceError> {
        let root = root.into();
        for sub in ["defn", "instances"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn defn_dir(&self, id: ComputationId) -> PathBuf {
        self.root.join("defn").join(id.to_string())
    }

    pub fn instance_path(&self, id: ComputationId) -> PathBuf {
        self.root.join("instances").join(format!("{id}.json"))
    }

    pub fn save(&self, c: &StoredComputation) -> Result<(), WorkspaceError> {
        let dir = self.defn_dir(c.definition.id());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_atomic(&dir.join("data.csv"), c.csv.as_bytes())?;
        write_atomic(&dir.join("data.bin"), &encode_data(&c.data))?;
        let access = serde_json::to_vec(&c.access).expect("plain struct");
        write_atomic(&dir.join("access.json"), &access)?;
        self.save_instance(&c.instance)?;
        // The definition goes last: its presence marks a complete entry.
        write_atomic(&dir.join("definition.json"), c.definition.to_canonical_json().as_bytes())
    }

    pub fn save_instance(&self, instance: &InstanceFile) -> Result<(), WorkspaceError> {
        let bytes = serde_json::to_vec(instance).expect("plain struct");
        write_atomic(&self.instance_path(instance.defn_id), &bytes)
    }

    pub fn remove(&self, id: ComputationId) -> Result<(), WorkspaceError> {
        let inst = self.instance_path(id);
        if inst.exists() {
            fs::remove_file(&inst).map_err(io_err(&inst))?;
        }
        let dir = self.defn_dir(id);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(())
    }

    pub fn load(&self, id: ComputationId) -> Result<StoredComputation, WorkspaceError> {
        let dir = self.defn_dir(id);
        let defn_path = dir.join("definition.json");
        let text = fs::read_to_string(&defn_path).map_err(io_err(&defn_path))?;
        let definition =
            ComputationDefinition::from_json_str(&text).map_err(|e| corrupt(&defn_path, e.to_string()))?;
        if definition.id() != id {
            return Err(corrupt(&defn_path, "id does not match its folder"));
        }
        let csv_path = dir.join("data.csv");
        let csv = fs::read_to_string(&csv_path).map_err(io_err(&csv_path))?;
        let bin_path = dir.join("data.bin");
        let bin = fs::read(&bin_path).map_err(io_err(&bin_path))?;
        let data = decode_data(&bin, &definition).map_err(|m| corrupt(&bin_path, m))?;
        let access_path = dir.join("access.json");
        let access: Access = serde_json::from_slice(&fs::read(&access_path).map_err(io_err(&access_path))?)
            .map_err(|e| corrupt(&access_path, e.to_string()))?;
        let inst_path = self.instance_path(id);
        let instance: InstanceFile = serde_json::from_slice(&fs::read(&inst_path).map_err(io_err(&inst_path))?)
            .map_err(|e| corrupt(&inst_path, e.to_string()))?;
        Ok(StoredComputation { definition, csv, data, access, instance })
    }

    /// Loads every complete entry; folders without a definition are skipped.
    pub fn load_all(&self) -> Result<Vec<StoredComputation>, WorkspaceError> {
        let dir = self.root.join("defn");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let Some(name) = entry.file_name().to_str().map(str::to_string) else { continue };
            let Ok(id) = name.parse::<ComputationId>() else { continue };
            if entry.path().join("definition.json").exists() {
                ids.push(id);
            }
        }
        ids.sort();
        ids.into_iter().map(|id| self.load(id)).collect()
    }
}

const MAGIC: &[u8; 4] = b"FFD1";

/// Column-major little-endian f64 columns after a fixed header:
/// magic, kind byte (0 survival, 1 matrix), n and p as u64.
/// Survival files hold time, event and then the covariates.
pub fn encode_data(data: &SiteData) -> Vec<u8> {
    let (kind, n, p, columns): (u8, usize, usize, Vec<Vec<f64>>) = match data {
        SiteData::Survival(d) => {
            let mut cols = vec![d.time().to_vec(), d.event().iter().map(|&e| f64::from(u8::from(e))).collect()];
            cols.extend((0..d.p()).map(|j| d.covariates().column(j).into_inner()));
            (0, d.n(), d.p(), cols)
        }
        SiteData::Matrix(m) => (1, m.rows(), m.cols(), (0..m.cols()).map(|j| m.column(j).into_inner()).collect()),
    };
    let mut out = Vec::with_capacity(21 + 8 * n * columns.len());
    out.extend_from_slice(MAGIC);
    out.push(kind);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(p as u64).to_le_bytes());
    for col in columns {
        for v in col {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_data(bytes: &[u8], defn: &ComputationDefinition) -> Result<SiteData, String> {
    if bytes.len() < 21 || &bytes[..4] != MAGIC {
        return Err("bad header".into());
    }
    let kind = bytes[4];
    let n = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    let p = u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes")) as usize;
    let n_cols = if kind == 0 { p + 2 } else { p };
    let body = &bytes[21..];
    if body.len() != 8 * n * n_cols {
        return Err(format!("expected {} data bytes, found {}", 8 * n * n_cols, body.len()));
    }
    let value = |c: usize, i: usize| {
        let at = 8 * (c * n + i);
        f64::from_le_bytes(body[at..at + 8].try_into().expect("8 bytes"))
    };
    let row_major = |first: usize| -> Vec<f64> {
        let mut v = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                v.push(value(first + j, i));
            }
        }
        v
    };
    match (kind, defn.comp_type()) {
        (0, CompType::StratifiedCoxModel) => {
            let names = defn.formula().map(|f| f.covariates.clone()).unwrap_or_default();
            let time = (0..n).map(|i| value(0, i)).collect();
            let event = (0..n).map(|i| value(1, i) == 1.0).collect();
            let x = Matrix::from_row_major(n, p, row_major(2)).map_err(|e| e.to_string())?;
            SurvivalDataset::new(time, event, x, names).map(SiteData::Survival).map_err(|e| e.to_string())
        }
        (1, CompType::RankKSvd) => {
            Matrix::from_row_major(n, p, row_major(0)).map(SiteData::Matrix).map_err(|e| e.to_string())
        }
        _ => Err("data kind does not match the definition".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compdef::{parse_formula, validate_csv};

    fn stored(defn: ComputationDefinition, csv: &str) -> StoredComputation {
        let data = validate_csv(&defn, csv).data.expect("valid");
        let svd = (defn.comp_type() == CompType::RankKSvd).then(|| SvdIterationState::fresh(data.n(), 2));
        StoredComputation {
            instance: InstanceFile { defn_id: defn.id(), comp_type: defn.comp_type(), last_modified: Utc::now(), svd },
            definition: defn,
            csv: csv.into(),
            data,
            access: Access { owner: "master".into(), data_file_name: "site1.csv".into() },
        }
    }

    #[test]
    fn save_load_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let ws = Workspace::open(tmp.path()).unwrap();
        let cox = ComputationDefinition::cox(parse_formula("Surv(t,d) ~ a + b").unwrap(), "c", "Cox");
        let a = stored(cox, "t,d,a,b\n1,1,0.1,TRUE\n2,0,0.30000000000000004,FALSE\n3,1,-7e-300,1\n");
        let b = stored(ComputationDefinition::svd("s", "SVD"), "x,y\n1,2\n3,4.5\n");
        ws.save(&a).unwrap();
        ws.save(&b).unwrap();
        let mut all = ws.load_all().unwrap();
        all.sort_by_key(|c| c.definition.id());
        let mut want = vec![a.clone(), b.clone()];
        want.sort_by_key(|c| c.definition.id());
        // Timestamps go through RFC 3339 text, so compare them at that precision.
        for (got, want) in all.iter().zip(&want) {
            assert_eq!(got.definition, want.definition);
            assert_eq!(got.data, want.data);
            assert_eq!(got.csv, want.csv);
            assert_eq!(got.access, want.access);
            assert_eq!(got.instance.svd, want.instance.svd);
        }
        let dir = ws.defn_dir(a.definition.id());
        for f in ["definition.json", "data.csv", "data.bin", "access.json"] {
            assert!(dir.join(f).exists(), "{f}");
        }
        assert!(ws.instance_path(a.definition.id()).exists());
        ws.remove(a.definition.id()).unwrap();
        assert_eq!(ws.load_all().unwrap().len(), 1);
    }

    #[test]
    fn incomplete_entries_are_skipped_and_corruption_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let ws = Workspace::open(tmp.path()).unwrap();
        fs::create_dir_all(ws.root().join("defn").join("0".repeat(32))).unwrap();
        fs::create_dir_all(ws.root().join("defn").join("notes")).unwrap();
        assert!(ws.load_all().unwrap().is_empty());

        let b = stored(ComputationDefinition::svd("s", "SVD"), "x,y\n1,2\n");
        ws.save(&b).unwrap();
        fs::write(ws.defn_dir(b.definition.id()).join("data.bin"), b"FFD1garbage").unwrap();
        assert!(matches!(ws.load_all(), Err(WorkspaceError::Corrupt { .. })));
    }
}
