use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// A peer allowed to talk to this site, identified by a bearer token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Peer {
    pub name: String,
    pub token: String,
    /// Operators may withdraw computations and read any log.
    #[serde(default)]
    pub operator: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub name: String,
    pub listen: SocketAddr,
    pub workspace: PathBuf,
    /// Defaults to `<workspace>/requests.log`.
    #[serde(default)]
    pub log: Option<PathBuf>,
    /// When off, every request is accepted and ids alone grant access.
    #[serde(default = "default_true")]
    pub gatekeeping: bool,
    #[serde(default)]
    pub peers: Vec<Peer>,
}

fn default_true() -> bool {
    true
}

impl SiteConfig {
    pub fn new(name: impl Into<String>, listen: SocketAddr, workspace: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            listen,
            workspace: workspace.into(),
            log: None,
            gatekeeping: true,
            peers: Vec::new(),
        }
    }

    pub fn with_peer(mut self, name: &str, token: &str, operator: bool) -> Self {
        self.peers.push(Peer { name: name.into(), token: token.into(), operator });
        self
    }

    pub fn log_path(&self) -> PathBuf {
        self.log.clone().unwrap_or_else(|| self.workspace.join("requests.log"))
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    /// Applies `FEDFIT_NAME`, `FEDFIT_LISTEN`, `FEDFIT_WORKSPACE`, `FEDFIT_LOG`,
    /// `FEDFIT_GATEKEEPING` and `FEDFIT_PEERS` (`name:token[:operator],…`).
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (key, value) in vars {
            match key.as_str() {
                "FEDFIT_NAME" => self.name = value,
                "FEDFIT_LISTEN" => {
                    self.listen = value.parse().map_err(|_| ConfigError::Invalid(format!("FEDFIT_LISTEN={value}")))?
                }
                "FEDFIT_WORKSPACE" => self.workspace = value.into(),
                "FEDFIT_LOG" => self.log = Some(value.into()),
                "FEDFIT_GATEKEEPING" => {
                    self.gatekeeping = match value.as_str() {
                        "1" | "true" | "on" => true,
                        "0" | "false" | "off" => false,
                        _ => return Err(ConfigError::Invalid(format!("FEDFIT_GATEKEEPING={value}"))),
                    }
                }
                "FEDFIT_PEERS" => self.peers = parse_peers(&value)?,
                _ => {}
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.trim().is_empty() {
            return Err(ConfigError::Invalid("site name is empty".into()));
        }
        if self.gatekeeping && self.peers.is_empty() {
            return Err(ConfigError::Invalid("gatekeeping is on but no peers are allowed".into()));
        }
        let mut tokens: Vec<&str> = self.peers.iter().map(|p| p.token.as_str()).collect();
        tokens.sort_unstable();
        if tokens.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid("two peers share a token".into()));
        }
        if self.peers.iter().any(|p| p.token.is_empty()) {
            return Err(ConfigError::Invalid("empty peer token".into()));
        }
        Ok(())
    }
}

fn parse_peers(spec: &str) -> Result<Vec<Peer>, ConfigError> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            match parts.as_slice() {
                [name, token] => Ok(Peer { name: (*name).into(), token: (*token).into(), operator: false }),
                [name, token, "operator"] => Ok(Peer { name: (*name).into(), token: (*token).into(), operator: true }),
                _ => Err(ConfigError::Invalid(format!("bad peer entry {item:?}"))),
            }
        })
        .collect()
}
