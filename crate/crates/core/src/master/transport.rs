use std::time::Duration;

use crate::site::SiteReply;

/// Why a request got no reply.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    /// The request never reached the site (refused, unresolvable), so
    /// retrying cannot apply it twice.
    #[error("not delivered: {0}")]
    NotDelivered(String),
    /// The request may or may not have been applied.
    #[error("no reply: {0}")]
    NoReply(String),
}

impl TransportError {
    pub fn message(&self) -> &str {
        match self {
            TransportError::NotDelivered(m) | TransportError::NoReply(m) => m,
        }
    }
}

/// Byte-level access to one site. HTTP and in-process implementations share
/// this surface, so the master cannot tell them apart.
pub trait SiteTransport: Send + Sync {
    fn health(&self) -> Result<SiteReply, TransportError>;
    fn upload(&self, body: &[u8]) -> Result<SiteReply, TransportError>;
    fn execute(&self, defn_id: &str, body: &[u8]) -> Result<SiteReply, TransportError>;
    fn status(&self, defn_id: &str) -> Result<SiteReply, TransportError>;
    fn withdraw(&self, defn_id: &str) -> Result<SiteReply, TransportError>;
    fn read_log(&self, defn_id: &str) -> Result<SiteReply, TransportError>;
    /// Where the site lives, for messages.
    fn describe(&self) -> String;
}

pub struct HttpTransport {
    base: String,
    token: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: &str, token: &str) -> Self {
        Self::with_timeout(base_url, token, Duration::from_secs(60))
    }

    pub fn with_timeout(base_url: &str, token: &str, timeout: Duration) -> Self {
        // No idle pool: a reused socket to a restarted site would fail after
        // the request was written, hiding whether it was delivered.
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .max_idle_connections(0)
            .timeout_global(Some(timeout))
            .timeout_connect(Some(Duration::from_secs(5)))
            .build()
            .into();
        Self { base: base_url.trim_end_matches('/').to_string(), token: token.to_string(), agent }
    }

    fn finish(&self, r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<SiteReply, TransportError> {
        let mut resp = r.map_err(classify)?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| TransportError::NoReply(e.to_string()))?;
        Ok(SiteReply { status, body })
    }

    /// The request log for `defn_id`, limited to `[since, until]` on the site.
    pub fn read_log_between(
        &self,
        defn_id: &str,
        since: Option<chrono::DateTime<chrono::Utc>>,
        until: Option<chrono::DateTime<chrono::Utc>>,
    ) -> Result<SiteReply, TransportError> {
        let mut req =
            self.agent.get(&format!("{}/computations/{defn_id}/log", self.base)).header("Authorization", &self.auth());
        for (key, t) in [("since", since), ("until", until)] {
            if let Some(t) = t {
                req = req.query(key, t.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true));
            }
        }
        self.finish(req.call())
    }

    fn auth(&self) -> String {
        format!("Bearer {}", self.token)
    }
}

fn classify(e: ureq::Error) -> TransportError {
    use std::io::ErrorKind;
    match &e {
        ureq::Error::ConnectionFailed | ureq::Error::HostNotFound | ureq::Error::BadUri(_) => {
            TransportError::NotDelivered(e.to_string())
        }
        ureq::Error::Io(io) if matches!(io.kind(), ErrorKind::ConnectionRefused | ErrorKind::AddrNotAvailable) => {
            TransportError::NotDelivered(e.to_string())
        }
        ureq::Error::Timeout(ureq::Timeout::Connect | ureq::Timeout::Resolve) => {
            TransportError::NotDelivered(e.to_string())
        }
        _ => TransportError::NoReply(e.to_string()),
    }
}

impl SiteTransport for HttpTransport {
    fn health(&self) -> Result<SiteReply, TransportError> {
        self.finish(self.agent.get(&format!("{}/health", self.base)).call())
    }

    fn upload(&self, body: &[u8]) -> Result<SiteReply, TransportError> {
        let req = self
            .agent
            .post(&format!("{}/computations", self.base))
            .header("Authorization", &self.auth())
            .header("Content-Type", "application/json");
        self.finish(req.send(body))
    }

    fn execute(&self, defn_id: &str, body: &[u8]) -> Result<SiteReply, TransportError> {
        let req = self
            .agent
            .post(&format!("{}/computations/{defn_id}/execute", self.base))
            .header("Authorization", &self.auth())
            .header("Content-Type", "application/json");
        self.finish(req.send(body))
    }

    fn status(&self, defn_id: &str) -> Result<SiteReply, TransportError> {
        let req = self.agent.get(&format!("{}/computations/{defn_id}", self.base)).header("Authorization", &self.auth());
        self.finish(req.call())
    }

    fn withdraw(&self, defn_id: &str) -> Result<SiteReply, TransportError> {
        let req =
            self.agent.delete(&format!("{}/computations/{defn_id}", self.base)).header("Authorization", &self.auth());
        self.finish(req.call())
    }

    fn read_log(&self, defn_id: &str) -> Result<SiteReply, TransportError> {
        let req =
            self.agent.get(&format!("{}/computations/{defn_id}/log", self.base)).header("Authorization", &self.auth());
        self.finish(req.call())
    }

    fn describe(&self) -> String {
        self.base.clone()
    }
}
