#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use fedfit::master::{SiteTransport, TransportError};
use fedfit::site::SiteReply;

pub const UIS_FORMULA: &str = "Surv(time, censor) ~ age + becktota + ndrugfp1 + ndrugfp2 + ivhx3 + race + treat";

/// The bundled UIS file split by its `site` column, as CSV text per site.
pub fn uis_sites() -> Vec<String> {
    let text = include_str!("../data/uis.csv");
    let mut lines = text.lines();
    let header = lines.next().expect("header");
    let site_col = header.split(',').position(|c| c == "site").expect("site column");
    let mut parts: Vec<(String, String)> = Vec::new();
    for line in lines {
        let key = line.split(',').nth(site_col).expect("site value").to_string();
        match parts.iter_mut().find(|(k, _)| *k == key) {
            Some((_, csv)) => {
                csv.push_str(line);
                csv.push('\n');
            }
            None => parts.push((key, format!("{header}\n{line}\n"))),
        }
    }
    parts.sort_by(|a, b| a.0.cmp(&b.0));
    parts.into_iter().map(|(_, csv)| csv).collect()
}

/// Counts every request that reaches the site's `/computations` routes.
pub struct Counting {
    pub inner: Arc<dyn SiteTransport>,
    pub count: Arc<AtomicUsize>,
}

impl Counting {
    pub fn wrap(inner: Arc<dyn SiteTransport>) -> (Arc<Self>, Arc<AtomicUsize>) {
        let count = Arc::new(AtomicUsize::new(0));
        (Arc::new(Self { inner, count: count.clone() }), count)
    }

    fn tick(&self) {
        self.count.fetch_add(1, Ordering::SeqCst);
    }
}

impl SiteTransport for Counting {
    fn health(&self) -> Result<SiteReply, TransportError> {
        self.inner.health()
    }
    fn upload(&self, body: &[u8]) -> Result<SiteReply, TransportError> {
        self.tick();
        self.inner.upload(body)
    }
    fn execute(&self, defn_id: &str, body: &[u8]) -> Result<SiteReply, TransportError> {
        self.tick();
        self.inner.execute(defn_id, body)
    }
    fn status(&self, defn_id: &str) -> Result<SiteReply, TransportError> {
        self.tick();
        self.inner.status(defn_id)
    }
    fn withdraw(&self, defn_id: &str) -> Result<SiteReply, TransportError> {
        self.tick();
        self.inner.withdraw(defn_id)
    }
    fn read_log(&self, defn_id: &str) -> Result<SiteReply, TransportError> {
        self.tick();
        self.inner.read_log(defn_id)
    }
    fn describe(&self) -> String {
        self.inner.describe()
    }
}
