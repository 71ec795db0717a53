//! The site server: holds private data in a workspace and answers only
//! registered computation requests from known peers, logging each one.

mod config;
mod http;
mod log;
mod service;
mod workspace;


pub use config::{ConfigError, Peer, SiteConfig};
pub use http::{router, serve_forever, spawn_site_server, ServeError, SiteServerHandle};
pub use log::{LogEntry, LogFilter, Outcome, RequestLog};
pub use service::{SiteError, SiteReply, SiteRequest, SiteService};
pub use workspace::{decode_data, encode_data, Access, InstanceFile, StoredComputation, Workspace, WorkspaceError};
