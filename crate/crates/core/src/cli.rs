//! The `fedfit` command line.
//!
//! Exit codes: 0 success, 1 invalid input or rejected data, 2 I/O or network
//! failure, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::compdef::{available_computations, CompType, ComputationDefinition, ModelFormula};
use crate::cox::{FitOptions, TiesMethod};
use crate::master::{render_svd, upload_computation, HttpTransport, MasterError, MasterState, SiteHandle};
use crate::protocol::{decode, ErrorCode, WireMessage};
use crate::sim::{simulate_cox, simulate_svd, CoxSimConfig, SvdSimConfig};
use crate::site::{LogEntry, SiteConfig};
use crate::svd::{SvdError, SvdOptions};

#[derive(Debug, Parser)]
#[command(name = "fedfit", version, about = "Federated Cox regression and rank-k SVD over private site data")]
pub struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a computation definition.
    Define(DefineArgs),
    /// Run a site server.
    Serve(ServeArgs),
    /// Send a definition and a data file to one site.
    Upload(UploadArgs),
    /// Run a computation across sites.
    Run(RunArgs),
    /// Read a site's request log for a computation.
    Log(LogArgs),
    /// Run a seeded in-process federation and compare with the pooled answer.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DefineArgs {
    /// `cox` (StratifiedCoxModel) or `svd` (RankKSVD).
    #[arg(long = "type", required_unless_present = "list")]
    pub comp_type: Option<CompType>,
    /// Model formula, e.g. `Surv(time, censor) ~ age + treat`.
    #[arg(long)]
    pub formula: Option<String>,
    #[arg(long, default_value = "")]
    pub name: String,
    #[arg(long, default_value = "")]
    pub title: String,
    /// Where to write the definition; stdout if absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// List the available computation types.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML site config. FEDFIT_* environment variables override it.
    #[arg(long, short)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct Conn {
    /// Bearer token for the sites.
    #[arg(long, env = "FEDFIT_TOKEN", hide_env_values = true)]
    pub token: String,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout: u64,
}

#[derive(Debug, Args)]
pub struct UploadArgs {
    #[arg(long, short)]
    pub definition: PathBuf,
    #[arg(long)]
    pub url: String,
    /// The site's CSV file.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub conn: Conn,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, short)]
    pub definition: PathBuf,
    /// `name=url`, once per site.
    #[arg(long = "site", required = true, value_parser = parse_site)]
    pub sites: Vec<(String, String)>,
    #[command(flatten)]
    pub conn: Conn,
    /// Number of SVD components.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub thr: f64,
    /// Iteration budget: power iterations per component, or likelihood evaluations.
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct LogArgs {
    #[arg(long)]
    pub url: String,
    #[arg(long)]
    pub id: String,
    #[arg(long)]
    pub since: Option<DateTime<Utc>>,
    #[arg(long)]
    pub until: Option<DateTime<Utc>>,
    #[command(flatten)]
    pub conn: Conn,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub sites: usize,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Simulate the SVD instead of the Cox model.
    #[arg(long)]
    pub svd: bool,
    #[arg(long, default_value_t = 6)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// True Cox coefficients, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, -0.3, 0.2])]
    pub beta: Vec<f64>,
}

fn parse_site(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((name, url)) if !name.is_empty() && !url.is_empty() => Ok((name.to_string(), url.to_string())),
        _ => Err(format!("expected name=url, got {s:?}")),
    }
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn invalid(m: impl std::fmt::Display) -> Self {
        Self { code: 1, message: m.to_string() }
    }

    fn io(m: impl std::fmt::Display) -> Self {
        Self { code: 2, message: m.to_string() }
    }
}

impl From<MasterError> for CliError {
    fn from(e: MasterError) -> Self {
        let code = match &e {
            MasterError::Unreachable { .. } | MasterError::Protocol { .. } => 2,
            MasterError::Numeric(_) => 3,
            MasterError::Svd(SvdError::InvalidRank { .. } | SvdError::Dimension(_)) => 1,
            MasterError::Svd(_) => 3,
            MasterError::Site { code: ErrorCode::NumericFailure, .. } => 3,
            MasterError::Site { code: ErrorCode::Internal, .. } => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("FEDFIT_LOG_LEVEL").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.json {
                println!("{}", json!({"error": e.message, "exitCode": e.code}));
            } else {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code)
        }
    }
}

/// Runs a parsed command and returns what it prints.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Define(a) => define(a, cli.json),
        Command::Serve(a) => serve(a),
        Command::Upload(a) => upload(a, cli.json),
        Command::Run(a) => run_computation(a, cli.json),
        Command::Log(a) => log(a, cli.json),
        Command::Simulate(a) => simulate(a, cli.json),
    }
}

fn define(a: &DefineArgs, json_out: bool) -> Result<String, CliError> {
    if a.list {
        let list = available_computations();
        if json_out {
            let v: Vec<_> = list.iter().map(|(t, d)| json!({"type": t.as_str(), "description": d})).collect();
            return Ok(format!("{}\n", serde_json::Value::from(v)));
        }
        return Ok(list.iter().map(|(t, d)| format!("{:<20} {d}\n", t.as_str())).collect());
    }
    let comp_type = a.comp_type.expect("required by clap");
    let formula = a.formula.as_deref().map(str::parse::<ModelFormula>).transpose().map_err(CliError::invalid)?;
    let defn = ComputationDefinition::new(
        crate::compdef::new_computation_id(),
        comp_type,
        formula,
        &a.name,
        &a.title,
        Utc::now(),
    )
    .map_err(CliError::invalid)?;
    let text = defn.to_canonical_json();
    match &a.out {
        Some(path) => {
            std::fs::write(path, &text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
            Ok(if json_out {
                format!("{}\n", json!({"defnId": defn.id().to_string(), "path": path.display().to_string()}))
            } else {
                format!("{}\n", defn.id())
            })
        }
        None => Ok(text),
    }
}

fn serve(a: &ServeArgs) -> Result<String, CliError> {
    let config = SiteConfig::load(&a.config).map_err(|e| match e {
        crate::site::ConfigError::Io { .. } => CliError::io(e),
        _ => CliError::invalid(e),
    })?;
    crate::site::serve_forever(&config).map_err(CliError::io)?;
    Ok(String::new())
}

fn read_definition(path: &std::path::Path) -> Result<ComputationDefinition, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    ComputationDefinition::from_json_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn transport(url: &str, conn: &Conn) -> HttpTransport {
    HttpTransport::with_timeout(url, &conn.token, std::time::Duration::from_secs(conn.timeout))
}

fn upload(a: &UploadArgs, json_out: bool) -> Result<String, CliError> {
    let defn = read_definition(&a.definition)?;
    let csv = std::fs::read_to_string(&a.data).map_err(|e| CliError::io(format!("{}: {e}", a.data.display())))?;
    let file_name = a.data.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let site = SiteHandle::new(&a.url, std::sync::Arc::new(transport(&a.url, &a.conn)), file_name);
    let report = match upload_computation(&site, &defn, &csv) {
        Ok(report) => report,
        Err(MasterError::Site { code: ErrorCode::ValidationFailed, message, .. }) => {
            return Err(CliError::invalid(format!("rejected: {message}")));
        }
        Err(e) => return Err(e.into()),
    };
    let text = if json_out {
        format!("{}\n", serde_json::to_string(&report).expect("plain struct"))
    } else {
        let mut s = format!("uploaded {} ({} observations used)\n", defn.id(), report.n_used);
        for m in &report.messages {
            s.push_str(&format!("note: {m}\n"));
        }
        s
    };
    if report.ok {
        Ok(text)
    } else {
        Err(CliError::invalid(format!("rejected: {}", report.messages.join("; "))))
    }
}

fn run_computation(a: &RunArgs, json_out: bool) -> Result<String, CliError> {
    let defn = read_definition(&a.definition)?;
    let mut master = MasterState::new(defn.clone());
    for (name, url) in &a.sites {
        master.add_site(SiteHandle::new(name, std::sync::Arc::new(transport(url, &a.conn)), ""))?;
    }
    match defn.comp_type() {
        CompType::StratifiedCoxModel => {
            let opts = FitOptions {
                max_iter: a.max_iter.unwrap_or(20),
                tol: a.tol,
                ties: TiesMethod::Efron,
                ..FitOptions::default()
            };
            let fit = master.run_cox(&opts)?;
            let summary = master.summarize(&fit);
            if json_out {
                return Ok(format!("{}\n", json!({"defnId": defn.id().to_string(), "fit": fit, "summary": summary})));
            }
            let mut out = summary.render();
            out.push_str(&format!(
                "\nloglik: initial {:.6}, final {:.6}; {} evaluations{}\n",
                fit.loglik_initial,
                fit.loglik_final,
                fit.iterations,
                if fit.converged { "" } else { " (did not converge)" }
            ));
            for w in &fit.warnings {
                out.push_str(&format!("warning: {w}\n"));
            }
            Ok(out)
        }
        CompType::RankKSvd => {
            let opts = SvdOptions { k: a.k, thr: a.thr, max_iter: a.max_iter.unwrap_or(SvdOptions::default().max_iter) };
            let r = master.run_svd(&opts)?;
            if json_out {
                return Ok(format!("{}\n", json!({"defnId": defn.id().to_string(), "svd": r})));
            }
            Ok(render_svd(&r))
        }
    }
}

fn log(a: &LogArgs, json_out: bool) -> Result<String, CliError> {
    let reply = transport(&a.url, &a.conn).read_log_between(&a.id, a.since, a.until).map_err(CliError::io)?;
    if !reply.is_success() {
        let message = match decode(&reply.body) {
            Ok(WireMessage::ErrorResponse { code, message, .. }) => format!("{code}: {message}"),
            _ => format!("HTTP {}", reply.status),
        };
        return Err(CliError { code: if reply.status >= 500 { 2 } else { 1 }, message });
    }
    #[derive(serde::Deserialize)]
    struct Entries {
        entries: Vec<LogEntry>,
    }
    let parsed: Entries = serde_json::from_slice(&reply.body).map_err(|e| CliError::io(format!("bad log reply: {e}")))?;
    if json_out {
        return Ok(parsed.entries.iter().map(|e| format!("{}\n", serde_json::to_string(e).expect("plain struct"))).collect());
    }
    Ok(parsed
        .entries
        .iter()
        .map(|e| {
            format!(
                "{} {:<10} {:<22} {:?}{}\n",
                e.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                e.peer,
                e.method,
                e.outcome,
                e.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
            )
        })
        .collect())
}

fn simulate(a: &SimulateArgs, json_out: bool) -> Result<String, CliError> {
    let sim_err = |e: crate::sim::SimError| match e {
        crate::sim::SimError::Master(m) => CliError::from(m),
        crate::sim::SimError::Io(e) => CliError::io(e),
        other => CliError::invalid(other),
    };
    if a.svd {
        let r = simulate_svd(&SvdSimConfig { seed: a.seed, sites: a.sites, n_per_site: a.n, p: a.p, k: a.k, ..SvdSimConfig::default() })
            .map_err(sim_err)?;
        if json_out {
            return Ok(format!(
                "{}\n",
                json!({"defnId": r.defn_id, "svd": r.distributed, "maxAbsDDiff": r.max_abs_d_diff, "maxVDistance": r.max_v_distance})
            ));
        }
        return Ok(format!(
            "{}\nmax |d - d_pooled| = {:.3e}\nmax v distance     = {:.3e}\n",
            render_svd(&r.distributed),
            r.max_abs_d_diff,
            r.max_v_distance
        ));
    }
    let r = simulate_cox(&CoxSimConfig { seed: a.seed, sites: a.sites, n_per_site: a.n, beta: a.beta.clone() })
        .map_err(sim_err)?;
    let summary = crate::cox::cox_summary(&r.distributed);
    if json_out {
        return Ok(format!(
            "{}\n",
            json!({"defnId": r.defn_id, "fit": r.distributed, "summary": summary,
                   "maxAbsBetaDiff": r.max_abs_beta_diff, "maxAbsSeDiff": r.max_abs_se_diff})
        ));
    }
    Ok(format!(
        "{}\n{} evaluations\nmax |beta - beta_pooled| = {:.3e}\nmax |se - se_pooled|     = {:.3e}\n",
        summary.render(),
        r.distributed.iterations,
        r.max_abs_beta_diff,
        r.max_abs_se_diff
    ))
}
