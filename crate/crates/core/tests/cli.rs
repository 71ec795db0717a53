use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

fn fedfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedfit")).args(args).env("FEDFIT_TOKEN", "tok").output().unwrap()
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(dir: &Path, name: &str) -> (Server, String) {
    let port = free_port();
    let config = dir.join(format!("{name}.toml"));
    std::fs::write(
        &config,
        format!(
            "name = \"{name}\"\nlisten = \"127.0.0.1:{port}\"\nworkspace = \"{}\"\n\n[[peers]]\nname = \"analyst\"\ntoken = \"tok\"\n",
            dir.join(name).display()
        ),
    )
    .unwrap();
    let child = Command::new(env!("CARGO_BIN_EXE_fedfit"))
        .args(["serve", "--config", config.to_str().unwrap()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let url = format!("http://127.0.0.1:{port}");
    let deadline = Instant::now() + Duration::from_secs(10);
    while std::net::TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(Instant::now() < deadline, "{name} did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
    (Server(child), url)
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn define_upload_run_log_against_real_servers() {
    let dir = tempfile::tempdir().unwrap();
    let defn = dir.path().join("defn.json");
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/uis.csv");
    let text = std::fs::read_to_string(&data).unwrap();
    let header = text.lines().next().unwrap();
    let mut site_files = Vec::new();
    for s in ["0", "1"] {
        let mut csv = format!("{header}\n");
        for l in text.lines().skip(1).filter(|l| l.split(',').nth(8) == Some(s)) {
            csv.push_str(l);
            csv.push('\n');
        }
        let path = dir.path().join(format!("site{s}.csv"));
        std::fs::write(&path, csv).unwrap();
        site_files.push(path);
    }

    let id = stdout(&fedfit(&[
        "define",
        "--type",
        "cox",
        "--formula",
        "Surv(time, censor) ~ age + becktota + ndrugfp1 + ndrugfp2 + ivhx3 + race + treat",
        "--name",
        "UIS",
        "-o",
        defn.to_str().unwrap(),
    ]));
    let id = id.trim();
    assert_eq!(id.len(), 32);

    let (_a, url_a) = serve(dir.path(), "alpha");
    let (_b, url_b) = serve(dir.path(), "beta");
    for (url, file) in [(&url_a, &site_files[0]), (&url_b, &site_files[1])] {
        let out = stdout(&fedfit(&["upload", "-d", defn.to_str().unwrap(), "--url", url, "--data", file.to_str().unwrap()]));
        assert!(out.starts_with("uploaded"), "{out}");
    }

    let alpha = format!("alpha={url_a}");
    let beta = format!("beta={url_b}");
    let table = stdout(&fedfit(&["run", "-d", defn.to_str().unwrap(), "--site", &alpha, "--site", &beta]));
    assert!(table.contains("age") && table.contains("-0.028076"), "{table}");

    let json = stdout(&fedfit(&["--json", "run", "-d", defn.to_str().unwrap(), "--site", &alpha, "--site", &beta]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["fit"]["converged"].as_bool().unwrap());

    let log = stdout(&fedfit(&["--json", "log", "--url", &url_a, "--id", id]));
    let entries: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let iterations = v["fit"]["iterations"].as_u64().unwrap() as usize;
    let stats = entries.iter().filter(|e| e["method"] == "CoxLocalStats").count();
    assert_eq!(stats, 2 * iterations);

    let wrong = Command::new(env!("CARGO_BIN_EXE_fedfit"))
        .args(["log", "--url", &url_a, "--id", id, "--token", "nope"])
        .output()
        .unwrap();
    assert_eq!(wrong.status.code(), Some(1));
}

#[test]
fn rejected_upload_exits_1_and_dead_site_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let defn = dir.path().join("defn.json");
    stdout(&fedfit(&["define", "--type", "cox", "--formula", "Surv(t, d) ~ age", "-o", defn.to_str().unwrap()]));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "t,d,weight\n1,1,2\n").unwrap();
    let (_s, url) = serve(dir.path(), "gamma");
    let o = fedfit(&["upload", "-d", defn.to_str().unwrap(), "--url", &url, "--data", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("age"));

    let o = fedfit(&["run", "-d", defn.to_str().unwrap(), "--site", &format!("x=http://127.0.0.1:{}", free_port())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_json_is_byte_identical_across_runs() {
    let a = fedfit(&["--json", "simulate", "--seed", "12345"]);
    let b = fedfit(&["--json", "simulate", "--seed", "12345"]);
    assert_eq!(stdout(&a), stdout(&b));
    let c = fedfit(&["--json", "simulate", "--seed", "12346"]);
    assert_ne!(stdout(&a), stdout(&c));
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["define", "serve", "upload", "run", "log", "simulate"] {
        let o = Command::new(env!("CARGO_BIN_EXE_fedfit")).args([sub, "--help"]).output().unwrap();
        assert!(o.status.success(), "{sub}");
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn json_errors_are_one_document_on_stdout() {
    let o = fedfit(&["--json", "define", "--type", "cox", "--formula", "Surv(t, d) ~"]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["exitCode"], 1);
}
