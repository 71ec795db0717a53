//! Real HTTP site servers on local ports, driven by a master.
//!
//! ```text
//! cargo run --example site_server_http
//! ```

use fedfit::compdef::{survival_to_csv, CompType, ModelFormula};
use fedfit::cox::FitOptions;
use fedfit::master::MasterState;
use fedfit::sim::{seeded_definition, spawn_http_sites};
use fedfit::synth::{rng, split_dataset, SurvivalScenario};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let formula: ModelFormula = "Surv(time, status) ~ x1 + x2".parse().unwrap();
    let defn = seeded_definition(9, CompType::StratifiedCoxModel, Some(formula), "http demo");
    let data = SurvivalScenario::new(300, vec![0.4, -0.7]).generate(&mut rng(9)).unwrap();
    let csvs: Vec<String> =
        split_dataset(&data, 2).unwrap().iter().map(|d| survival_to_csv(d, "time", "status")).collect();

    let (servers, handles) = spawn_http_sites(dir.path(), &defn, &csvs).unwrap();
    for s in &servers {
        println!("site listening at {}", s.url());
    }
    let mut master = MasterState::new(defn);
    for h in handles {
        master.add_site(h).unwrap();
    }
    let fit = master.run_cox(&FitOptions::default()).unwrap();
    println!("{}", master.summarize(&fit));

    let log = std::fs::read_to_string(servers[0].service().request_log().path()).unwrap();
    println!("site1 logged {} requests; last:\n{}", log.lines().count(), log.lines().last().unwrap());
}
