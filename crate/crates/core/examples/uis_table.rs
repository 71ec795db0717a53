//! The UIS drug-treatment data split by site, fitted across two sites.
//!
//! ```text
//! cargo run --example uis_table
//! ```

use fedfit::compdef::{CompType, ModelFormula};
use fedfit::cox::FitOptions;
use fedfit::sim::{seeded_definition, spawn_sites};

fn main() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/uis.csv")).unwrap();
    let header = text.lines().next().unwrap();
    let site_col = header.split(',').position(|c| c == "site").unwrap();
    let mut sites = vec![format!("{header}\n"), format!("{header}\n")];
    for line in text.lines().skip(1) {
        let s: usize = line.split(',').nth(site_col).unwrap().parse().unwrap();
        sites[s].push_str(line);
        sites[s].push('\n');
    }

    let formula: ModelFormula =
        "Surv(time, censor) ~ age + becktota + ndrugfp1 + ndrugfp2 + ivhx3 + race + treat + strata(site)".parse().unwrap();
    let defn = seeded_definition(575, CompType::StratifiedCoxModel, Some(formula), "UIS");
    let fed = spawn_sites(2, &defn, &sites).unwrap();
    let master = fed.master().unwrap();
    let fit = master.run_cox(&FitOptions::default()).unwrap();
    println!("{}", master.summarize(&fit));
}
