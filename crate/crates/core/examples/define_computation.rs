//! Parse a formula, build a shareable definition and dry-run it against a
//! site's CSV before uploading anything.
//!
//! ```text
//! cargo run --example define_computation
//! ```

use fedfit::compdef::{validate_csv, ComputationDefinition, ModelFormula};

fn main() {
    let formula: ModelFormula = "Surv(time, censor) ~ age + treat + strata(site)".parse().unwrap();
    println!("columns needed: {:?}", formula.columns());
    let defn = ComputationDefinition::cox(formula, "demo", "Age and treatment");
    print!("{}", defn.to_canonical_json());

    let csv = "time,censor,age,treat,site\n5,1,30,0,0\n8,0,41,1,0\n3,1,,1,1\n9,1,35,1,1\n2,1,52,0,1\n7,0,28,0,0\n";
    let checked = validate_csv(&defn, csv);
    println!("\nvalidation: {}", serde_json::to_string_pretty(&checked.report).unwrap());

    for bad in ["Surv(t, d) ~ x + x", "Surv(t, d) ~", "Surv(t, t) ~ x"] {
        println!("{bad:<22} -> {}", bad.parse::<ModelFormula>().unwrap_err());
    }
}
