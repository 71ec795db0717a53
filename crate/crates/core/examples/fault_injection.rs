//! Dropped requests are retried once; a lost reply to a step that cannot be
//! repeated aborts the run and names the site.
//!
//! ```text
//! cargo run --example fault_injection
//! ```

use std::time::Duration;

use fedfit::compdef::{matrix_to_csv, CompType};
use fedfit::master::RetryPolicy;
use fedfit::sim::{seeded_definition, spawn_sites, Fault};
use fedfit::svd::SvdOptions;
use fedfit::synth::{rng, standard_normal_matrix};

fn main() {
    let csv = matrix_to_csv(&standard_normal_matrix(30, 3, &mut rng(2)));
    let defn = seeded_definition(2, CompType::RankKSvd, None, "faults");
    let fed = spawn_sites(2, &defn, &[csv.clone(), csv]).unwrap();
    let quick = RetryPolicy { retries: 1, backoff: Duration::from_millis(10) };
    let master = fed.master().unwrap().with_retry(quick);

    fed.site(1).inject(Fault::Pass);
    fed.site(1).inject(Fault::Drop);
    let r = master.run_svd(&SvdOptions::default()).unwrap();
    println!("dropped v-step retried, d = {:?}", r.d);

    fed.site(1).inject(Fault::Pass);
    fed.site(1).inject(Fault::LoseReply);
    let err = master.run_svd(&SvdOptions::default()).unwrap_err();
    println!("lost v-step reply: {err} (site {:?})", err.site());
}
