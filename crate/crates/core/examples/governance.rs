//! Gatekeeping at a site: unknown ids and other peers' computations are
//! refused, an operator can withdraw, and every request is logged.
//!
//! ```text
//! cargo run --example governance
//! ```

use fedfit::compdef::{matrix_to_csv, CompType};
use fedfit::master::{HttpTransport, MasterState, SiteTransport};
use fedfit::sim::{seeded_definition, spawn_http_sites, OPERATOR_TOKEN, OTHER_TOKEN};
use fedfit::site::LogFilter;
use fedfit::svd::SvdOptions;
use fedfit::synth::{rng, standard_normal_matrix};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let defn = seeded_definition(4, CompType::RankKSvd, None, "governed");
    let csv = matrix_to_csv(&standard_normal_matrix(20, 3, &mut rng(4)));
    let (servers, handles) = spawn_http_sites(dir.path(), &defn, &[csv.clone(), csv]).unwrap();
    let id = defn.id().to_string();

    let stranger = HttpTransport::new(&servers[0].url(), OTHER_TOKEN);
    println!("other peer reads status: HTTP {}", stranger.status(&id).unwrap().status);
    let unknown = handles[0].transport.status("00000000000000000000000000000000").unwrap();
    println!("unknown id: HTTP {}", unknown.status);

    let mut master = MasterState::new(defn.clone());
    for h in handles {
        master.add_site(h).unwrap();
    }
    let operator = HttpTransport::new(&servers[1].url(), OPERATOR_TOKEN);
    let err = master
        .run_svd_with_hook(&SvdOptions { k: 2, ..SvdOptions::default() }, |done| {
            if done == 1 {
                println!("site2 operator withdraws: HTTP {}", operator.withdraw(&id).unwrap().status);
            }
        })
        .unwrap_err();
    println!("run aborted: {err}");

    for e in servers[0].service().request_log().query(&LogFilter::default()).unwrap().iter().take(4) {
        println!("{} {:<8} {:<14} {:?}", e.timestamp.format("%H:%M:%S%.3f"), e.peer, e.method, e.outcome);
    }
}
