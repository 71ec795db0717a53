//! A site is killed between SVD components and restarted from its workspace.
//! The master's retry reaches the restarted process and the run finishes
//! with the same answer.
//!
//! ```text
//! cargo run --example crash_recovery
//! ```

use std::time::Duration;

use fedfit::compdef::{matrix_to_csv, CompType};
use fedfit::master::MasterState;
use fedfit::sim::{seeded_definition, sim_site_config, spawn_http_sites};
use fedfit::site::spawn_site_server;
use fedfit::svd::{svd_oracle, SvdOptions};
use fedfit::synth::{contiguous_split, rng, row_block, standard_normal_matrix};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let x = standard_normal_matrix(40, 4, &mut rng(8));
    let csvs: Vec<String> = contiguous_split(40, 2).into_iter().map(|r| matrix_to_csv(&row_block(&x, r))).collect();
    let defn = seeded_definition(8, CompType::RankKSvd, None, "crash demo");
    let (mut servers, handles) = spawn_http_sites(dir.path(), &defn, &csvs).unwrap();
    let mut master = MasterState::new(defn);
    for h in handles {
        master.add_site(h).unwrap();
    }

    let victim = servers.pop().unwrap();
    let mut config = sim_site_config("site2", dir.path().join("site2"));
    config.listen = victim.addr();
    let mut victim = Some(victim);
    let mut restart = None;
    let r = master
        .run_svd_with_hook(&SvdOptions { k: 3, ..SvdOptions::default() }, |done| {
            if done == 1 {
                println!("killing site2 after component 1");
                victim.take().unwrap().kill();
                let config = config.clone();
                restart = Some(std::thread::spawn(move || {
                    std::thread::sleep(Duration::from_millis(500));
                    println!("site2 restarting");
                    spawn_site_server(&config).unwrap()
                }));
            }
        })
        .unwrap();
    let _site2 = restart.map(|t| t.join().unwrap());
    let oracle = svd_oracle(&x, 3).unwrap();
    println!("d = {:?}\noracle d = {:?}", r.d, oracle.d);
}
