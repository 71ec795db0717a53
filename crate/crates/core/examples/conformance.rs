//! The same scenarios against an in-process site and an HTTP site. Any
//! difference in status or decoded body is printed.
//!
//! ```text
//! cargo run --example conformance
//! ```

use fedfit::sim::{conformance_diff, conformance_suite, http_factory, loopback_factory};

fn main() {
    let loopback = conformance_suite(loopback_factory()).unwrap();
    let http = conformance_suite(http_factory()).unwrap();
    for s in &loopback {
        let statuses: Vec<String> = s.observed.iter().map(|o| format!("{}={}", o.step, o.status.unwrap_or(0))).collect();
        println!("{:<24} {}", s.name, statuses.join(" "));
    }
    let diff = conformance_diff(&loopback, &http);
    println!("\n{} differences", diff.len());
    for d in diff {
        println!("  {d}");
    }
}
