//! Fit a Cox model on one in-memory dataset, Efron and Breslow ties.
//!
//! ```text
//! cargo run --example local_cox
//! ```

use fedfit::cox::{cox_fit_pooled, cox_summary, FitOptions, TiesMethod};
use fedfit::synth::{rng, SurvivalScenario};

fn main() {
    let data = SurvivalScenario::new(400, vec![0.8, -0.5, 0.0]).with_time_grid(2.0).generate(&mut rng(42)).unwrap();
    println!("n = {}, events = {}\n", data.n(), data.n_events());
    for ties in [TiesMethod::Efron, TiesMethod::Breslow] {
        let fit = cox_fit_pooled(std::slice::from_ref(&data), &FitOptions { ties, ..FitOptions::default() }).unwrap();
        println!("{ties:?}: {} evaluations, loglik {:.4} -> {:.4}", fit.iterations, fit.loglik_initial, fit.loglik_final);
        println!("{}", cox_summary(&fit));
    }
}
