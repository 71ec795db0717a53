use std::time::Duration;

use super::*;
use crate::compdef::{survival_to_csv, ModelFormula};
use crate::cox::{cox_fit_pooled, SurvivalDataset};
use crate::protocol::{payload_bound_violations, transcript_assert_private};
use crate::sim::{seeded_definition, spawn_sites, Fault, MASTER_TOKEN};
use crate::synth::{rng, split_dataset, SurvivalScenario};

fn fast() -> RetryPolicy {
    RetryPolicy { retries: 1, backoff: Duration::from_millis(1) }
}

fn cox_setup(sites: usize, seed: u64) -> (ComputationDefinition, Vec<SurvivalDataset>, Vec<String>) {
    let formula: ModelFormula = "Surv(time, status) ~ x1 + x2".parse().unwrap();
    let defn = seeded_definition(seed, CompType::StratifiedCoxModel, Some(formula), "t");
    let data = SurvivalScenario::new(90 * sites, vec![0.7, -0.5]).generate(&mut rng(seed)).unwrap();
    let parts = split_dataset(&data, sites).unwrap();
    let csvs = parts.iter().map(|d| survival_to_csv(d, "time", "status")).collect();
    (defn, parts, csvs)
}

#[test]
fn distributed_fit_equals_pooled_fit() {
    let (defn, parts, csvs) = cox_setup(3, 21);
    let fed = spawn_sites(3, &defn, &csvs).unwrap();
    let master = fed.master().unwrap();
    let fit = master.run_cox(&FitOptions::default()).unwrap();
    let pooled = cox_fit_pooled(&parts, &FitOptions::default()).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.covariate_names, ["x1", "x2"]);
    assert_eq!(fit.iterations, pooled.iterations);
    for j in 0..2 {
        assert!((fit.beta.as_slice()[j] - pooled.beta.as_slice()[j]).abs() < 1e-10);
        assert!((fit.standard_errors()[j] - pooled.standard_errors()[j]).abs() < 1e-10);
    }
    for j in 0..3 {
        assert_eq!(fed.logged_requests(j, "CoxLocalStats"), fit.iterations);
    }
    let t = master.transcript();
    assert!(transcript_assert_private(&t, 2));
    assert!(payload_bound_violations(&t, 2, CompType::StratifiedCoxModel).is_empty());
}

#[test]
fn single_site_matches_local_fit() {
    let (defn, parts, csvs) = cox_setup(1, 4);
    let fed = spawn_sites(1, &defn, &csvs).unwrap();
    let fit = fed.master().unwrap().run_cox(&FitOptions::default()).unwrap();
    let local = cox_fit_pooled(&parts, &FitOptions::default()).unwrap();
    assert_eq!(fit.beta, local.beta);
    assert_eq!(fit.variance, local.variance);
}

#[test]
fn result_does_not_depend_on_add_order() {
    let (defn, _, csvs) = cox_setup(3, 8);
    let fed = spawn_sites(3, &defn, &csvs).unwrap();
    let mut handles = fed.handles();
    let forward = fed.master().unwrap().run_cox(&FitOptions::default()).unwrap();
    handles.reverse();
    handles.swap(0, 1);
    let mut master = MasterState::new(defn.clone());
    for h in handles {
        master.add_site(h).unwrap();
    }
    let shuffled = master.run_cox(&FitOptions::default()).unwrap();
    assert_eq!(forward.beta, shuffled.beta);
    assert_eq!(forward.variance, shuffled.variance);
}

#[test]
fn add_site_checks_name_reachability_and_registration() {
    let (defn, _, csvs) = cox_setup(2, 3);
    let fed = spawn_sites(2, &defn, &csvs).unwrap();
    let handles = fed.handles();
    let mut master = MasterState::new(defn.clone());
    master.add_site(handles[0].clone()).unwrap();
    assert!(matches!(master.add_site(handles[0].clone()), Err(MasterError::DuplicateSite(_))));

    let dead = SiteHandle::http("dead", "http://127.0.0.1:1", MASTER_TOKEN, "dead.csv");
    let err = master.add_site(dead).unwrap_err();
    assert_eq!(err.site(), Some("dead"));
    assert!(matches!(err, MasterError::Unreachable { .. }));

    let other = seeded_definition(99, CompType::RankKSvd, None, "other");
    let mut m2 = MasterState::new(other);
    assert!(matches!(m2.add_site(handles[1].clone()), Err(MasterError::NotRegistered { .. })));
    assert_eq!(master.sites().len(), 1);
}

#[test]
fn wrong_type_options_and_empty_registry_are_rejected() {
    let (defn, _, csvs) = cox_setup(1, 3);
    let fed = spawn_sites(1, &defn, &csvs).unwrap();
    let master = fed.master().unwrap();
    assert!(matches!(master.run_svd(&SvdOptions::default()), Err(MasterError::WrongCompType { .. })));
    let breslow = FitOptions { ties: TiesMethod::Breslow, ..FitOptions::default() };
    assert!(matches!(master.run_cox(&breslow), Err(MasterError::InvalidOptions(_))));
    assert!(matches!(MasterState::new(defn).run_cox(&FitOptions::default()), Err(MasterError::NoSites)));
}

fn svd_fed(seed: u64) -> crate::sim::SimFederation {
    let defn = seeded_definition(seed, CompType::RankKSvd, None, "svd");
    let x = crate::synth::standard_normal_matrix(60, 4, &mut rng(seed));
    let csvs: Vec<String> = crate::synth::contiguous_split(60, 2)
        .into_iter()
        .map(|r| crate::compdef::matrix_to_csv(&crate::synth::row_block(&x, r)))
        .collect();
    spawn_sites(2, &defn, &csvs).unwrap()
}

#[test]
fn svd_rank_zero_is_invalid() {
    let fed = svd_fed(2);
    let err = fed.master().unwrap().run_svd(&SvdOptions { k: 0, ..SvdOptions::default() }).unwrap_err();
    assert!(matches!(err, MasterError::Svd(SvdError::InvalidRank { .. })), "{err}");
}

#[test]
fn svd_hook_sees_each_component_and_payloads_stay_bounded() {
    let fed = svd_fed(5);
    let master = fed.master().unwrap();
    let mut seen = Vec::new();
    let r = master.run_svd_with_hook(&SvdOptions { k: 3, ..SvdOptions::default() }, |c| seen.push(c)).unwrap();
    assert_eq!(seen, [1, 2, 3]);
    assert_eq!(r.k(), 3);
    let t = master.transcript();
    assert!(payload_bound_violations(&t, 4, CompType::RankKSvd).is_empty());
    assert!(render_svd(&r).starts_with("$d\n"));
}

#[test]
fn dropped_request_is_retried_once() {
    let (defn, _, csvs) = cox_setup(2, 6);
    let fed = spawn_sites(2, &defn, &csvs).unwrap();
    let master = fed.master().unwrap().with_retry(fast());
    fed.site(1).inject(Fault::Drop);
    let fit = master.run_cox(&FitOptions::default()).unwrap();
    assert!(fit.converged);
    fed.site(1).inject(Fault::Drop);
    fed.site(1).inject(Fault::Drop);
    let err = master.run_cox(&FitOptions::default()).unwrap_err();
    assert_eq!(err.site(), Some("site2"));
}

#[test]
fn lost_init_reply_is_retried_but_lost_v_step_reply_aborts() {
    let fed = svd_fed(7);
    let master = fed.master().unwrap().with_retry(fast());
    fed.site(0).inject(Fault::LoseReply);
    assert!(master.run_svd(&SvdOptions::default()).is_ok());

    let fed = svd_fed(7);
    let master = fed.master().unwrap().with_retry(fast());
    fed.site(0).inject(Fault::Pass);
    fed.site(0).inject(Fault::LoseReply);
    let err = master.run_svd(&SvdOptions::default()).unwrap_err();
    assert!(matches!(err, MasterError::Unreachable { ref site, .. } if site == "site1"), "{err}");
    assert_eq!(fed.logged_requests(0, "SvdVStep"), 1);
}

#[test]
fn failed_run_returns_no_result_and_a_fresh_run_succeeds() {
    let (defn, _, csvs) = cox_setup(2, 12);
    let fed = spawn_sites(2, &defn, &csvs).unwrap();
    let master = fed.master().unwrap().with_retry(fast());
    let clean = master.run_cox(&FitOptions::default()).unwrap();
    fed.site(0).crash();
    let err = master.run_cox(&FitOptions::default()).unwrap_err();
    assert_eq!(err.site(), Some("site1"));
    fed.site(0).restart().unwrap();
    assert_eq!(master.run_cox(&FitOptions::default()).unwrap().beta, clean.beta);
}

#[test]
fn svd_does_not_depend_on_how_rows_are_split() {
    let x = crate::synth::standard_normal_matrix(60, 4, &mut rng(31));
    let defn = seeded_definition(31, CompType::RankKSvd, None, "split");
    let opts = SvdOptions { k: 2, thr: 1e-12, max_iter: 2000 };
    let run = |sites: usize| {
        let csvs: Vec<String> = crate::synth::contiguous_split(60, sites)
            .into_iter()
            .map(|r| crate::compdef::matrix_to_csv(&crate::synth::row_block(&x, r)))
            .collect();
        spawn_sites(sites, &defn, &csvs).unwrap().master().unwrap().run_svd(&opts).unwrap()
    };
    let (two, three) = (run(2), run(3));
    assert!(two.d.iter().zip(&three.d).all(|(a, b)| (a - b).abs() < 1e-9), "{:?} {:?}", two.d, three.d);
    for j in 0..2 {
        assert!(crate::svd::sign_aligned_distance(&two.v.column(j), &three.v.column(j)) < 1e-9);
    }
}
