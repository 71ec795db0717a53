use super::*;
use crate::numerics::{Matrix, Vector};
use crate::synth::{rng, split_dataset, SurvivalScenario};

/// Term-by-term partial likelihood from explicitly enumerated risk sets, on
/// uncentered covariates. `strata[i]` labels subject `i`.
fn brute_force(
    time: &[f64],
    event: &[bool],
    x: &[Vec<f64>],
    strata: &[usize],
    beta: &[f64],
    ties: TiesMethod,
) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let n = time.len();
    let p = beta.len();
    let lin = |i: usize| x[i].iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
    let mut ll = 0.0;
    let mut score = vec![0.0; p];
    let mut info = vec![vec![0.0; p]; p];
    let mut death_times: Vec<(usize, f64)> = (0..n).filter(|&i| event[i]).map(|i| (strata[i], time[i])).collect();
    death_times.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    death_times.dedup();
    for (s, t) in death_times {
        let risk: Vec<usize> = (0..n).filter(|&j| strata[j] == s && time[j] >= t).collect();
        let dead: Vec<usize> = risk.iter().copied().filter(|&j| time[j] == t && event[j]).collect();
        let d = dead.len();
        for &i in &dead {
            ll += lin(i);
            for a in 0..p {
                score[a] += x[i][a];
            }
        }
        for l in 0..d {
            let frac = match ties {
                TiesMethod::Breslow => 0.0,
                TiesMethod::Efron => l as f64 / d as f64,
            };
            let weight = |j: usize| {
                let w = lin(j).exp();
                if dead.contains(&j) {
                    w * (1.0 - frac)
                } else {
                    w
                }
            };
            let s0: f64 = risk.iter().map(|&j| weight(j)).sum();
            ll -= s0.ln();
            let mean: Vec<f64> = (0..p).map(|a| risk.iter().map(|&j| weight(j) * x[j][a]).sum::<f64>() / s0).collect();
            for a in 0..p {
                score[a] -= mean[a];
                for b in 0..p {
                    let second: f64 = risk.iter().map(|&j| weight(j) * x[j][a] * x[j][b]).sum::<f64>() / s0;
                    info[a][b] += second - mean[a] * mean[b];
                }
            }
        }
    }
    (ll, score, info)
}

fn dataset(time: &[f64], event: &[u8], x: &[Vec<f64>]) -> SurvivalDataset {
    let p = x[0].len();
    SurvivalDataset::new(
        time.to_vec(),
        event.iter().map(|&e| e == 1).collect(),
        Matrix::from_rows(x).unwrap(),
        (1..=p).map(|j| format!("x{j}")).collect(),
    )
    .unwrap()
}

fn rows_of(d: &SurvivalDataset) -> Vec<Vec<f64>> {
    (0..d.n()).map(|i| d.covariates().row(i).to_vec()).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn assert_matches_oracle(stats: &CoxLocalStats, oracle: &(f64, Vec<f64>, Vec<Vec<f64>>), tol: f64) {
    assert!(rel(stats.loglik, oracle.0) < tol, "loglik {} vs {}", stats.loglik, oracle.0);
    let p = oracle.1.len();
    let scale = oracle.1.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for a in 0..p {
        assert!((stats.score[a] - oracle.1[a]).abs() <= tol * scale, "score[{a}]");
        for b in 0..p {
            assert!(rel(stats.info.get(a, b), oracle.2[a][b]) < tol, "info[{a}][{b}]");
        }
    }
}

#[test]
fn zero_covariates_closed_form() {
    let d = dataset(&[1.0, 2.0, 3.0], &[1, 1, 0], &[vec![0.0], vec![0.0], vec![0.0]]);
    let s = cox_local_stats(&d, &Vector::zeros(1), TiesMethod::Efron).unwrap();
    assert!((s.loglik + (3f64.ln() + 2f64.ln())).abs() < 1e-15);
    assert_eq!(s.score.as_slice(), &[0.0]);
    assert_eq!(s.info.as_slice(), &[0.0]);
    assert_eq!((s.n_events, s.n_subjects), (2, 3));
}

#[test]
fn beta_zero_loglik_is_minus_log_risk_set_sizes() {
    let d = SurvivalScenario::new(40, vec![0.7, -0.2]).generate(&mut rng(11)).unwrap();
    let s = cox_local_stats(&d, &Vector::zeros(2), TiesMethod::Breslow).unwrap();
    let mut expected = 0.0;
    for i in 0..d.n() {
        if d.event()[i] {
            let at_risk = d.time().iter().filter(|&&t| t >= d.time()[i]).count();
            expected -= (at_risk as f64).ln();
        }
    }
    assert!(rel(s.loglik, expected) < 1e-13);
}

#[test]
fn tied_pair_matches_enumeration_oracle() {
    let time = [2.0, 5.0, 5.0, 7.0, 9.0, 11.0];
    let event = [1, 1, 1, 0, 1, 0];
    let x = vec![
        vec![0.5, 1.0],
        vec![-0.3, 0.0],
        vec![1.2, 1.0],
        vec![0.1, 0.0],
        vec![-1.1, 1.0],
        vec![0.7, 0.0],
    ];
    let d = dataset(&time, &event, &x);
    let beta = [0.4, -0.8];
    for ties in [TiesMethod::Breslow, TiesMethod::Efron] {
        let s = cox_local_stats(&d, &Vector::new(beta.to_vec()).unwrap(), ties).unwrap();
        let oracle = brute_force(&time, &d.event().to_vec(), &x, &[0; 6], &beta, ties);
        assert_matches_oracle(&s, &oracle, 1e-12);
    }
    // The two approximations must actually differ when there is a tie.
    let b = Vector::new(beta.to_vec()).unwrap();
    let br = cox_local_stats(&d, &b, TiesMethod::Breslow).unwrap();
    let ef = cox_local_stats(&d, &b, TiesMethod::Efron).unwrap();
    assert!((br.loglik - ef.loglik).abs() > 1e-3);
}

#[test]
fn dimension_and_overflow_errors() {
    let d = dataset(&[1.0, 2.0], &[1, 1], &[vec![0.0], vec![2000.0]]);
    assert!(matches!(cox_local_stats(&d, &Vector::zeros(2), TiesMethod::Efron), Err(CoxError::Dimension(_))));
    let err = cox_local_stats(&d, &Vector::new(vec![1.0]).unwrap(), TiesMethod::Efron).unwrap_err();
    assert_eq!(err, CoxError::Overflow { subject: 1 });
}

#[test]
fn dataset_invariants() {
    let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
    assert_eq!(
        SurvivalDataset::new(vec![1.0, 2.0], vec![false, false], x.clone(), vec!["a".into()]),
        Err(CoxError::NoEvents)
    );
    assert!(SurvivalDataset::new(vec![1.0, -2.0], vec![true, false], x.clone(), vec!["a".into()]).is_err());
    assert!(SurvivalDataset::new(vec![1.0], vec![true], x, vec!["a".into()]).is_err());
}

#[test]
fn aggregate_identities() {
    let d = SurvivalScenario::new(30, vec![0.3, 0.1]).generate(&mut rng(5)).unwrap();
    let beta = Vector::new(vec![0.2, -0.1]).unwrap();
    let s = cox_local_stats(&d, &beta, TiesMethod::Efron).unwrap();
    assert_eq!(cox_aggregate(std::slice::from_ref(&s)).unwrap(), s);
    assert_eq!(cox_aggregate(&[s.clone(), CoxLocalStats::zeros(2)]).unwrap(), s);
    assert!(cox_aggregate(&[]).is_err());
    assert!(matches!(cox_aggregate(&[s, CoxLocalStats::zeros(3)]), Err(CoxError::Dimension(_))));
}

#[test]
fn halves_sum_to_two_strata_oracle() {
    let d = SurvivalScenario::new(24, vec![0.5, -0.4]).with_time_grid(2.0).generate(&mut rng(21)).unwrap();
    let halves = split_dataset(&d, 2).unwrap();
    let beta = [0.3, 0.25];
    let b = Vector::new(beta.to_vec()).unwrap();
    let strata: Vec<usize> = (0..d.n()).map(|i| usize::from(i >= halves[0].n())).collect();
    for ties in [TiesMethod::Breslow, TiesMethod::Efron] {
        let parts: Vec<_> = halves.iter().map(|h| cox_local_stats(h, &b, ties).unwrap()).collect();
        let summed = cox_aggregate(&parts).unwrap();
        let oracle = brute_force(d.time(), d.event(), &rows_of(&d), &strata, &beta, ties);
        assert_matches_oracle(&summed, &oracle, 1e-12);
        // Unstratified statistics are a different quantity.
        let pooled = cox_local_stats(&d, &b, ties).unwrap();
        assert!((pooled.loglik - summed.loglik).abs() > 1e-6);
    }
}

#[test]
fn score_and_information_match_finite_differences() {
    let h = 1e-5;
    for seed in 0..20u64 {
        let d = SurvivalScenario::new(25, vec![0.4, -0.3, 0.2]).with_time_grid(1.5).generate(&mut rng(seed)).unwrap();
        let beta = vec![0.1 * seed as f64 % 0.5, -0.2, 0.3];
        for ties in [TiesMethod::Breslow, TiesMethod::Efron] {
            let at = |b: &[f64]| cox_local_stats(&d, &Vector::new(b.to_vec()).unwrap(), ties).unwrap();
            let s = at(&beta);
            for j in 0..3 {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (at(&up).loglik - at(&dn).loglik) / (2.0 * h);
                assert!(rel(s.score[j], fd) < 1e-6 || (s.score[j] - fd).abs() < 1e-8, "seed {seed} score {j}");
                let fd_col: Vec<f64> = (0..3).map(|a| -(at(&up).score[a] - at(&dn).score[a]) / (2.0 * h)).collect();
                for a in 0..3 {
                    assert!((s.info.get(a, j) - fd_col[a]).abs() < 1e-5 * s.info.frobenius(), "seed {seed} info {a},{j}");
                }
            }
        }
    }
}

#[test]
fn location_shift_is_invisible() {
    let d = SurvivalScenario::new(80, vec![0.5, -0.5]).generate(&mut rng(8)).unwrap();
    let mut shifted_vals = d.covariates().as_slice().to_vec();
    for r in 0..d.n() {
        shifted_vals[r * 2] += 1000.0;
    }
    let shifted = SurvivalDataset::new(
        d.time().to_vec(),
        d.event().to_vec(),
        Matrix::from_row_major(d.n(), 2, shifted_vals).unwrap(),
        d.covariate_names().to_vec(),
    )
    .unwrap();
    let a = cox_fit_pooled(&[d], &FitOptions::default()).unwrap();
    let b = cox_fit_pooled(&[shifted], &FitOptions::default()).unwrap();
    assert!(a.beta.sub(&b.beta).unwrap().max_abs() < 1e-8);
    let se_a = a.standard_errors();
    let se_b = b.standard_errors();
    for j in 0..2 {
        assert!((se_a[j] - se_b[j]).abs() < 1e-8);
    }
}

#[test]
fn noise_covariates_fit_near_zero() {
    let d = SurvivalScenario::new(200, vec![0.0, 0.0, 0.0]).generate(&mut rng(2024)).unwrap();
    let fit = cox_fit_pooled(&[d], &FitOptions::default()).unwrap();
    assert!(fit.converged);
    for (b, se) in fit.beta.iter().zip(fit.standard_errors()) {
        assert!(b.abs() < 3.0 * se, "{b} vs se {se}");
    }
    assert!(fit.loglik_final >= fit.loglik_initial - 1e-9);
}

#[test]
fn newton_trace_is_monotone() {
    for seed in 0..10 {
        let d = SurvivalScenario::new(60, vec![1.5, -1.0]).with_time_grid(0.5).generate(&mut rng(seed)).unwrap();
        let fit = cox_fit_pooled(&split_dataset(&d, 2).unwrap(), &FitOptions::default()).unwrap();
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }
}

#[test]
fn separated_covariate_does_not_panic() {
    // Larger covariate, earlier event: perfect ordering.
    let x: Vec<Vec<f64>> = (0..8).map(|i| vec![8.0 - i as f64]).collect();
    let time: Vec<f64> = (1..=8).map(f64::from).collect();
    let d = dataset(&time, &[1, 1, 1, 1, 1, 1, 1, 1], &x);
    match cox_fit_pooled(&[d], &FitOptions::default()) {
        Ok(fit) => assert!(!fit.converged || !fit.warnings.is_empty(), "{fit:?}"),
        Err(e) => panic!("separation should not be an error: {e}"),
    }
}

#[test]
fn singular_information_is_non_identifiable() {
    let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
    let d = dataset(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1, 0, 1, 1, 0, 1], &x);
    assert!(matches!(cox_fit_pooled(&[d], &FitOptions::default()), Err(FitError::NonIdentifiable(_))));
}

#[test]
fn single_dataset_pooled_equals_plain_fit() {
    let d = SurvivalScenario::new(100, vec![0.3, -0.6]).generate(&mut rng(1)).unwrap();
    let pooled = cox_fit_pooled(std::slice::from_ref(&d), &FitOptions::default()).unwrap();
    let plain = cox_fit(|b: &Vector| cox_local_stats(&d, b, TiesMethod::Efron), 2, &FitOptions::default()).unwrap();
    assert_eq!(pooled.beta, plain.beta);
    assert_eq!(pooled.variance, plain.variance);
}

#[test]
fn invalid_options_rejected() {
    let d = SurvivalScenario::new(10, vec![0.3]).generate(&mut rng(1)).unwrap();
    let opts = FitOptions { max_iter: 0, ..Default::default() };
    assert!(matches!(cox_fit_pooled(&[d], &opts), Err(FitError::InvalidOptions(_))));
}

#[test]
fn summary_row_matches_printed_values() {
    let row = SummaryRow::from_coef_se("age", -0.0280495, 0.0081301);
    assert!(rel(row.exp_coef, 0.97234) < 1e-3);
    assert!(rel(row.z, -3.4501) < 1e-3);
    assert!(rel(row.p, 5.6041e-04) < 1e-3);
    let zero = SummaryRow::from_coef_se("x", 0.0, 0.5);
    assert_eq!((zero.exp_coef, zero.z, zero.p), (1.0, 0.0, 1.0));
}

#[test]
fn summary_p_matches_quadrature() {
    // 2·P(Z > |z|) = 1 - 2∫_0^|z| φ, by composite Simpson.
    let two_sided = |z: f64| {
        let n = 20_000;
        let h = z / n as f64;
        let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = phi(0.0) + phi(z);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * phi(i as f64 * h);
        }
        1.0 - 2.0 * s * h / 3.0
    };
    for (coef, se) in [(-0.0280495, 0.0081301), (0.0091441, 0.0049918), (-0.5219296, 0.1244240)] {
        let row = SummaryRow::from_coef_se("c", coef, se);
        assert!(rel(row.p, two_sided(row.z.abs())) < 1e-6);
    }
}

#[test]
fn rendered_table_parses_back() {
    let table = SummaryTable {
        rows: vec![
            SummaryRow::from_coef_se("age", -0.0280495, 0.0081301),
            SummaryRow::from_coef_se("treat", -0.2125720, 0.0937466),
        ],
    };
    let text = table.render();
    assert!(text.contains("5.604") && text.contains("e-04"), "{text}");
    let back = SummaryTable::parse(&text).unwrap();
    for (a, b) in table.rows.iter().zip(&back.rows) {
        assert_eq!(a.name, b.name);
        for (x, y) in [(a.coef, b.coef), (a.exp_coef, b.exp_coef), (a.se, b.se), (a.z, b.z), (a.p, b.p)] {
            assert!(rel(y, x) < 1e-4, "{x} vs {y}");
        }
    }
}
