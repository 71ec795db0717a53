use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CoxError, SurvivalDataset};
use crate::numerics::{Matrix, Vector};

/// Approximation used when several events share a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiesMethod {
    Breslow,
    #[default]
    Efron,
}

impl fmt::Display for TiesMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiesMethod::Breslow => "breslow",
            TiesMethod::Efron => "efron",
        })
    }
}

impl FromStr for TiesMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "breslow" => Ok(Self::Breslow),
            "efron" => Ok(Self::Efron),
            other => Err(format!("unknown ties method {other:?}")),
        }
    }
}

/// Log partial likelihood, score and information of one stratum at some β.
/// This triple (plus two counts) is all a site ever reveals about its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxLocalStats {
    pub loglik: f64,
    pub score: Vector,
    pub info: Matrix,
    pub n_events: usize,
    pub n_subjects: usize,
}

impl CoxLocalStats {
    pub fn zeros(p: usize) -> Self {
        Self { loglik: 0.0, score: Vector::zeros(p), info: Matrix::zeros(p, p), n_events: 0, n_subjects: 0 }
    }

    pub fn p(&self) -> usize {
        self.score.len()
    }

    pub fn validate(&self) -> Result<(), CoxError> {
        let p = self.score.len();
        if self.info.shape() != (p, p) {
            return Err(CoxError::Dimension(format!(
                "score has {p} entries but information is {}x{}",
                self.info.rows(),
                self.info.cols()
            )));
        }
        if !self.loglik.is_finite() {
            return Err(CoxError::InvalidData("log-likelihood is not finite".into()));
        }
        self.info.check_symmetric(1e-10)?;
        Ok(())
    }
}

/// Running sums `Σ r`, `Σ r·x`, `Σ r·x·xᵀ` over a set of subjects.
struct Moments {
    s0: f64,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Moments {
    fn new(p: usize) -> Self {
        Self { s0: 0.0, s1: vec![0.0; p], s2: vec![0.0; p * p] }
    }

    fn clear(&mut self) {
        self.s0 = 0.0;
        self.s1.iter_mut().for_each(|v| *v = 0.0);
        self.s2.iter_mut().for_each(|v| *v = 0.0);
    }

    fn add(&mut self, r: f64, x: &[f64]) {
        let p = x.len();
        self.s0 += r;
        for a in 0..p {
            let rxa = r * x[a];
            self.s1[a] += rxa;
            for b in 0..p {
                self.s2[a * p + b] += rxa * x[b];
            }
        }
    }
}

/// Exact stratum statistics at `beta`, from one backward sweep over subjects
/// ordered by decreasing time.
///
/// Covariates are centered on their stratum means before exponentiation. The
/// partial likelihood is invariant to that shift, so the returned values are
/// those of the uncentered model.
pub fn cox_local_stats(data: &SurvivalDataset, beta: &Vector, ties: TiesMethod) -> Result<CoxLocalStats, CoxError> {
    let n = data.n();
    let p = data.p();
    if beta.len() != p {
        return Err(CoxError::Dimension(format!("beta has {} entries, dataset has {p} covariates", beta.len())));
    }
    let x = data.covariates();

    let mut mean = vec![0.0; p];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut centered = Vec::with_capacity(n * p);
    let mut eta = Vec::with_capacity(n);
    let mut risk = Vec::with_capacity(n);
    for i in 0..n {
        let mut lp = 0.0;
        for (j, v) in x.row(i).iter().enumerate() {
            let c = v - mean[j];
            centered.push(c);
            lp += c * beta[j];
        }
        let r = lp.exp();
        if !r.is_finite() {
            return Err(CoxError::Overflow { subject: i });
        }
        eta.push(lp);
        risk.push(r);
    }
    let row = |i: usize| &centered[i * p..(i + 1) * p];

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.time()[b].total_cmp(&data.time()[a]).then(a.cmp(&b)));

    let mut at_risk = Moments::new(p);
    let mut tied = Moments::new(p);
    let mut loglik = 0.0;
    let mut score = vec![0.0; p];
    let mut info = vec![0.0; p * p];
    let mut mean_l = vec![0.0; p];
    let mut n_events = 0usize;

    let mut start = 0;
    while start < n {
        let t = data.time()[order[start]];
        let mut end = start;
        while end < n && data.time()[order[end]] == t {
            end += 1;
        }
        tied.clear();
        let mut deaths = 0usize;
        for &i in &order[start..end] {
            at_risk.add(risk[i], row(i));
            if data.event()[i] {
                tied.add(risk[i], row(i));
                deaths += 1;
                loglik += eta[i];
                for (s, v) in score.iter_mut().zip(row(i)) {
                    *s += v;
                }
            }
        }
        for l in 0..deaths {
            let frac = match ties {
                TiesMethod::Breslow => 0.0,
                TiesMethod::Efron => l as f64 / deaths as f64,
            };
            let denom = at_risk.s0 - frac * tied.s0;
            loglik -= denom.ln();
            for a in 0..p {
                mean_l[a] = (at_risk.s1[a] - frac * tied.s1[a]) / denom;
                score[a] -= mean_l[a];
            }
            for a in 0..p {
                for b in 0..p {
                    let second = (at_risk.s2[a * p + b] - frac * tied.s2[a * p + b]) / denom;
                    info[a * p + b] += second - mean_l[a] * mean_l[b];
                }
            }
        }
        n_events += deaths;
        start = end;
    }

    // The two triangles are accumulated identically; enforce exact symmetry.
    for a in 0..p {
        for b in (a + 1)..p {
            info[b * p + a] = info[a * p + b];
        }
    }

    Ok(CoxLocalStats {
        loglik,
        score: Vector::new(score)?,
        info: Matrix::from_row_major(p, p, info)?,
        n_events,
        n_subjects: n,
    })
}

/// Sums per-stratum statistics in the given order.
pub fn cox_aggregate(parts: &[CoxLocalStats]) -> Result<CoxLocalStats, CoxError> {
    let first = parts.first().ok_or_else(|| CoxError::Dimension("no statistics to aggregate".into()))?;
    let p = first.p();
    let mut total = CoxLocalStats::zeros(p);
    for (k, part) in parts.iter().enumerate() {
        if part.p() != p || part.info.shape() != (p, p) {
            return Err(CoxError::Dimension(format!("part {k} has dimension {} but part 0 has {p}", part.p())));
        }
        total.loglik += part.loglik;
        total.score = total.score.add(&part.score)?;
        total.info = total.info.add(&part.info)?;
        total.n_events += part.n_events;
        total.n_subjects += part.n_subjects;
    }
    Ok(total)
}
