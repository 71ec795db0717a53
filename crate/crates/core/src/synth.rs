//! Seeded synthetic data for self-checking runs.
//!
//! Survival times are exponential with a log-linear hazard in a known β;
//! SVD inputs are standard-normal matrices. Both are fully determined by the
//! seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::cox::{CoxError, SurvivalDataset};
use crate::numerics::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct SurvivalScenario {
    pub n: usize,
    pub beta: Vec<f64>,
    pub baseline_rate: f64,
    pub censor_rate: f64,
    /// Round times up to this grid to produce tied event times.
    pub time_grid: Option<f64>,
}

impl SurvivalScenario {
    pub fn new(n: usize, beta: Vec<f64>) -> Self {
        Self { n, beta, baseline_rate: 0.1, censor_rate: 0.03, time_grid: None }
    }

    pub fn with_time_grid(mut self, grid: f64) -> Self {
        self.time_grid = Some(grid);
        self
    }

    pub fn generate<R: Rng>(&self, rng: &mut R) -> Result<SurvivalDataset, CoxError> {
        let p = self.beta.len();
        let mut x = Vec::with_capacity(self.n * p);
        let mut time = Vec::with_capacity(self.n);
        let mut event = Vec::with_capacity(self.n);
        let censor = Exp::new(self.censor_rate).map_err(|e| CoxError::InvalidData(e.to_string()))?;
        for _ in 0..self.n {
            let row: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let lp: f64 = row.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
            let hazard = Exp::new(self.baseline_rate * lp.exp()).map_err(|e| CoxError::InvalidData(e.to_string()))?;
            let t = hazard.sample(rng);
            let c = censor.sample(rng);
            let (mut obs, died) = if t <= c { (t, true) } else { (c, false) };
            if let Some(g) = self.time_grid {
                obs = (obs / g).ceil() * g;
            }
            x.extend(row);
            time.push(obs);
            event.push(died);
        }
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        SurvivalDataset::new(time, event, Matrix::from_row_major(self.n, p, x)?, names)
    }
}

pub fn standard_normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let values = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_row_major(rows, cols, values).expect("normal draws are finite")
}

/// Splits `0..n` into `parts` contiguous ranges whose sizes differ by at most one.
pub fn contiguous_split(n: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    assert!(parts >= 1);
    let base = n / parts;
    let extra = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let len = base + usize::from(k < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Rows of `m` in `range`, as a new matrix.
pub fn row_block(m: &Matrix, range: std::ops::Range<usize>) -> Matrix {
    let cols = m.cols();
    let values = m.as_slice()[range.start * cols..range.end * cols].to_vec();
    Matrix::from_row_major(range.len(), cols, values).expect("sub-block of a finite matrix")
}

/// Splits a dataset into contiguous strata, each of which must contain an event.
pub fn split_dataset(data: &SurvivalDataset, parts: usize) -> Result<Vec<SurvivalDataset>, CoxError> {
    contiguous_split(data.n(), parts)
        .into_iter()
        .map(|r| data.select_rows(&r.collect::<Vec<_>>()))
        .collect()
}
