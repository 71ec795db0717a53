use serde::{Deserialize, Serialize};

use super::{sign_aligned_distance, SvdError, SvdResult};
use crate::numerics::{mat_t_vec, mat_vec, norm2, Matrix, Vector};

/// The mutable part of a site's SVD computation. It is small enough to
/// persist after every request; the data partition itself is stored apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdIterationState {
    /// Accumulated unit left vectors, `n_j × r`.
    pub u_local: Matrix,
    pub u_current: Vector,
    /// Right vectors received from the master, `p × r`.
    pub v_master: Matrix,
    pub d: Vec<f64>,
}

impl SvdIterationState {
    pub fn fresh(n: usize, p: usize) -> Self {
        Self {
            u_local: Matrix::zeros(n, 0),
            u_current: Vector::filled(n, 1.0),
            v_master: Matrix::zeros(p, 0),
            d: Vec::new(),
        }
    }

    pub fn components(&self) -> usize {
        self.d.len()
    }
}

/// One site's private partition plus its iteration state.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdSlaveState {
    x: Matrix,
    state: SvdIterationState,
}

impl SvdSlaveState {
    pub fn new(x: Matrix) -> Result<Self, SvdError> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(SvdError::Dimension(format!("partition must be nonempty, got {}x{}", x.rows(), x.cols())));
        }
        let state = SvdIterationState::fresh(x.rows(), x.cols());
        Ok(Self { x, state })
    }

    /// Reattaches persisted iteration state to the partition it came from.
    pub fn resume(x: Matrix, state: SvdIterationState) -> Result<Self, SvdError> {
        let (n, p) = x.shape();
        let r = state.d.len();
        if state.u_current.len() != n
            || state.u_local.shape() != (n, r)
            || state.v_master.shape() != (p, r)
        {
            return Err(SvdError::Dimension("persisted state does not match the data partition".into()));
        }
        Ok(Self { x, state })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn iteration_state(&self) -> &SvdIterationState {
        &self.state
    }

    /// Forgets all completed components; returns `n_j`.
    pub fn init(&mut self) -> usize {
        self.state = SvdIterationState::fresh(self.n(), self.p());
        self.n()
    }

    /// Normalizes the current left vector by the global norm, then returns
    /// `(X − U·D·Vᵀ)ᵀ u`, computed as `Xᵀu − V·D·(Uᵀu)`.
    pub fn v_step(&mut self, u_norm: f64) -> Result<Vector, SvdError> {
        if !(u_norm > 0.0) || !u_norm.is_finite() {
            return Err(SvdError::Dimension(format!("global norm must be positive, got {u_norm}")));
        }
        let s = &mut self.state;
        s.u_current = s.u_current.scaled(1.0 / u_norm);
        let mut v = mat_t_vec(&self.x, &s.u_current)?;
        if !s.d.is_empty() {
            let proj = mat_t_vec(&s.u_local, &s.u_current)?;
            let weighted = Vector::new(proj.iter().zip(&s.d).map(|(a, d)| a * d).collect())?;
            v = v.sub(&mat_vec(&s.v_master, &weighted)?)?;
        }
        Ok(v)
    }

    /// Sets the current left vector to `X·v` (undeflated) and returns its
    /// squared norm.
    pub fn u_step(&mut self, v: &Vector) -> Result<f64, SvdError> {
        let u = mat_vec(&self.x, v)?;
        let sq = u.dot(&u)?;
        self.state.u_current = u;
        Ok(sq)
    }

    /// Stores the converged component and resets the left vector to all ones.
    pub fn finalize_component(&mut self, v: &Vector, d: f64) -> Result<(), SvdError> {
        if v.len() != self.p() {
            return Err(SvdError::Dimension(format!("v has {} entries, partition has {} columns", v.len(), self.p())));
        }
        if !(d > 0.0) {
            return Err(SvdError::Degenerate(format!("singular value {d} is not positive")));
        }
        let s = &mut self.state;
        s.u_local.push_column(&s.u_current.scaled(1.0 / d))?;
        s.v_master.push_column(v)?;
        s.d.push(d);
        s.u_current = Vector::filled(self.x.rows(), 1.0);
        Ok(())
    }
}

/// The master's view of all participating sites. Every call fans out to all
/// sites and returns replies in a fixed site order, which is also the order
/// in which they are summed.
pub trait SvdFederation {
    type Error;
    /// Returns `(n_j, p_j)` per site.
    fn init_all(&mut self) -> Result<Vec<(usize, usize)>, Self::Error>;
    fn v_step_all(&mut self, u_norm: f64) -> Result<Vec<Vector>, Self::Error>;
    fn u_step_all(&mut self, v: &Vector) -> Result<Vec<f64>, Self::Error>;
    fn finalize_all(&mut self, v: &Vector, d: f64) -> Result<(), Self::Error>;
}

impl SvdFederation for [SvdSlaveState] {
    type Error = SvdError;

    fn init_all(&mut self) -> Result<Vec<(usize, usize)>, SvdError> {
        Ok(self.iter_mut().map(|s| (s.init(), s.p())).collect())
    }

    fn v_step_all(&mut self, u_norm: f64) -> Result<Vec<Vector>, SvdError> {
        self.iter_mut().map(|s| s.v_step(u_norm)).collect()
    }

    fn u_step_all(&mut self, v: &Vector) -> Result<Vec<f64>, SvdError> {
        self.iter_mut().map(|s| s.u_step(v)).collect()
    }

    fn finalize_all(&mut self, v: &Vector, d: f64) -> Result<(), SvdError> {
        self.iter_mut().try_for_each(|s| s.finalize_component(v, d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdOptions {
    pub k: usize,
    pub thr: f64,
    pub max_iter: usize,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self { k: 1, thr: 1e-12, max_iter: 100 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SvdRunError<E> {
    #[error("site failure: {0}")]
    Site(E),
    #[error(transparent)]
    Svd(#[from] SvdError),
}

/// Privacy-preserving rank-k SVD driven from the master side.
///
/// Sites only ever reveal `n_j`, p-vectors `v^[j]` and scalars `‖u^[j]‖²`.
/// Squared norms are transmitted so the global norm is the proper Euclidean
/// `√(Σ_j ‖u^[j]‖²)`.
pub fn master_run_svd<F>(fed: &mut F, opts: &SvdOptions) -> Result<SvdResult, SvdRunError<F::Error>>
where
    F: SvdFederation + ?Sized,
{
    if opts.k == 0 {
        return Err(SvdError::InvalidRank { k: 0, max: 0 }.into());
    }
    if !(opts.thr > 0.0) || opts.max_iter == 0 {
        return Err(SvdError::Dimension(format!("invalid thr={} max_iter={}", opts.thr, opts.max_iter)).into());
    }
    let shapes = fed.init_all().map_err(SvdRunError::Site)?;
    let p = shapes.first().map(|s| s.1).ok_or_else(|| SvdError::Dimension("no sites".into()))?;
    if let Some(j) = shapes.iter().position(|s| s.1 != p) {
        return Err(SvdError::Dimension(format!("site {j} has {} columns, site 0 has {p}", shapes[j].1)).into());
    }
    let n_total: usize = shapes.iter().map(|s| s.0).sum();
    let max_rank = n_total.min(p);
    if opts.k > max_rank {
        return Err(SvdError::InvalidRank { k: opts.k, max: max_rank }.into());
    }

    let mut v_all = Matrix::zeros(p, 0);
    let mut d_all = Vec::with_capacity(opts.k);
    let mut iterations = Vec::with_capacity(opts.k);
    let mut converged = Vec::with_capacity(opts.k);
    for component in 0..opts.k {
        let mut u_norm = (n_total as f64).sqrt();
        let mut v_old: Option<Vector> = None;
        let mut v = Vector::zeros(p);
        let mut done = false;
        let mut iter = 0;
        while iter < opts.max_iter {
            iter += 1;
            let parts = fed.v_step_all(u_norm).map_err(SvdRunError::Site)?;
            v = sum_vectors(&parts, p)?;
            let nv = norm2(&v);
            if nv == 0.0 {
                return Err(SvdError::Degenerate(format!("component {} has a zero right vector", component + 1)).into());
            }
            v = v.scaled(1.0 / nv);
            let squares = fed.u_step_all(&v).map_err(SvdRunError::Site)?;
            u_norm = squares.iter().sum::<f64>().sqrt();
            if !(u_norm > 0.0) {
                return Err(SvdError::Degenerate(format!("component {} has a zero left vector", component + 1)).into());
            }
            if let Some(old) = &v_old {
                if sign_aligned_distance(&v, old) < opts.thr {
                    done = true;
                    break;
                }
            }
            v_old = Some(v.clone());
        }
        fed.finalize_all(&v, u_norm).map_err(SvdRunError::Site)?;
        v_all.push_column(&v).map_err(SvdError::from)?;
        d_all.push(u_norm);
        iterations.push(iter);
        converged.push(done);
    }
    Ok(SvdResult { v: v_all, d: d_all, iterations_per_component: iterations, converged })
}

fn sum_vectors(parts: &[Vector], p: usize) -> Result<Vector, SvdError> {
    let mut acc = Vector::zeros(p);
    for (j, part) in parts.iter().enumerate() {
        if part.len() != p {
            return Err(SvdError::Dimension(format!("site {j} returned {} entries, expected {p}", part.len())));
        }
        acc = acc.add(part)?;
    }
    Ok(acc)
}
