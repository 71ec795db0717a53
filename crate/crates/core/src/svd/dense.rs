use crate::numerics::{mat_t_vec, mat_vec, norm2, Matrix, Vector};

use super::{sign_aligned_distance, SvdError, SvdResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Rank1 {
    pub u: Vector,
    pub v: Vector,
    pub d: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternating power iteration for the leading singular triple of `x`,
/// started from the normalized all-ones left vector.
pub fn svd_rank1_dense(x: &Matrix, thr: f64, max_iter: usize) -> Result<Rank1, SvdError> {
    let (n, _) = x.shape();
    if n == 0 || x.max_abs() == 0.0 {
        return Err(SvdError::Degenerate("matrix is zero".into()));
    }
    let mut u = Vector::filled(n, 1.0 / (n as f64).sqrt());
    let mut v_old: Option<Vector> = None;
    let mut d = 0.0;
    let mut v = Vector::zeros(x.cols());
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        v = mat_t_vec(x, &u)?;
        let nv = norm2(&v);
        if nv == 0.0 {
            return Err(SvdError::Degenerate("left vector is orthogonal to the row space".into()));
        }
        v = v.scaled(1.0 / nv);
        u = mat_vec(x, &v)?;
        d = norm2(&u);
        u = u.scaled(1.0 / d);
        if let Some(old) = &v_old {
            if sign_aligned_distance(&v, old) < thr {
                converged = true;
                break;
            }
        }
        v_old = Some(v.clone());
    }
    Ok(Rank1 { u, v, d, iterations, converged })
}

/// Centralized rank-k SVD by one-sided (Hestenes) Jacobi rotations on the
/// columns of `x`. Independent of the power iteration; used as the reference.
pub fn svd_oracle(x: &Matrix, k: usize) -> Result<SvdResult, SvdError> {
    let (n, p) = x.shape();
    let max_rank = n.min(p);
    if k == 0 || k > max_rank {
        return Err(SvdError::InvalidRank { k, max: max_rank });
    }
    if x.max_abs() == 0.0 {
        return Err(SvdError::Degenerate("matrix is zero".into()));
    }
    // Columns of `a` are rotated until mutually orthogonal; `v` accumulates rotations.
    let mut a: Vec<Vec<f64>> = (0..p).map(|c| x.column(c).into_inner()).collect();
    let mut v: Vec<Vec<f64>> = (0..p).map(|c| (0..p).map(|r| f64::from(u8::from(r == c))).collect()).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        for i in 0..p {
            for j in (i + 1)..p {
                let alpha = dot(&a[i], &a[i]);
                let beta = dot(&a[j], &a[j]);
                let gamma = dot(&a[i], &a[j]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (ai, aj) in rotate_pair(&mut a, i, j) {
                    let (x_i, x_j) = (*ai, *aj);
                    *ai = c * x_i - s * x_j;
                    *aj = s * x_i + c * x_j;
                }
                for (vi, vj) in rotate_pair(&mut v, i, j) {
                    let (x_i, x_j) = (*vi, *vj);
                    *vi = c * x_i - s * x_j;
                    *vj = s * x_i + c * x_j;
                }
            }
        }
        sweeps += 1;
        if !rotated || sweeps >= 60 {
            break;
        }
    }
    let mut order: Vec<(f64, usize)> = (0..p).map(|c| (dot(&a[c], &a[c]).sqrt(), c)).collect();
    order.sort_by(|l, r| r.0.total_cmp(&l.0).then(l.1.cmp(&r.1)));
    let mut vm = Matrix::zeros(p, 0);
    let mut d = Vec::with_capacity(k);
    for &(sigma, c) in order.iter().take(k) {
        vm.push_column(&Vector::new(v[c].clone())?)?;
        d.push(sigma);
    }
    Ok(SvdResult { v: vm, d, iterations_per_component: vec![sweeps; k], converged: vec![true; k] })
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize) -> impl Iterator<Item = (&mut f64, &mut f64)> {
    let (left, right) = cols.split_at_mut(j);
    left[i].iter_mut().zip(right[0].iter_mut())
}
