//! Dense vectors and matrices with a fixed, deterministic accumulation order.
//!
//! Everything here is small-dimensional (p is the number of covariates or
//! matrix columns), so the routines are plain triple loops. All sums run
//! row-major, left to right, so results are reproducible bit for bit.

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("shape mismatch: {left} vs {right}")]
    Conformance { left: String, right: String },
    #[error("matrix has {len} values, expected {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("matrix is not symmetric within tolerance (entry {row},{col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
}

fn check_finite(values: &[f64]) -> Result<(), NumericsError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(NumericsError::NonFinite { index, value: values[index] }),
        None => Ok(()),
    }
}

/// A finite vector of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self, NumericsError> {
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &Vector) -> Result<f64, NumericsError> {
        conform_len(self.len(), other.len())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn scaled(&self, c: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * c).collect())
    }

    pub fn add(&self, other: &Vector) -> Result<Vector, NumericsError> {
        conform_len(self.len(), other.len())?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector, NumericsError> {
        conform_len(self.len(), other.len())?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        Vector::new(values).map_err(serde::de::Error::custom)
    }
}

fn conform_len(a: usize, b: usize) -> Result<(), NumericsError> {
    if a == b {
        Ok(())
    } else {
        Err(NumericsError::Conformance { left: format!("[{a}]"), right: format!("[{b}]") })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Row-major finite matrix.
#[derive(Clone, PartialEq, Serialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawMatrix::deserialize(d)?;
        Matrix::from_row_major(raw.rows, raw.cols, raw.values).map_err(serde::de::Error::custom)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Zero-row or zero-column matrices are allowed; they show up as empty
    /// accumulators (e.g. `U` before the first SVD component).
    pub fn from_row_major(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, NumericsError> {
        if values.len() != rows * cols {
            return Err(NumericsError::BadLength { rows, cols, len: values.len() });
        }
        check_finite(&values)?;
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(NumericsError::Conformance {
                    left: format!("row 0 has {cols} columns"),
                    right: format!("row {i} has {}", r.len()),
                });
            }
            values.extend_from_slice(r);
        }
        Self::from_row_major(rows.len(), cols, values)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn diagonal(d: &[f64]) -> Result<Self, NumericsError> {
        check_finite(d)?;
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in d.iter().enumerate() {
            m.values[i * n + i] = *v;
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vector {
        Vector((0..self.rows).map(|r| self.get(r, c)).collect())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.values[c * self.rows + r] = self.get(r, c);
            }
        }
        out
    }

    /// Appends a column. The column must be finite and have `rows` entries.
    pub fn push_column(&mut self, col: &Vector) -> Result<(), NumericsError> {
        if self.cols == 0 && self.rows == 0 {
            self.rows = col.len();
        }
        conform_len(self.rows, col.len())?;
        let new_cols = self.cols + 1;
        let mut values = Vec::with_capacity(self.rows * new_cols);
        for r in 0..self.rows {
            values.extend_from_slice(self.row(r));
            values.push(col[r]);
        }
        self.cols = new_cols;
        self.values = values;
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        self.conform_same(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, values })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        self.conform_same(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, values })
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != other.rows {
            return Err(self.shape_err(other));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(r, k) * other.get(k, c);
                }
                out.values[r * other.cols + c] = acc;
            }
        }
        Ok(out)
    }

    pub fn frobenius(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Checks symmetry within `rel_tol` relative to the largest entry.
    pub fn check_symmetric(&self, rel_tol: f64) -> Result<(), NumericsError> {
        if self.rows != self.cols {
            return Err(NumericsError::Conformance {
                left: format!("{}x{}", self.rows, self.cols),
                right: "square".into(),
            });
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                if (self.get(r, c) - self.get(c, r)).abs() > rel_tol * scale {
                    return Err(NumericsError::NotSymmetric { row: r, col: c });
                }
            }
        }
        Ok(())
    }

    fn conform_same(&self, other: &Matrix) -> Result<(), NumericsError> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(self.shape_err(other))
        }
    }

    fn shape_err(&self, other: &Matrix) -> NumericsError {
        NumericsError::Conformance {
            left: format!("{}x{}", self.rows, self.cols),
            right: format!("{}x{}", other.rows, other.cols),
        }
    }

    #[cfg(test)]
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// `m · x`.
pub fn mat_vec(m: &Matrix, x: &Vector) -> Result<Vector, NumericsError> {
    if m.cols != x.len() {
        return Err(NumericsError::Conformance {
            left: format!("{}x{}", m.rows, m.cols),
            right: format!("[{}]", x.len()),
        });
    }
    Ok(Vector((0..m.rows).map(|r| dot(m.row(r), x.as_slice())).collect()))
}

/// `mᵀ · x`, accumulated over rows of `m` in order.
pub fn mat_t_vec(m: &Matrix, x: &Vector) -> Result<Vector, NumericsError> {
    if m.rows != x.len() {
        return Err(NumericsError::Conformance {
            left: format!("{}x{} (transposed)", m.rows, m.cols),
            right: format!("[{}]", x.len()),
        });
    }
    let mut out = vec![0.0; m.cols];
    for r in 0..m.rows {
        let xr = x[r];
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v * xr;
        }
    }
    Ok(Vector(out))
}

pub fn norm2(x: &Vector) -> f64 {
    dot(x.as_slice(), x.as_slice()).sqrt()
}

/// `a = L·D·Lᵀ` factorization (unit lower `L`, positive diagonal `D`) of a
/// symmetric positive definite matrix. Square-root free, so diagonal inputs
/// invert exactly.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self, NumericsError> {
        a.check_symmetric(1e-10)?;
        let n = a.rows();
        let mut l = vec![0.0; n * n];
        let mut d = vec![0.0; n];
        for j in 0..n {
            let mut dj = a.get(j, j);
            for k in 0..j {
                dj -= l[j * n + k] * l[j * n + k] * d[k];
            }
            // Relative pivot floor: anything this small is numerically singular.
            if !(dj > a.get(j, j).abs() * 1e-13) {
                return Err(NumericsError::NotPositiveDefinite { pivot: j, value: dj });
            }
            d[j] = dj;
            l[j * n + j] = 1.0;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k] * d[k];
                }
                l[i * n + j] = s / dj;
            }
        }
        Ok(Self { n, lower: l, diag: d })
    }

    pub fn solve(&self, b: &Vector) -> Result<Vector, NumericsError> {
        conform_len(self.n, b.len())?;
        let n = self.n;
        let l = &self.lower;
        let mut y = b.as_slice().to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s;
        }
        for (yi, di) in y.iter_mut().zip(&self.diag) {
            *yi /= di;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * y[k];
            }
            y[i] = s;
        }
        Vector::new(y)
    }

    pub fn inverse(&self) -> Result<Matrix, NumericsError> {
        let n = self.n;
        let mut out = Matrix::zeros(n, n);
        for c in 0..n {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            let col = self.solve(&Vector(e))?;
            for r in 0..n {
                out.values[r * n + c] = col[r];
            }
        }
        // Symmetrize away rounding asymmetry.
        for r in 0..n {
            for c in (r + 1)..n {
                let avg = 0.5 * (out.values[r * n + c] + out.values[c * n + r]);
                out.values[r * n + c] = avg;
                out.values[c * n + r] = avg;
            }
        }
        Ok(out)
    }
}

pub fn solve_spd(a: &Matrix, b: &Vector) -> Result<Vector, NumericsError> {
    Cholesky::factor(a)?.solve(b)
}

pub fn invert_spd(a: &Matrix) -> Result<Matrix, NumericsError> {
    Cholesky::factor(a)?.inverse()
}

/// Upper-tail probability of the standard normal, `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(Vector::new(vec![1.0, f64::NAN]), Err(NumericsError::NonFinite { index: 1, .. })));
        assert!(Matrix::from_row_major(1, 2, vec![f64::INFINITY, 0.0]).is_err());
        assert!(matches!(
            Matrix::from_row_major(2, 2, vec![0.0; 3]),
            Err(NumericsError::BadLength { .. })
        ));
    }

    #[test]
    fn identity_and_diagonal_products() {
        assert_eq!(mat_vec(&Matrix::identity(2), &v(&[3.0, 4.0])).unwrap(), v(&[3.0, 4.0]));
        let d = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(mat_t_vec(&d, &v(&[1.0, 1.0])).unwrap(), v(&[2.0, 1.0]));
    }

    #[test]
    fn mat_vec_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = Matrix::from_row_major(4, 3, vals.clone()).unwrap();
        let x = v(&[0.3, -1.2, 2.5]);
        let got = mat_vec(&m, &x).unwrap();
        for r in 0..4 {
            let mut s = 0.0;
            for c in 0..3 {
                s += vals[r * 3 + c] * x[c];
            }
            assert!((got[r] - s).abs() <= 1e-15 * s.abs().max(1.0));
        }
        let y = v(&[1.0, -2.0, 0.5, 4.0]);
        let got_t = mat_t_vec(&m, &y).unwrap();
        let via_transpose = mat_vec(&m.transpose(), &y).unwrap();
        for c in 0..3 {
            assert!((got_t[c] - via_transpose[c]).abs() <= 1e-15 * got_t[c].abs().max(1.0));
        }
    }

    #[test]
    fn conformance_error_names_shapes() {
        let err = mat_vec(&Matrix::zeros(2, 3), &Vector::zeros(2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("[2]"), "{msg}");
        assert!(mat_t_vec(&Matrix::zeros(2, 3), &Vector::zeros(3)).is_err());
    }

    #[test]
    fn spd_solve_and_invert() {
        assert_eq!(solve_spd(&Matrix::identity(3), &v(&[1.0, 2.0, 3.0])).unwrap(), v(&[1.0, 2.0, 3.0]));
        let inv = invert_spd(&Matrix::diagonal(&[4.0, 2.0]).unwrap()).unwrap();
        assert_eq!(inv.as_slice(), &[0.25, 0.0, 0.0, 0.5]);

        let a = Matrix::from_rows(&[vec![4.0, 1.0, 0.5], vec![1.0, 3.0, 0.2], vec![0.5, 0.2, 2.0]]).unwrap();
        let b = v(&[1.0, -2.0, 0.7]);
        let x = solve_spd(&a, &b).unwrap();
        let back = mat_vec(&a, &x).unwrap();
        assert!(norm2(&back.sub(&b).unwrap()) / norm2(&b) < 1e-12);
    }

    #[test]
    fn singular_and_indefinite_rejected() {
        let s = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(solve_spd(&s, &v(&[1.0, 1.0])), Err(NumericsError::NotPositiveDefinite { pivot: 1, .. })));
        let ind = Matrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(invert_spd(&ind).is_err());
        let asym = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(Cholesky::factor(&asym), Err(NumericsError::NotSymmetric { .. })));
    }

    #[test]
    fn norm_cases() {
        assert_eq!(norm2(&v(&[3.0, 4.0])), 5.0);
        assert_eq!(norm2(&Vector::zeros(3)), 0.0);
        assert_eq!(norm2(&Vector::zeros(0)), 0.0);
        assert!((norm2(&Vector::filled(60, 1.0)) - 60f64.sqrt()).abs() < 1e-15);
    }

    fn simpson_upper_tail(z: f64) -> f64 {
        // P(Z > z) = 0.5 - ∫_0^z φ(t) dt for z ≥ 0
        let n = 20_000;
        let h = z / n as f64;
        let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = phi(0.0) + phi(z);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * phi(i as f64 * h);
        }
        0.5 - s * h / 3.0
    }

    #[test]
    fn normal_tail_values() {
        assert_eq!(normal_sf(0.0), 0.5);
        assert!((2.0 * normal_sf(3.4501) / 5.6041e-4 - 1.0).abs() < 1e-3);
        let z = 1.959964;
        assert!((normal_sf(z) - simpson_upper_tail(z)).abs() < 1e-12, "{:e} {:e}", normal_sf(z), simpson_upper_tail(z));
        assert!((normal_sf(z) - 0.025).abs() < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop, prop_assert, prop_assume, proptest};

        fn spd(n: usize, seed: u64) -> Matrix {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = Matrix::from_row_major(n, n, g).unwrap();
            let mut a = g.transpose().matmul(&g).unwrap();
            for i in 0..n {
                a.values_mut()[i * n + i] += 0.5;
            }
            a
        }

        proptest! {
            #[test]
            fn solve_reproduces_rhs(n in 1usize..7, seed in any::<u64>(), b in prop::collection::vec(-10.0f64..10.0, 7)) {
                let a = spd(n, seed);
                let b = Vector::new(b[..n].to_vec()).unwrap();
                prop_assume!(norm2(&b) > 1e-6);
                let x = solve_spd(&a, &b).unwrap();
                let r = mat_vec(&a, &x).unwrap().sub(&b).unwrap();
                prop_assert!(norm2(&r) / norm2(&b) < 1e-12);
            }

            #[test]
            fn norm_is_homogeneous(x in prop::collection::vec(-1e3f64..1e3, 0..20), c in -1e3f64..1e3) {
                let x = Vector::new(x).unwrap();
                let lhs = norm2(&x.scaled(c));
                let rhs = c.abs() * norm2(&x);
                prop_assert!((lhs - rhs).abs() <= 1e-15 * rhs.max(f64::MIN_POSITIVE));
            }

            #[test]
            fn normal_tail_symmetry(z in -12.0f64..12.0) {
                prop_assert!((normal_sf(z) + normal_sf(-z) - 1.0).abs() < 1e-14);
            }
        }
    }
}
