//! Small row-major dense matrix used for the quadrature operators.
//!
//! Rows are contiguous because every operator application is a sequence of
//! row dot products. Factorizations are delegated to nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    n: usize,
    data: Vec<f64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n, "dimension mismatch");
        Self {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scaled(-1.0))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let out = self.to_nalgebra() * other.to_nalgebra();
        Self::from_nalgebra(&out)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        Self::from_fn(m.nrows(), |i, j| m[(i, j)])
    }

    /// Inverse via LU; fails on a (numerically) singular matrix.
    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .to_nalgebra()
            .try_inverse()
            .ok_or_else(|| Error::Singular("matrix inverse failed".into()))?;
        Ok(Self::from_nalgebra(&inv))
    }

    /// Smallest eigenvalue of the symmetric part of the matrix.
    pub fn min_symmetric_eigenvalue(&self) -> f64 {
        let a = self.to_nalgebra();
        let sym = (&a + a.transpose()) * 0.5;
        sym.symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(*v))
    }
}

/// LU factorization reused across many right-hand sides.
pub struct LuSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl LuSolver {
    pub fn new(m: &Dense) -> Result<Self> {
        let lu = m.to_nalgebra().lu();
        // Reject pivots that are zero or negligible relative to the matrix scale.
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        let u = lu.u();
        let min_pivot = (0..m.dim()).fold(f64::INFINITY, |acc, i| acc.min(u[(i, i)].abs()));
        if !(min_pivot > scale * 1e-14) {
            return Err(Error::Singular(format!(
                "LU pivot {min_pivot:e} negligible against scale {scale:e}"
            )));
        }
        Ok(Self { lu, n: m.dim() })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::shape(format!(
                "rhs length {} vs system size {}",
                b.len(),
                self.n
            )));
        }
        let x = self
            .lu
            .solve(&DVector::from_column_slice(b))
            .ok_or_else(|| Error::Singular("LU solve failed".into()))?;
        Ok(x.iter().copied().collect())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `(D + L) x = b` for a lower-triangular matrix stored densely
/// (entries above the diagonal are ignored).
pub fn forward_substitution(m: &Dense, b: &[f64]) -> Result<Vec<f64>> {
    let n = m.dim();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let row = m.row(i);
        let s = dot(&row[..i], &x[..i]);
        let d = row[i];
        if d == 0.0 || !d.is_finite() {
            return Err(Error::Singular(format!("zero pivot at row {i}")));
        }
        x[i] = (b[i] - s) / d;
    }
    Ok(x)
}

/// Result of [`gmres`].
#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    /// Euclidean norm of the last true residual `b - A x`.
    pub residual: f64,
    /// Operator applications spent in Arnoldi steps.
    pub iterations: usize,
}

/// Restarted GMRES for a matrix-free operator, with modified Gram-Schmidt
/// and Givens rotations. Stops when the true residual norm is at most
/// `target` or after `max_iter` Arnoldi steps; the caller decides what a
/// non-converged outcome means.
pub fn gmres<F>(mut op: F, b: &[f64], x0: Vec<f64>, restart: usize, max_iter: usize, target: f64) -> Result<GmresOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    if x0.len() != n {
        return Err(Error::shape(format!("gmres start has length {}, expected {n}", x0.len())));
    }
    let restart = restart.max(1);
    let mut x = x0;
    let mut iterations = 0;
    loop {
        let ax = op(&x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = dot(&r, &r).sqrt();
        if !beta.is_finite() || beta <= target || iterations >= max_iter {
            return Ok(GmresOutcome {
                x,
                residual: beta,
                iterations,
            });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        // Column k of the Hessenberg matrix, already rotated.
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(restart);
        let mut rot: Vec<(f64, f64)> = Vec::with_capacity(restart);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k = 0;
        while k < restart && iterations < max_iter {
            let mut w = op(&basis[k])?;
            iterations += 1;
            let mut col = vec![0.0; k + 2];
            for (j, v) in basis.iter().enumerate() {
                let hj = dot(&w, v);
                col[j] = hj;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= hj * vi);
            }
            let norm = dot(&w, &w).sqrt();
            col[k + 1] = norm;
            for (j, &(c, s)) in rot.iter().enumerate() {
                let (a, b) = (col[j], col[j + 1]);
                col[j] = c * a + s * b;
                col[j + 1] = -s * a + c * b;
            }
            let (a, b) = (col[k], col[k + 1]);
            let d = a.hypot(b);
            let (c, s) = if d == 0.0 { (1.0, 0.0) } else { (a / d, b / d) };
            col[k] = d;
            col[k + 1] = 0.0;
            g[k + 1] = -s * g[k];
            g[k] *= c;
            rot.push((c, s));
            h.push(col);
            k += 1;
            if g[k].abs() <= target || norm == 0.0 {
                break;
            }
            basis.push(w.into_iter().map(|v| v / norm).collect());
        }
        // Back substitution on the rotated Hessenberg system.
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[j][i] * y[j]).sum();
            if h[i][i] == 0.0 {
                return Err(Error::Singular("gmres breakdown".into()));
            }
            y[i] = (g[i] - s) / h[i][i];
        }
        for (yi, v) in y.iter().zip(&basis) {
            x.iter_mut().zip(v).for_each(|(xi, vi)| *xi += yi * vi);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let m = Dense::from_fn(40, |i, j| {
            if i == j {
                4.0
            } else {
                ((i * 7 + j * 3) % 5) as f64 / 10.0 - 0.2
            }
        });
        let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let out = gmres(|v| Ok(m.matvec(v)), &b, vec![0.0; 40], 8, 500, 1e-12).unwrap();
        let x = LuSolver::new(&m).unwrap().solve(&b).unwrap();
        assert!(out.residual <= 1e-12);
        for (a, c) in out.x.iter().zip(&x) {
            assert!((a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn forward_substitution_matches_lu() {
        let m = Dense::from_fn(5, |i, j| if j <= i { 1.0 + (i + 2 * j) as f64 } else { 0.0 });
        let b = [1.0, -2.0, 0.5, 3.0, 4.0];
        let x1 = forward_substitution(&m, &b).unwrap();
        let x2 = LuSolver::new(&m).unwrap().solve(&b).unwrap();
        for (a, c) in x1.iter().zip(&x2) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let m = Dense::zeros(3);
        assert!(matches!(LuSolver::new(&m), Err(Error::Singular(_))));
    }

    #[test]
    fn transpose_and_matvec() {
        let m = Dense::from_fn(3, |i, j| (3 * i + j) as f64);
        assert_eq!(m.transpose().get(0, 2), 6.0);
        assert_eq!(m.matvec(&[1.0, 0.0, 1.0]), vec![2.0, 8.0, 14.0]);
    }
}
