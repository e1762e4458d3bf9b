//! Dense singular value decomposition.
//!
//! Householder QR reduces a tall matrix to its triangular factor, which is
//! then diagonalised by one-sided Jacobi rotations. Jacobi stays accurate on
//! matrices with exactly zero singular values, such as centred data.

use nalgebra::{DMatrix, DVector};

const MAX_SWEEPS: usize = 80;

/// `A = U diag(s) V^T` with `s` descending, `U` of shape `m x r`, `V` of
/// shape `n x r`, `r = min(m, n)`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        if m < n {
            let t = Self::new(&a.transpose());
            return Self {
                u: t.v,
                singular_values: t.singular_values,
                v: t.u,
            };
        }
        if n == 0 {
            return Self {
                u: DMatrix::zeros(m, 0),
                singular_values: DVector::zeros(0),
                v: DMatrix::zeros(0, 0),
            };
        }
        let qr = a.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        let (ur, s, v) = jacobi(r);
        Self {
            u: q * ur,
            singular_values: s,
            v,
        }
    }

    pub fn max(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.singular_values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Minimum-norm least-squares solution, ignoring singular values at or
    /// below `rcond * max`.
    pub fn solve(&self, b: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
        let tol = rcond * self.max();
        let mut utb = self.u.transpose() * b;
        for (i, &s) in self.singular_values.iter().enumerate() {
            let f = if s > tol { 1.0 / s } else { 0.0 };
            utb.row_mut(i).scale_mut(f);
        }
        &self.v * utb
    }

    /// Moore-Penrose pseudoinverse with the same cut-off as [`ThinSvd::solve`].
    pub fn pseudo_inverse(&self, rcond: f64) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.u.nrows(), self.u.nrows()), rcond)
    }
}

/// One-sided Jacobi on a square matrix: returns `(U, s, V)`.
fn jacobi(mut b: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let n = b.ncols();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = b.column(p).norm_squared();
                let beta = b.column(q).norm_squared();
                let gamma = b.column(p).dot(&b.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut b, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| b.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let smax = norms[order[0]];
    let mut u = DMatrix::zeros(n, n);
    let mut s = DVector::zeros(n);
    let mut vs = DMatrix::zeros(n, n);
    let mut filled = 0;
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        vs.set_column(k, &v.column(j));
        if norms[j] > smax * f64::EPSILON * n as f64 && norms[j] > 0.0 {
            u.set_column(k, &(b.column(j) / norms[j]));
            filled = k + 1;
        }
    }
    complete_basis(&mut u, filled);
    (u, s, vs)
}

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

/// Fills columns `filled..` with an orthonormal completion of the first
/// `filled` columns.
fn complete_basis(u: &mut DMatrix<f64>, filled: usize) {
    let n = u.nrows();
    let mut k = filled;
    let mut e = 0;
    while k < u.ncols() && e < n {
        let mut x = DVector::zeros(n);
        x[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for j in 0..k {
                let d = u.column(j).dot(&x);
                x.axpy(-d, &u.column(j), 1.0);
            }
        }
        let norm = x.norm();
        if norm > 1e-8 {
            u.set_column(k, &(x / norm));
            k += 1;
        }
    }
}
