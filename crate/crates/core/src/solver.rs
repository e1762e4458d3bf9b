//! Symmetric positive definite sparse solves.
//!
//! The primary path is an envelope (skyline) Cholesky factorisation after a
//! reverse Cuthill-McKee reordering. Systems above [`CHOLESKY_LIMIT`]
//! unknowns use Jacobi-preconditioned conjugate gradients instead.

use std::collections::VecDeque;

use crate::error::{Error, Result};

pub const CHOLESKY_LIMIT: usize = 100_000;
pub const CG_TOLERANCE: f64 = 1e-10;

/// Symmetric matrix in full CSR form (both triangles stored).
#[derive(Debug, Clone)]
pub struct SymmetricMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymmetricMatrix {
    /// Assembles from upper or lower triplets `(i, j, v)`; each off-diagonal
    /// triplet is mirrored. Duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut full: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * triplets.len());
        for &(i, j, v) in triplets {
            full.push((i, j, v));
            if i != j {
                full.push((j, i, v));
            }
        }
        full.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(full.len());
        let mut values: Vec<f64> = Vec::with_capacity(full.len());
        let mut last = None;
        for (i, j, v) in full {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let s = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[s.clone()], &self.values[s])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).find(|(&j, _)| j == i).map_or(0.0, |(_, &x)| x)
            })
            .collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }
}

/// Reverse Cuthill-McKee ordering: `perm[new] = old`.
pub fn reverse_cuthill_mckee(m: &SymmetricMatrix) -> Vec<usize> {
    let n = m.n;
    let degree: Vec<usize> = (0..n).map(|i| m.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs = |start: usize, visited: &mut Vec<bool>, out: &mut Vec<usize>| {
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            out.push(v);
            let mut nbrs: Vec<usize> = m.row(v).0.iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_by_key(|&u| (degree[u], u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    };
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start: last vertex of a BFS from the seed
        let mut probe_visited = visited.clone();
        let mut probe = Vec::new();
        bfs(seed, &mut probe_visited, &mut probe);
        let last_level_start = *probe.last().unwrap();
        bfs(last_level_start, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// Row-oriented envelope Cholesky factor `L` of `P A P^T`.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(m: &SymmetricMatrix) -> Result<Self> {
        let n = m.n;
        let perm = reverse_cuthill_mckee(m);
        let mut inv_perm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for new_i in 0..n {
            let (cols, _) = m.row(perm[new_i]);
            for &c in cols {
                let new_j = inv_perm[c];
                if new_j < first[new_i] {
                    first[new_i] = new_j;
                }
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for new_i in 0..n {
            let (cols, vals) = m.row(perm[new_i]);
            for (&c, &v) in cols.iter().zip(vals) {
                let new_j = inv_perm[c];
                if new_j <= new_i {
                    data[start[new_i] + new_j - first[new_i]] += v;
                }
            }
        }
        let max_diag = (0..n)
            .map(|i| data[start[i] + i - first[i]].abs())
            .fold(0.0, f64::max);
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = data[start[i] + j - fi];
                let (ri, rj) = (start[i] - fi, start[j] - fj);
                for k in k0..j {
                    s -= data[ri + k] * data[rj + k];
                }
                data[ri + j] = s / data[rj + j];
            }
            let ri = start[i] - fi;
            let mut d = data[ri + i];
            for k in fi..i {
                d -= data[ri + k] * data[ri + k];
            }
            if !(d > 1e-14 * max_diag.max(f64::MIN_POSITIVE)) {
                return Err(Error::SingularSystem(format!(
                    "matrix is not positive definite (pivot {d:e} at row {})",
                    perm[i]
                )));
            }
            data[ri + i] = d.sqrt();
        }
        Ok(Self {
            perm,
            inv_perm,
            first,
            start,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let ri = self.start[i] - fi;
            let mut s = y[i];
            for k in fi..i {
                s -= self.data[ri + k] * y[k];
            }
            y[i] = s / self.data[ri + i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let ri = self.start[i] - fi;
            y[i] /= self.data[ri + i];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.data[ri + k] * yi;
            }
        }
        (0..n).map(|old| y[self.inv_perm[old]]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned conjugate gradients from a zero start. Stops at
/// `||r|| <= tol * ||b||` or after `max_iter` iterations.
pub fn conjugate_gradient(m: &SymmetricMatrix, b: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, CgReport) {
    let n = m.n;
    let inv_diag: Vec<f64> = m
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (
            x,
            CgReport {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        );
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < max_iter {
        let ap = m.mul_vec(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= tol {
            break;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (
        x,
        CgReport {
            iterations,
            relative_residual: rel,
            converged: rel <= tol,
        },
    )
}

/// A reusable solver for one system matrix and many right-hand sides.
#[derive(Debug, Clone)]
pub enum SpdSolver {
    Cholesky(EnvelopeCholesky),
    ConjugateGradient(SymmetricMatrix),
}

impl SpdSolver {
    pub fn new(m: SymmetricMatrix) -> Result<Self> {
        if m.n() <= CHOLESKY_LIMIT {
            Ok(Self::Cholesky(EnvelopeCholesky::factor(&m)?))
        } else {
            Ok(Self::ConjugateGradient(m))
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Cholesky(f) => Ok(f.solve(b)),
            Self::ConjugateGradient(m) => {
                let (x, report) = conjugate_gradient(m, b, CG_TOLERANCE, 10 * m.n());
                if !report.converged {
                    log::warn!(
                        "conjugate gradient stopped after {} iterations at relative residual {:e}",
                        report.iterations,
                        report.relative_residual
                    );
                }
                Ok(x)
            }
        }
    }
}
