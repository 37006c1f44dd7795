//! Compressed-row storage and the two linear solvers used by the assembler.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Empty matrix with the given sorted, deduplicated column pattern per row.
    pub fn with_pattern(pattern: Vec<Vec<usize>>) -> CsrMatrix {
        let n = pattern.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for row in pattern {
            col_idx.extend(row);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].binary_search(&j).ok().map(|k| r.start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Add `v` to entry (i, j), which must be in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.position(i, j).expect("entry outside sparsity pattern");
        self.values[k] += v;
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    /// Restriction to the rows and columns with `map[i] = Some(new index)`.
    pub fn submatrix(&self, map: &[Option<usize>], m: usize) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(m + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.n {
            if map[i].is_none() {
                continue;
            }
            for (j, v) in self.row(i) {
                if let Some(jj) = map[j] {
                    col_idx.push(jj);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n: m, row_ptr, col_idx, values }
    }

    /// Largest |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n).flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j))).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Direct factorization below `DIRECT_LIMIT` unknowns, PCG above.
    Auto,
    Pcg,
    Direct,
}

/// Systems with fewer unknowns than this use the direct solver under `Auto`.
pub const DIRECT_LIMIT: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub kind: SolverKind,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { rel_tol: 1e-10, max_iter: 20_000, kind: SolverKind::Auto }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::Parameter(format!("rel_tol must lie in (0, 1), got {}", self.rel_tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// ||b - A x|| / ||b|| of the reduced system at the returned solution.
    pub relative_residual: f64,
    pub direct: bool,
}

pub fn solve_spd(a: &CsrMatrix, b: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveReport)> {
    opts.validate()?;
    let use_direct = match opts.kind {
        SolverKind::Direct => true,
        SolverKind::Pcg => false,
        SolverKind::Auto => a.n() < DIRECT_LIMIT,
    };
    let (x, iterations) =
        if use_direct { (banded_cholesky(a, b)?, 0) } else { pcg(a, b, opts)? };
    let report = SolveReport {
        iterations,
        relative_residual: relative_residual(a, b, &x),
        direct: use_direct,
    };
    Ok((x, report))
}

pub fn relative_residual(a: &CsrMatrix, b: &[f64], x: &[f64]) -> f64 {
    let mut ax = vec![0.0; a.n()];
    a.matvec(x, &mut ax);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum::<f64>().sqrt();
    let nb = dot(b, b).sqrt();
    if nb == 0.0 {
        r
    } else {
        r / nb
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients with a Jacobi preconditioner, started from zero.
pub fn pcg(a: &CsrMatrix, b: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, usize)> {
    let n = a.n();
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::SingularSystem(format!("non-positive diagonal at unknown {i}")));
    }
    let mut x = vec![0.0; n];
    let nb = dot(b, b).sqrt();
    if nb == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=opts.max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SingularSystem("matrix is not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rn = dot(&r, &r).sqrt();
        if rn <= opts.rel_tol * nb {
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iter, residual: dot(&r, &r).sqrt() / nb })
}

/// Cholesky factorization in band storage.
pub fn banded_cholesky(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n();
    let w = a.bandwidth();
    // l[i][k] holds L(i, i - w + k) for k in 0..=w.
    let stride = w + 1;
    let mut l = vec![0.0; n * stride];
    for i in 0..n {
        for (j, v) in a.row(i) {
            if j <= i {
                l[i * stride + (j + w - i)] = v;
            }
        }
    }
    for i in 0..n {
        let lo = i.saturating_sub(w);
        for j in lo..=i {
            let jlo = j.saturating_sub(w).max(lo);
            let mut s = l[i * stride + (j + w - i)];
            for k in jlo..j {
                s -= l[i * stride + (k + w - i)] * l[j * stride + (k + w - j)];
            }
            if j == i {
                if !(s > 0.0) {
                    return Err(Error::SingularSystem(format!(
                        "non-positive pivot {s:e} at unknown {i}"
                    )));
                }
                l[i * stride + w] = s.sqrt();
            } else {
                l[i * stride + (j + w - i)] = s / l[j * stride + w];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        let lo = i.saturating_sub(w);
        let mut s = y[i];
        for k in lo..i {
            s -= l[i * stride + (k + w - i)] * y[k];
        }
        y[i] = s / l[i * stride + w];
    }
    for i in (0..n).rev() {
        let hi = (i + w).min(n - 1);
        let mut s = y[i];
        for k in i + 1..=hi {
            s -= l[k * stride + (i + w - k)] * y[k];
        }
        y[i] = s / l[i * stride + w];
    }
    Ok(y)
}
