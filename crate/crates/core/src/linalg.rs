//! Sparse and dense linear algebra kernels: CSR storage, preconditioned CG,
//! dense symmetric eigensolve (cyclic Jacobi), one-sided Jacobi SVD, LU.
//!
//! Sizes are small (sparse systems up to a few 10^4 dofs, dense up to a few
//! hundred), so the priority is correctness and zero external dependencies.

use alloc::vec;
use alloc::vec::Vec;
// Needed for float math without std; spuriously "unused" when a test
// build links std into the graph.
#[allow(unused_imports)]
use num_traits::Float;

/// Sparse matrix in CSR form. Entries within a row are sorted by column.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &mut Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last = None;
        for &(i, j, v) in triplets.iter() {
            debug_assert!(i < n_rows && j < n_cols);
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows];
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] == i {
                    d[i] = self.values[k];
                }
            }
        }
        d
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for i in 0..x.len() {
        y[i] += alpha * x[i];
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgOutcome {
    pub converged: bool,
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Conjugate gradient with diagonal (Jacobi) preconditioning for SPD systems.
/// `x` holds the initial guess on entry and the solution on exit. Convergence
/// is declared when ||r|| <= tol * ||b|| (or ||r|| <= tol for b = 0).
pub fn cg_solve(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> CgOutcome {
    let n = b.len();
    let norm_b = norm2(b);
    let target = if norm_b > 0.0 { tol * norm_b } else { tol };
    let mut diag = a.diagonal();
    for d in diag.iter_mut() {
        if *d <= 0.0 {
            *d = 1.0;
        }
    }

    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = (0..n).map(|i| r[i] / diag[i]).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut res = norm2(&r);
    if res <= target {
        return CgOutcome { converged: true, iterations: 0, rel_residual: rel(res, norm_b) };
    }
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            // Numerically lost positive definiteness; bail with what we have.
            return CgOutcome { converged: false, iterations: it, rel_residual: rel(res, norm_b) };
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        res = norm2(&r);
        if res <= target {
            return CgOutcome { converged: true, iterations: it, rel_residual: rel(res, norm_b) };
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
    CgOutcome { converged: false, iterations: max_iter, rel_residual: rel(res, norm_b) }
}

fn rel(res: f64, norm_b: f64) -> f64 {
    if norm_b > 0.0 {
        res / norm_b
    } else {
        res
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = 1.0;
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            y[i] = dot(&self.data[i * self.cols..(i + 1) * self.cols], x);
        }
        y
    }

    pub fn matmul(&self, o: &DenseMatrix) -> DenseMatrix {
        debug_assert_eq!(self.cols, o.rows);
        let mut r = DenseMatrix::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.at(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..o.cols {
                    *r.at_mut(i, j) += aik * o.at(k, j);
                }
            }
        }
        r
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut r = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *r.at_mut(j, i) = self.at(i, j);
            }
        }
        r
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        let sv = self.singular_values();
        sv.into_iter().fold(0.0, f64::max)
    }

    /// All singular values (unordered) by one-sided Jacobi on the columns.
    pub fn singular_values(&self) -> Vec<f64> {
        // Work on A^T if that makes columns the short dimension irrelevant;
        // one-sided Jacobi needs rows >= cols for the usual convergence
        // argument, and singular values of A and A^T agree.
        let a = if self.rows >= self.cols { self.clone() } else { self.transpose() };
        one_sided_jacobi_sv(a)
    }
}

fn one_sided_jacobi_sv(mut a: DenseMatrix) -> Vec<f64> {
    let n = a.cols;
    if n == 0 {
        return Vec::new();
    }
    let eps = 1e-14;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..a.rows {
                    let x = a.at(i, p);
                    let y = a.at(i, q);
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if apq.abs() <= eps * (app * aqq).sqrt() + 1e-300 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..a.rows {
                    let x = a.at(i, p);
                    let y = a.at(i, q);
                    *a.at_mut(i, p) = c * x - s * y;
                    *a.at_mut(i, q) = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (0..n)
        .map(|j| {
            let mut s = 0.0;
            for i in 0..a.rows {
                s += a.at(i, j) * a.at(i, j);
            }
            s.sqrt()
        })
        .collect()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order and eigenvectors as matching
/// columns of an orthogonal matrix.
pub fn jacobi_eigen(a: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    debug_assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m.at(i, j) * m.at(i, j);
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + frob(&m)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    *m.at_mut(k, p) = c * mkp - s * mkq;
                    *m.at_mut(k, q) = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    *m.at_mut(p, k) = c * mpk - s * mqk;
                    *m.at_mut(q, k) = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    *v.at_mut(k, p) = c * vkp - s * vkq;
                    *v.at_mut(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.at(i, i).partial_cmp(&m.at(j, j)).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m.at(i, i)).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            *vectors.at_mut(i, new_j) = v.at(i, old_j);
        }
    }
    (eigenvalues, vectors)
}

fn frob(m: &DenseMatrix) -> f64 {
    norm2(&m.data)
}

/// Solve a dense square system by LU with partial pivoting.
/// Returns None if a pivot underflows (singular matrix).
pub fn lu_solve(a: &DenseMatrix, b: &[f64]) -> Option<Vec<f64>> {
    debug_assert_eq!(a.rows, a.cols);
    debug_assert_eq!(a.rows, b.len());
    let n = a.rows;
    let mut lu = a.clone();
    let mut x: Vec<f64> = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut piv = k;
        let mut best = lu.at(k, k).abs();
        for i in (k + 1)..n {
            let v = lu.at(i, k).abs();
            if v > best {
                best = v;
                piv = i;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if piv != k {
            for j in 0..n {
                let t = lu.at(k, j);
                *lu.at_mut(k, j) = lu.at(piv, j);
                *lu.at_mut(piv, j) = t;
            }
            perm.swap(k, piv);
            x.swap(k, piv);
        }
        for i in (k + 1)..n {
            let f = lu.at(i, k) / lu.at(k, k);
            *lu.at_mut(i, k) = f;
            for j in (k + 1)..n {
                *lu.at_mut(i, j) -= f * lu.at(k, j);
            }
        }
    }
    // Forward substitution (L has unit diagonal).
    for i in 1..n {
        let mut s = x[i];
        for j in 0..i {
            s -= lu.at(i, j) * x[j];
        }
        x[i] = s;
    }
    // Back substitution.
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= lu.at(i, j) * x[j];
        }
        x[i] = s / lu.at(i, i);
    }
    Some(x)
}

/// Cholesky factor (lower triangular) of an SPD matrix; None if not SPD.
pub fn cholesky(a: &DenseMatrix) -> Option<DenseMatrix> {
    debug_assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                *l.at_mut(i, j) = s.sqrt();
            } else {
                *l.at_mut(i, j) = s / l.at(j, j);
            }
        }
    }
    Some(l)
}

/// Solve L y = b for lower-triangular L.
pub fn forward_subst(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for j in 0..i {
            s -= l.at(i, j) * y[j];
        }
        y[i] = s / l.at(i, i);
    }
    y
}

/// Solve L^T x = b for lower-triangular L.
pub fn back_subst_transposed(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= l.at(j, i) * x[j];
        }
        x[i] = s / l.at(i, i);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &mut t)
    }

    #[test]
    fn csr_sums_duplicates_and_multiplies() {
        let mut t = vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0), (0, 1, -1.0)];
        let m = CsrMatrix::from_triplets(2, 2, &mut t);
        let mut y = vec![0.0; 2];
        m.matvec(&[1.0, 1.0], &mut y);
        assert_eq!(y, vec![2.0, 4.0]);
    }

    #[test]
    fn cg_solves_tridiagonal() {
        let n = 200;
        let a = laplace_1d(n);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x_true, &mut b);
        let mut x = vec![0.0; n];
        let out = cg_solve(&a, &b, &mut x, 1e-12, 10 * n);
        assert!(out.converged);
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn jacobi_eigen_recovers_spectrum() {
        // Symmetric matrix with known spectrum via construction Q diag Q^T.
        let n = 6;
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                *a.at_mut(i, j) = 1.0 / (1.0 + (i as f64 - j as f64).abs());
            }
        }
        let (vals, vecs) = jacobi_eigen(&a);
        // A v = lambda v for each pair.
        for k in 0..n {
            let v: Vec<f64> = (0..n).map(|i| vecs.at(i, k)).collect();
            let av = a.matvec(&v);
            for i in 0..n {
                assert!((av[i] - vals[k] * v[i]).abs() < 1e-10);
            }
        }
        for k in 1..n {
            assert!(vals[k] >= vals[k - 1]);
        }
    }

    #[test]
    fn singular_values_of_known_matrix() {
        let mut a = DenseMatrix::zeros(2, 2);
        *a.at_mut(0, 0) = 3.0;
        *a.at_mut(1, 1) = -4.0;
        let mut sv = a.singular_values();
        sv.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((sv[0] - 3.0).abs() < 1e-12);
        assert!((sv[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn lu_solve_roundtrip() {
        let n = 8;
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                *a.at_mut(i, j) = ((i * 7 + j * 13) % 11) as f64 - 5.0;
            }
            *a.at_mut(i, i) += 12.0;
        }
        let x_true: Vec<f64> = (0..n).map(|i| i as f64 - 3.5).collect();
        let b = a.matvec(&x_true);
        let x = lu_solve(&a, &b).unwrap();
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_of_identity_like() {
        let mut a = DenseMatrix::identity(4);
        *a.at_mut(0, 1) = 0.3;
        *a.at_mut(1, 0) = 0.3;
        let l = cholesky(&a).unwrap();
        let lt = l.transpose();
        let prod = l.matmul(&lt);
        for i in 0..4 {
            for j in 0..4 {
                assert!((prod.at(i, j) - a.at(i, j)).abs() < 1e-12);
            }
        }
    }
}
