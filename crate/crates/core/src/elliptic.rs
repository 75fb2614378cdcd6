//! P1 finite elements on the polar meshes: assembly, Dirichlet solves,
//! low eigenpairs of the Laplacian, and the spectral tail estimate used by
//! the certificate (operator norm of "solve then strip the resolved modes").

use alloc::vec;
use alloc::vec::Vec;
// Needed for float math without std; spuriously "unused" when a test
// build links std into the graph.
#[allow(unused_imports)]
use num_traits::Float;

use crate::boundary::{BoundaryData, CurveData};
use crate::geometry::{Mesh, Wall};
use crate::linalg::{cg_solve, dot, jacobi_eigen, CsrMatrix, DenseMatrix};
use crate::rng::Rng;
use crate::vec2::Point2;

#[derive(Clone, Debug, PartialEq)]
pub enum EllipticError {
    /// CG failed to reach the target residual.
    SolverStalled { rel_residual: f64 },
    /// Subspace iteration lost rank or failed to converge.
    EigenFailed,
}

impl core::fmt::Display for EllipticError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EllipticError::SolverStalled { rel_residual } => {
                write!(f, "linear solver stalled at relative residual {rel_residual:.3e}")
            }
            EllipticError::EigenFailed => write!(f, "eigen solver failed to converge"),
        }
    }
}

/// Piecewise-linear scalar field given by vertex values.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField { values: vec![0.0; n] }
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(Point2) -> f64) -> Self {
        ScalarField { values: mesh.vertices.iter().map(|&p| f(p)).collect() }
    }

    pub fn eval_in(&self, mesh: &Mesh, t: usize, bary: [f64; 3]) -> f64 {
        let [a, b, c] = mesh.triangles[t];
        bary[0] * self.values[a] + bary[1] * self.values[b] + bary[2] * self.values[c]
    }

    pub fn eval(&self, mesh: &Mesh, p: Point2, hint: Option<usize>) -> Option<f64> {
        mesh.locate(p, hint).map(|(t, b)| self.eval_in(mesh, t, b))
    }

    /// Gradient on one triangle (constant there).
    pub fn gradient_in(&self, mesh: &Mesh, t: usize) -> Point2 {
        let [ia, ib, ic] = mesh.triangles[t];
        let [pa, pb, pc] = mesh.triangle_points(t);
        let inv2a = 1.0 / (pb - pa).cross(pc - pa);
        ((pc - pb).perp() * self.values[ia]
            + (pa - pc).perp() * self.values[ib]
            + (pb - pa).perp() * self.values[ic])
            * inv2a
    }
}

/// Vector field that is constant on each triangle (gradients of P1 fields).
#[derive(Clone, Debug)]
pub struct ElementwiseVectorField {
    pub per_triangle: Vec<Point2>,
}

/// Rotated gradient (-d/dy, d/dx) of a P1 field, triangle by triangle.
pub fn perp_gradient(mesh: &Mesh, psi: &ScalarField) -> ElementwiseVectorField {
    ElementwiseVectorField {
        per_triangle: (0..mesh.triangles.len())
            .map(|t| psi.gradient_in(mesh, t).perp())
            .collect(),
    }
}

/// Gradients of the three barycentric basis functions on triangle t.
pub fn basis_gradients(mesh: &Mesh, t: usize) -> [Point2; 3] {
    let [pa, pb, pc] = mesh.triangle_points(t);
    let inv2a = 1.0 / (pb - pa).cross(pc - pa);
    [
        (pc - pb).perp() * inv2a,
        (pa - pc).perp() * inv2a,
        (pb - pa).perp() * inv2a,
    ]
}

/// Consistent P1 mass matrix over all vertices.
pub fn mass_matrix(mesh: &Mesh) -> CsrMatrix {
    let n = mesh.n_vertices();
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.triangle_area(t);
        for i in 0..3 {
            for j in 0..3 {
                let w = if i == j { a / 6.0 } else { a / 12.0 };
                trip.push((tri[i], tri[j], w));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &mut trip)
}

/// Stiffness matrix (integral of grad phi_i . grad phi_j) over all vertices.
pub fn stiffness_matrix(mesh: &Mesh) -> CsrMatrix {
    let n = mesh.n_vertices();
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.triangle_area(t);
        let g = basis_gradients(mesh, t);
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], a * g[i].dot(g[j])));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &mut trip)
}

/// Boundary mask: true on vertices of the listed walls.
pub fn wall_mask(mesh: &Mesh, walls: &[Wall]) -> Vec<bool> {
    let mut mask = vec![false; mesh.n_vertices()];
    for (v, w) in mesh.wall_of_vertex.iter().enumerate() {
        if let Some(w) = w {
            if walls.contains(w) {
                mask[v] = true;
            }
        }
    }
    mask
}

/// Full-length vector holding `data` evaluated at the wall's vertices.
pub fn wall_values(mesh: &Mesh, wall: Wall, data: &CurveData) -> Vec<f64> {
    let mut g = vec![0.0; mesh.n_vertices()];
    for v in mesh.wall_vertices(wall) {
        g[v] = data.value(mesh.vertex_theta(v));
    }
    g
}

/// Stream data on both walls as one vertex vector.
pub fn stream_boundary_values(mesh: &Mesh, data: &BoundaryData) -> Vec<f64> {
    let mut g = wall_values(mesh, Wall::Inner, &data.stream_inner);
    let outer = wall_values(mesh, Wall::Outer, &data.stream_outer);
    for v in mesh.wall_vertices(Wall::Outer) {
        g[v] = outer[v];
    }
    g
}

/// Poisson solver with essential conditions on a fixed set of vertices.
/// Assembles once; solves are CG with Jacobi preconditioning on the free
/// block. Sign convention: `solve(f, g)` returns u with Lap u = f, u = g on
/// the masked vertices.
pub struct Poisson {
    pub mask: Vec<bool>,
    free: Vec<usize>,
    constrained: Vec<usize>,
    k_ff: CsrMatrix,
    k_fc: CsrMatrix,
    m_ff: CsrMatrix,
    mass: CsrMatrix,
    n_vertices: usize,
}

impl Poisson {
    pub fn new(mesh: &Mesh, mask: Vec<bool>) -> Self {
        let n = mesh.n_vertices();
        assert_eq!(mask.len(), n);
        let mut free = Vec::new();
        let mut constrained = Vec::new();
        let mut index_free = vec![usize::MAX; n];
        let mut index_con = vec![usize::MAX; n];
        for v in 0..n {
            if mask[v] {
                index_con[v] = constrained.len();
                constrained.push(v);
            } else {
                index_free[v] = free.len();
                free.push(v);
            }
        }
        let k = stiffness_matrix(mesh);
        let mass = mass_matrix(mesh);
        let mut tff = Vec::new();
        let mut tfc = Vec::new();
        for i in 0..n {
            for kk in k.row_ptr[i]..k.row_ptr[i + 1] {
                let j = k.col_idx[kk];
                let v = k.values[kk];
                if !mask[i] && !mask[j] {
                    tff.push((index_free[i], index_free[j], v));
                } else if !mask[i] && mask[j] {
                    tfc.push((index_free[i], index_con[j], v));
                }
            }
        }
        let nf = free.len();
        let nc = constrained.len();
        let k_ff = CsrMatrix::from_triplets(nf, nf, &mut tff);
        let k_fc = CsrMatrix::from_triplets(nf, nc, &mut tfc);
        let mut tmf = Vec::new();
        for i in 0..n {
            for kk in mass.row_ptr[i]..mass.row_ptr[i + 1] {
                let j = mass.col_idx[kk];
                if !mask[i] && !mask[j] {
                    tmf.push((index_free[i], index_free[j], mass.values[kk]));
                }
            }
        }
        let m_ff = CsrMatrix::from_triplets(nf, nf, &mut tmf);
        Poisson { mask, free, constrained, k_ff, k_fc, m_ff, mass, n_vertices: n }
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// L2 inner product of vertex fields.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut mv = vec![0.0; v.len()];
        self.mass.matvec(v, &mut mv);
        dot(u, &mv)
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    fn cg_reduced(&self, b: &[f64], x: &mut [f64]) -> Result<(), EllipticError> {
        let cap = 50 * ((b.len() as f64).sqrt() as usize + 1);
        let out = cg_solve(&self.k_ff, b, x, 1e-10, cap.max(200));
        if out.converged {
            Ok(())
        } else {
            Err(EllipticError::SolverStalled { rel_residual: out.rel_residual })
        }
    }

    /// Solve Lap u = f with u = g on the masked vertices. `f` and `g` are
    /// full-length vertex vectors (g is read only on masked vertices).
    pub fn solve(&self, f: &[f64], g: &[f64]) -> Result<ScalarField, EllipticError> {
        let n = self.n_vertices;
        debug_assert_eq!(f.len(), n);
        debug_assert_eq!(g.len(), n);
        // Weak form: K u = -M f on the free block, minus the lift K_fc g.
        let mut mf = vec![0.0; n];
        self.mass.matvec(f, &mut mf);
        let nf = self.free.len();
        let mut b = vec![0.0; nf];
        for (fi, &v) in self.free.iter().enumerate() {
            b[fi] = -mf[v];
        }
        let gc: Vec<f64> = self.constrained.iter().map(|&v| g[v]).collect();
        let mut lift = vec![0.0; nf];
        self.k_fc.matvec(&gc, &mut lift);
        for fi in 0..nf {
            b[fi] -= lift[fi];
        }
        let mut x = vec![0.0; nf];
        self.cg_reduced(&b, &mut x)?;
        let mut u = vec![0.0; n];
        for (fi, &v) in self.free.iter().enumerate() {
            u[v] = x[fi];
        }
        for &v in &self.constrained {
            u[v] = g[v];
        }
        Ok(ScalarField { values: u })
    }

    /// Solve Lap u = f with u = 0 on the masked vertices.
    pub fn solve_zero_bc(&self, f: &[f64]) -> Result<ScalarField, EllipticError> {
        let zeros = vec![0.0; self.n_vertices];
        self.solve(f, &zeros)
    }

    /// Harmonic extension of boundary values.
    pub fn harmonic_extension(&self, g: &[f64]) -> Result<ScalarField, EllipticError> {
        let zeros = vec![0.0; self.n_vertices];
        self.solve(&zeros, g)
    }

    fn scatter_free(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_vertices];
        for (fi, &v) in self.free.iter().enumerate() {
            full[v] = reduced[fi];
        }
        full
    }
}

fn m_inner(m: &CsrMatrix, u: &[f64], v: &[f64], scratch: &mut Vec<f64>) -> f64 {
    scratch.resize(v.len(), 0.0);
    m.matvec(v, scratch);
    dot(u, scratch)
}

/// Modified Gram-Schmidt in the M inner product (two passes for stability).
/// Returns false if a vector degenerates (rank loss).
pub fn m_orthonormalize(m: &CsrMatrix, vecs: &mut [Vec<f64>]) -> bool {
    let mut scratch = Vec::new();
    for i in 0..vecs.len() {
        for _pass in 0..2 {
            for j in 0..i {
                let (head, tail) = vecs.split_at_mut(i);
                let c = m_inner(m, &tail[0], &head[j], &mut scratch);
                for (x, &y) in tail[0].iter_mut().zip(head[j].iter()) {
                    *x -= c * y;
                }
            }
        }
        let n = m_inner(m, &vecs[i], &vecs[i], &mut scratch).max(0.0).sqrt();
        if n < 1e-12 {
            return false;
        }
        for x in vecs[i].iter_mut() {
            *x /= n;
        }
    }
    true
}

/// Lowest eigenpairs of the (negative) Laplacian with the solver's essential
/// conditions: K x = lambda M x on the free block. Inverse subspace
/// iteration with Rayleigh-Ritz extraction; deterministic for a fixed seed.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Full-length vertex vectors, zero on the masked vertices,
    /// M-orthonormal.
    pub modes: Vec<Vec<f64>>,
}

pub fn lowest_eigenpairs(p: &Poisson, count: usize, seed: u64) -> Result<EigenSystem, EllipticError> {
    let nf = p.free.len();
    assert!(count >= 1);
    if count > nf {
        return Err(EllipticError::EigenFailed);
    }
    let block = (count + 8).min(nf);
    let mut rng = Rng::seed_from_u64(seed);
    let mut x: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..nf).map(|_| rng.normal()).collect())
        .collect();
    if !m_orthonormalize(&p.m_ff, &mut x) {
        return Err(EllipticError::EigenFailed);
    }
    let mut y: Vec<Vec<f64>> = x.clone();
    let mut prev = vec![f64::INFINITY; count];
    let mut vals = vec![0.0; block];
    for _sweep in 0..150 {
        for i in 0..block {
            let mut b = vec![0.0; nf];
            p.m_ff.matvec(&x[i], &mut b);
            p.cg_reduced(&b, &mut y[i])?;
        }
        let mut z = y.clone();
        if !m_orthonormalize(&p.m_ff, &mut z) {
            return Err(EllipticError::EigenFailed);
        }
        // Rayleigh-Ritz on the block: H = Z^T K Z, then rotate.
        let mut kz: Vec<Vec<f64>> = Vec::with_capacity(block);
        for zi in &z {
            let mut out = vec![0.0; nf];
            p.k_ff.matvec(zi, &mut out);
            kz.push(out);
        }
        let mut h = DenseMatrix::zeros(block, block);
        for i in 0..block {
            for j in i..block {
                let v = dot(&z[i], &kz[j]);
                *h.at_mut(i, j) = v;
                *h.at_mut(j, i) = v;
            }
        }
        let (ritz, rot) = jacobi_eigen(&h);
        for c in 0..block {
            vals[c] = ritz[c];
            for r in 0..nf {
                let mut acc = 0.0;
                for i in 0..block {
                    acc += z[i][r] * rot.at(i, c);
                }
                y[c][r] = acc;
            }
        }
        core::mem::swap(&mut x, &mut y);
        let mut done = true;
        for k in 0..count {
            if !((vals[k] - prev[k]).abs() <= 1e-10 * vals[k].abs().max(1e-30)) {
                done = false;
            }
            prev[k] = vals[k];
        }
        if done {
            break;
        }
    }
    let mut modes = Vec::with_capacity(count);
    for k in 0..count {
        let mut full = p.scatter_free(&x[k]);
        // Deterministic sign: largest-magnitude entry positive.
        let mut imax = 0;
        for (i, &v) in full.iter().enumerate() {
            if v.abs() > full[imax].abs() {
                imax = i;
            }
        }
        if full[imax] < 0.0 {
            for v in full.iter_mut() {
                *v = -*v;
            }
        }
        modes.push(full);
    }
    Ok(EigenSystem { eigenvalues: vals[..count].to_vec(), modes })
}

/// Power-iteration estimate of the operator norm of
///   f |-> solve_zero_bc( (I - P) f )
/// measured L2 -> L2, where P is the M-orthogonal projection onto
/// `basis` (assumed M-orthonormal, full-length). This is the quantity the
/// certificate calls epsilon0 (after the safety factor). The returned
/// direction is the maximizing input, normalized, orthogonal to the basis;
/// it doubles as a worst-case probe direction elsewhere.
#[derive(Clone, Debug)]
pub struct TailEstimate {
    pub value: f64,
    pub raw_norm: f64,
    pub safety: f64,
    pub iterations: usize,
    pub converged: bool,
    pub direction: Vec<f64>,
}

pub fn estimate_tail_norm(
    solver: &Poisson,
    basis: &[Vec<f64>],
    safety: f64,
    seed: u64,
) -> Result<TailEstimate, EllipticError> {
    let n = solver.n_vertices;
    let mut rng = Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let project_out = |v: &mut Vec<f64>| {
        for b in basis {
            let c = solver.inner(v, b);
            for (x, &y) in v.iter_mut().zip(b.iter()) {
                *x -= c * y;
            }
        }
    };
    project_out(&mut v);
    let nv = solver.norm(&v);
    if nv < 1e-300 {
        return Err(EllipticError::EigenFailed);
    }
    for x in v.iter_mut() {
        *x /= nv;
    }
    let mut lambda = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=300 {
        iterations = it;
        // z = (I-P) G G (I-P) v  with G the zero-BC solve.
        let mut w = v.clone();
        project_out(&mut w);
        let u1 = solver.solve_zero_bc(&w)?;
        let u2 = solver.solve_zero_bc(&u1.values)?;
        let mut z = u2.values;
        project_out(&mut z);
        let new_lambda = solver.inner(&v, &z);
        let zn = solver.norm(&z);
        if zn < 1e-300 {
            lambda = 0.0;
            converged = true;
            break;
        }
        for (x, &y) in v.iter_mut().zip(z.iter()) {
            *x = y / zn;
        }
        if (new_lambda - lambda).abs() <= 1e-11 * new_lambda.abs().max(1e-30) {
            lambda = new_lambda;
            converged = true;
            break;
        }
        lambda = new_lambda;
    }
    let raw = lambda.max(0.0).sqrt();
    Ok(TailEstimate { value: raw * safety, raw_norm: raw, safety, iterations, converged, direction: v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, disc_mesh, DomainSpec};

    #[test]
    fn mass_matrix_integrates_one() {
        let d = DomainSpec::annulus(0.5, 2.0);
        let m = build_mesh(&d, 8, 24);
        let mass = mass_matrix(&m);
        let ones = vec![1.0; m.n_vertices()];
        let mut mv = vec![0.0; m.n_vertices()];
        mass.matvec(&ones, &mut mv);
        let total: f64 = mv.iter().sum();
        assert!((total - m.total_area()).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_linear_field_is_exact() {
        let d = DomainSpec::annulus(0.5, 2.0);
        let m = build_mesh(&d, 5, 16);
        let f = ScalarField::from_fn(&m, |p| 3.0 * p.x - 2.0 * p.y + 1.0);
        for t in 0..m.triangles.len() {
            let g = f.gradient_in(&m, t);
            assert!((g.x - 3.0).abs() < 1e-10 && (g.y + 2.0).abs() < 1e-10);
            let pg = perp_gradient(&m, &f).per_triangle[t];
            assert!((pg.x - 2.0).abs() < 1e-10 && (pg.y - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn poisson_manufactured_solution_on_annulus() {
        // u = (r^2 - 1/4)(4 - r^2) solves Lap u = 17 - 16 r^2, u = 0 on both
        // walls of the annulus 0.5 < r < 2.
        let d = DomainSpec::annulus(0.5, 2.0);
        let mesh = build_mesh(&d, 24, 72);
        let mask = wall_mask(&mesh, &[Wall::Inner, Wall::Outer]);
        let p = Poisson::new(&mesh, mask);
        let f = ScalarField::from_fn(&mesh, |q| 17.0 - 16.0 * q.norm_sq());
        let u = p.solve_zero_bc(&f.values).unwrap();
        let exact = ScalarField::from_fn(&mesh, |q| {
            let r2 = q.norm_sq();
            (r2 - 0.25) * (4.0 - r2)
        });
        let mut err = 0.0f64;
        for v in 0..mesh.n_vertices() {
            err = err.max((u.values[v] - exact.values[v]).abs());
        }
        assert!(err < 0.02, "max vertex error {err}");
    }

    #[test]
    fn harmonic_extension_matches_log_profile() {
        // Harmonic with u=0 at r=0.5 and u=1 at r=2: u = ln(2r)/ln 4.
        let d = DomainSpec::annulus(0.5, 2.0);
        let mesh = build_mesh(&d, 24, 72);
        let mask = wall_mask(&mesh, &[Wall::Inner, Wall::Outer]);
        let p = Poisson::new(&mesh, mask);
        let g = wall_values(&mesh, Wall::Outer, &CurveData::constant(1.0));
        let u = p.harmonic_extension(&g).unwrap();
        let ln4 = 4.0f64.ln();
        let mut err = 0.0f64;
        for v in 0..mesh.n_vertices() {
            let exact = (2.0 * mesh.vertices[v].norm()).ln() / ln4;
            err = err.max((u.values[v] - exact).abs());
        }
        assert!(err < 5e-3, "max vertex error {err}");
    }

    #[test]
    fn disc_eigenvalues_near_bessel_zeros() {
        // Dirichlet disc: lambda_1 = j_{0,1}^2 = 5.7832, lambda_2 = lambda_3
        // = j_{1,1}^2 = 14.682 (double).
        let mesh = disc_mesh(1.0, 14, 44);
        let mask = wall_mask(&mesh, &[Wall::Outer]);
        let p = Poisson::new(&mesh, mask);
        let sys = lowest_eigenpairs(&p, 3, 7).unwrap();
        assert!((sys.eigenvalues[0] - 5.7832).abs() / 5.7832 < 0.02, "{:?}", sys.eigenvalues);
        assert!((sys.eigenvalues[1] - 14.682).abs() / 14.682 < 0.03, "{:?}", sys.eigenvalues);
        assert!((sys.eigenvalues[2] - 14.682).abs() / 14.682 < 0.03, "{:?}", sys.eigenvalues);
        // Modes are M-orthonormal.
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((p.inner(&sys.modes[i], &sys.modes[j]) - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn tail_norm_matches_spectral_gap() {
        // With P projecting onto the first N eigenmodes, the tail operator
        // norm equals 1/lambda_{N+1} of the same discrete operator.
        let mesh = disc_mesh(1.0, 10, 32);
        let mask = wall_mask(&mesh, &[Wall::Outer]);
        let p = Poisson::new(&mesh, mask);
        let n_keep = 5;
        let sys = lowest_eigenpairs(&p, n_keep + 1, 11).unwrap();
        let basis: Vec<Vec<f64>> = sys.modes[..n_keep].to_vec();
        let est = estimate_tail_norm(&p, &basis, 1.0, 23).unwrap();
        assert!(est.converged);
        let want = 1.0 / sys.eigenvalues[n_keep];
        assert!(
            (est.raw_norm - want).abs() / want < 0.02,
            "raw {} vs 1/lambda_{} {}",
            est.raw_norm,
            n_keep + 1,
            want
        );
    }
}
