//! The fixed-point machinery: composing the elliptic solve with the
//! trace-back operator, projecting onto a finite modal space, freezing the
//! Jacobian there, and iterating the resulting quasi-Newton map.
//!
//! Notation used throughout: Lambda(omega) = trace-back(field(omega)) where
//! field(omega) = perp-grad of the stream solve of omega minus mu x; P is
//! the L2-orthogonal projection onto the modal space; A is the Jacobian of
//! P Lambda restricted to the space, frozen at the base state. The update
//! map solves (I - A P)(next - omega) = Lambda(omega) - omega blockwise:
//! the modal part through the small dense system (I - A), the complement
//! directly.

use alloc::vec;
use alloc::vec::Vec;
// Needed for float math without std; spuriously "unused" when a test
// build links std into the graph.
#[allow(unused_imports)]
use num_traits::Float;

use crate::boundary::BoundaryData;
use crate::elliptic::{
    lowest_eigenpairs, perp_gradient, stream_boundary_values, wall_values, ElementwiseVectorField,
    EllipticError, Poisson, ScalarField,
};
use crate::geometry::{DomainSpec, Mesh, Wall, TWO_PI};
use crate::linalg::{lu_solve, DenseMatrix};
use crate::transport::{
    decompose_path, tangent_exit, transport_field, FlowField, TangentDirection, TraceOptions,
    TransportError, TransportSolution,
};

#[derive(Clone, Debug, PartialEq)]
pub enum GalerkinError {
    Elliptic(EllipticError),
    Transport(TransportError),
    /// The advecting field stopped crossing a wall strictly.
    TransversalityLost { margin_data: f64, margin_free: f64 },
    /// I - A is numerically singular; the frozen-Jacobian update is
    /// meaningless.
    SingularJacobian { sigma_min: f64 },
    /// An iterate left the certified ball around the start state.
    NeighborhoodExit { dist: f64, radius: f64 },
}

impl From<EllipticError> for GalerkinError {
    fn from(e: EllipticError) -> Self {
        GalerkinError::Elliptic(e)
    }
}

impl From<TransportError> for GalerkinError {
    fn from(e: TransportError) -> Self {
        GalerkinError::Transport(e)
    }
}

impl core::fmt::Display for GalerkinError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GalerkinError::Elliptic(e) => write!(f, "{e}"),
            GalerkinError::Transport(e) => write!(f, "{e}"),
            GalerkinError::TransversalityLost { margin_data, margin_free } => write!(
                f,
                "wall transversality lost (data-wall margin {margin_data:.3e}, free-wall margin {margin_free:.3e})"
            ),
            GalerkinError::SingularJacobian { sigma_min } => {
                write!(f, "I - A singular to working precision (sigma_min = {sigma_min:.3e})")
            }
            GalerkinError::NeighborhoodExit { dist, radius } => {
                write!(f, "iterate left the certified ball ({dist:.3e} > {radius:.3e})")
            }
        }
    }
}

/// Everything fixed for one problem instance.
pub struct Problem<'a> {
    pub mesh: &'a Mesh,
    pub domain: &'a DomainSpec,
    pub mu: f64,
    pub data: &'a BoundaryData,
    /// Full-Dirichlet solver (both walls) for the stream function.
    pub solver: &'a Poisson,
    pub trace_opts: TraceOptions,
    stream_bc: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(
        mesh: &'a Mesh,
        domain: &'a DomainSpec,
        mu: f64,
        data: &'a BoundaryData,
        solver: &'a Poisson,
        trace_opts: TraceOptions,
    ) -> Self {
        let stream_bc = stream_boundary_values(mesh, data);
        Problem { mesh, domain, mu, data, solver, trace_opts, stream_bc }
    }

    pub fn vorticity_data(&self) -> &crate::boundary::CurveData {
        &self.data.vorticity
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        self.solver.norm(v)
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.solver.inner(u, v)
    }
}

/// One application of the composed operator, with everything worth keeping.
pub struct LambdaOutput {
    pub omega: ScalarField,
    pub psi: ScalarField,
    pub fem: ElementwiseVectorField,
    pub transport: TransportSolution,
    pub margin_data: f64,
    pub margin_free: f64,
}

fn quick_margins(p: &Problem, fem: &ElementwiseVectorField) -> (f64, f64) {
    let field = FlowField::with_fem(p.mesh, fem, p.mu);
    let data_wall = p.domain.data_wall();
    let mut hint = None;
    let mut m_data = f64::INFINITY;
    let mut m_free = f64::INFINITY;
    for s in 0..512 {
        let th = TWO_PI * s as f64 / 512.0;
        for wall in [Wall::Inner, Wall::Outer] {
            let pt = p.domain.wall(wall).point(th);
            let nq = p.domain.outward_normal(wall, th).dot(field.eval(pt, &mut hint));
            if wall == data_wall {
                m_data = m_data.min(-nq);
            } else {
                m_free = m_free.min(nq);
            }
        }
    }
    (m_data, m_free)
}

/// Lambda(omega): stream solve, field, wall check, trace-back.
pub fn apply_lambda(p: &Problem, omega: &[f64]) -> Result<LambdaOutput, GalerkinError> {
    let psi = p.solver.solve(omega, &p.stream_bc)?;
    let fem = perp_gradient(p.mesh, &psi);
    let (margin_data, margin_free) = quick_margins(p, &fem);
    if margin_data <= 0.0 || margin_free <= 0.0 {
        return Err(GalerkinError::TransversalityLost { margin_data, margin_free });
    }
    let field = FlowField::with_fem(p.mesh, &fem, p.mu);
    let transport = transport_field(p.mesh, &field, p.domain, &p.data.vorticity, &p.trace_opts)?;
    Ok(LambdaOutput {
        omega: transport.omega.clone(),
        psi,
        fem,
        transport,
        margin_data,
        margin_free,
    })
}

/// Modal space: an M-orthonormal set of full-length vertex vectors.
pub struct GalerkinSpace {
    pub basis: Vec<Vec<f64>>,
}

impl GalerkinSpace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Coordinates of the projection: <e_k, f>.
    pub fn coords(&self, p: &Poisson, f: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|e| p.inner(e, f)).collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let n = self.basis.first().map(|b| b.len()).unwrap_or(0);
        let mut out = vec![0.0; n];
        for (c, e) in coords.iter().zip(self.basis.iter()) {
            for (o, &v) in out.iter_mut().zip(e.iter()) {
                *o += c * v;
            }
        }
        out
    }

    /// P f as a full vector.
    pub fn project(&self, p: &Poisson, f: &[f64]) -> Vec<f64> {
        let c = self.coords(p, f);
        self.reconstruct(&c)
    }

    /// f - P f.
    pub fn complement(&self, p: &Poisson, f: &[f64]) -> Vec<f64> {
        let pf = self.project(p, f);
        f.iter().zip(pf.iter()).map(|(&a, &b)| a - b).collect()
    }
}

/// Modal space from the lowest Laplacian eigenpairs under the given
/// essential walls, optionally augmented by the harmonic lift of the
/// vorticity data (which captures the leading response to the data and is
/// re-orthonormalized against the modes). Returns the space and the
/// eigenvalues actually used.
pub fn build_space(
    p: &Problem,
    n_modes: usize,
    essential_walls: &[Wall],
    include_data_mode: bool,
    seed: u64,
) -> Result<(GalerkinSpace, Vec<f64>), GalerkinError> {
    let mask = crate::elliptic::wall_mask(p.mesh, essential_walls);
    let eig_solver = Poisson::new(p.mesh, mask);
    let sys = lowest_eigenpairs(&eig_solver, n_modes, seed)?;
    let mut basis = sys.modes;
    if include_data_mode && !p.data.vorticity.is_zero() {
        let g = wall_values(p.mesh, p.domain.data_wall(), &p.data.vorticity);
        let lift = p.solver.harmonic_extension(&g)?;
        let mut extra = lift.values;
        // Orthonormalize against the modes; drop it if it lies in their span.
        for _pass in 0..2 {
            for e in &basis {
                let c = p.solver.inner(&extra, e);
                for (x, &y) in extra.iter_mut().zip(e.iter()) {
                    *x -= c * y;
                }
            }
        }
        let n = p.solver.norm(&extra);
        if n > 1e-10 {
            for x in extra.iter_mut() {
                *x /= n;
            }
            basis.push(extra);
        }
    }
    Ok((GalerkinSpace { basis }, sys.eigenvalues))
}

/// Jacobian of P Lambda restricted to the space, frozen at the state that
/// produced `frozen`. Entry (k, l) = <e_k, D Lambda[e_l]>.
///
/// The directional derivative of the field along e_l is the rotated
/// gradient of the zero-data stream solve of e_l (elementwise constant), so
/// each trace is decomposed once and every direction integrates in closed
/// form on the pieces.
pub fn assemble_frozen_jacobian(
    p: &Problem,
    space: &GalerkinSpace,
    frozen: &LambdaOutput,
) -> Result<DenseMatrix, GalerkinError> {
    let n_dim = space.dim();
    let n_vert = p.mesh.n_vertices();
    let mut directions = Vec::with_capacity(n_dim);
    for e in &space.basis {
        let sol = p.solver.solve_zero_bc(e)?;
        directions.push(perp_gradient(p.mesh, &sol));
    }
    let field = FlowField::with_fem(p.mesh, &frozen.fem, p.mu);
    let mut columns = vec![vec![0.0; n_vert]; n_dim];
    for v in 0..n_vert {
        let tr = &frozen.transport.traces[v];
        let pieces = decompose_path(tr, Some(p.mesh));
        for (l, dir) in directions.iter().enumerate() {
            let te = tangent_exit(
                &field,
                p.domain,
                &p.data.vorticity,
                tr,
                &pieces,
                &TangentDirection::Elementwise(dir),
            );
            columns[l][v] = te.omega_dot;
        }
    }
    let mut a = DenseMatrix::zeros(n_dim, n_dim);
    for l in 0..n_dim {
        let coords = space.coords(p.solver, &columns[l]);
        for k in 0..n_dim {
            *a.at_mut(k, l) = coords[k];
        }
    }
    Ok(a)
}

/// How the Jacobian columns are probed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeScheme {
    /// Linearized path sensitivities (step-size free).
    Tangent,
    /// Central differences of the full composed map.
    FiniteDifference,
}

/// The frozen modal Jacobian together with how it was produced.
pub struct OperatorMatrix {
    pub entries: DenseMatrix,
    pub probe_scheme: ProbeScheme,
    /// The step actually used (0 for the tangent scheme).
    pub fd_step: f64,
}

/// Jacobian by central differences: column l is
/// P (Lambda(omega0 + eps e_l) - Lambda(omega0 - eps e_l)) / 2 eps with
/// eps = fd_step * max(1, ||omega0||).
pub fn assemble_jacobian_fd(
    p: &Problem,
    space: &GalerkinSpace,
    omega0: &[f64],
    fd_step: f64,
) -> Result<OperatorMatrix, GalerkinError> {
    let n_dim = space.dim();
    let eps = fd_step * p.norm(omega0).max(1.0);
    let mut a = DenseMatrix::zeros(n_dim, n_dim);
    for l in 0..n_dim {
        let mut plus = omega0.to_vec();
        let mut minus = omega0.to_vec();
        for (v, &e) in space.basis[l].iter().enumerate() {
            plus[v] += eps * e;
            minus[v] -= eps * e;
        }
        let lp = apply_lambda(p, &plus)?;
        let lm = apply_lambda(p, &minus)?;
        let fd: Vec<f64> = lp
            .omega
            .values
            .iter()
            .zip(lm.omega.values.iter())
            .map(|(&x, &y)| (x - y) / (2.0 * eps))
            .collect();
        let coords = space.coords(p.solver, &fd);
        for k in 0..n_dim {
            *a.at_mut(k, l) = coords[k];
        }
    }
    Ok(OperatorMatrix { entries: a, probe_scheme: ProbeScheme::FiniteDifference, fd_step: eps })
}

/// Jacobian by the requested scheme. `frozen` must be the Lambda output at
/// `omega0` (only the tangent scheme reads it).
pub fn assemble_jacobian(
    p: &Problem,
    space: &GalerkinSpace,
    omega0: &[f64],
    frozen: &LambdaOutput,
    scheme: ProbeScheme,
    fd_step: f64,
) -> Result<OperatorMatrix, GalerkinError> {
    match scheme {
        ProbeScheme::Tangent => {
            let entries = assemble_frozen_jacobian(p, space, frozen)?;
            Ok(OperatorMatrix { entries, probe_scheme: ProbeScheme::Tangent, fd_step: 0.0 })
        }
        ProbeScheme::FiniteDifference => assemble_jacobian_fd(p, space, omega0, fd_step),
    }
}

/// (||P f||^2 + eta0 ||(I-P) f||^2)^(1/2): the weighted norm that makes the
/// update map a 1/2-contraction when the certificate holds.
pub fn star_norm(p: &Problem, space: &GalerkinSpace, eta0: f64, f: &[f64]) -> f64 {
    let u = space.coords(p.solver, f);
    let uf = space.reconstruct(&u);
    let v: Vec<f64> = f.iter().zip(uf.iter()).map(|(&a, &b)| a - b).collect();
    let u2: f64 = u.iter().map(|c| c * c).sum();
    let v2 = p.solver.inner(&v, &v);
    (u2 + eta0 * v2).sqrt()
}

/// 1 / sigma_min(I - A): the operator norm of the inverse of the frozen
/// modal system.
pub fn inverse_gap_bound(a: &DenseMatrix) -> Result<f64, GalerkinError> {
    debug_assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = DenseMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            *m.at_mut(i, j) -= a.at(i, j);
        }
    }
    let sv = m.singular_values();
    let sigma_min = sv.into_iter().fold(f64::INFINITY, f64::min);
    if !(sigma_min > 1e-10) {
        return Err(GalerkinError::SingularJacobian { sigma_min });
    }
    Ok(1.0 / sigma_min)
}

pub struct UpsilonOutput {
    pub omega: Vec<f64>,
    /// ||Lambda(omega) - omega||.
    pub lambda_residual: f64,
    /// ||next - omega||.
    pub step_size: f64,
    pub lambda: LambdaOutput,
}

/// One quasi-Newton update: solve (I - A P)(next - omega) = Lambda(omega)
/// - omega. The modal block goes through the dense (I - A), the complement
/// is passed through unchanged.
pub fn apply_upsilon(
    p: &Problem,
    space: &GalerkinSpace,
    a: &DenseMatrix,
    omega: &[f64],
) -> Result<UpsilonOutput, GalerkinError> {
    let lam = apply_lambda(p, omega)?;
    let r: Vec<f64> = lam.omega.values.iter().zip(omega.iter()).map(|(&l, &o)| l - o).collect();
    let pr = space.coords(p.solver, &r);
    let n = space.dim();
    let mut ia = DenseMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            *ia.at_mut(i, j) -= a.at(i, j);
        }
    }
    let du = lu_solve(&ia, &pr).ok_or(GalerkinError::SingularJacobian { sigma_min: 0.0 })?;
    // d = reconstruct(du) + (r - P r)
    let mut d = space.reconstruct(&du);
    let prf = space.reconstruct(&pr);
    for i in 0..d.len() {
        d[i] += r[i] - prf[i];
    }
    let omega_next: Vec<f64> = omega.iter().zip(d.iter()).map(|(&o, &dd)| o + dd).collect();
    Ok(UpsilonOutput {
        omega: omega_next,
        lambda_residual: p.norm(&r),
        step_size: p.norm(&d),
        lambda: lam,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub lambda_residual: f64,
    /// ||next - omega|| in L2.
    pub step_size: f64,
    /// ||next - omega|| in the weighted norm; the contraction lives here.
    pub step_star: f64,
    pub dist_from_start: f64,
    /// step_star ratio against the previous step, once available.
    pub contraction: Option<f64>,
}

pub struct FixedPointRun {
    pub omega: Vec<f64>,
    pub history: Vec<StepRecord>,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct IterateOptions {
    /// Stop when the weighted step size falls below this.
    pub stop_tol: f64,
    pub max_steps: usize,
    /// Weight of the complement component in the step norm.
    pub eta0: f64,
    /// Abort radius around the start state (L2), if enforced.
    pub neighborhood: Option<f64>,
}

impl Default for IterateOptions {
    fn default() -> Self {
        IterateOptions { stop_tol: 1e-13, max_steps: 40, eta0: 1.0, neighborhood: None }
    }
}

/// Iterate the update map from `omega0` until the weighted step size drops
/// below `stop_tol` (or the step budget runs out).
pub fn iterate_to_fixed_point(
    p: &Problem,
    space: &GalerkinSpace,
    a: &DenseMatrix,
    omega0: &[f64],
    opts: &IterateOptions,
) -> Result<FixedPointRun, GalerkinError> {
    let mut omega = omega0.to_vec();
    let mut history = Vec::new();
    let mut prev_step: Option<f64> = None;
    let mut converged = false;
    for step in 1..=opts.max_steps {
        let out = apply_upsilon(p, space, a, &omega)?;
        let diff: Vec<f64> = out.omega.iter().zip(omega0.iter()).map(|(&x, &y)| x - y).collect();
        let dist = p.norm(&diff);
        if let Some(radius) = opts.neighborhood {
            if dist > radius {
                return Err(GalerkinError::NeighborhoodExit { dist, radius });
            }
        }
        let d: Vec<f64> = out.omega.iter().zip(omega.iter()).map(|(&x, &y)| x - y).collect();
        let step_star = star_norm(p, space, opts.eta0, &d);
        let contraction = prev_step.map(|prv| if prv > 0.0 { step_star / prv } else { 0.0 });
        history.push(StepRecord {
            step,
            lambda_residual: out.lambda_residual,
            step_size: out.step_size,
            step_star,
            dist_from_start: dist,
            contraction,
        });
        prev_step = Some(step_star);
        omega = out.omega;
        if step_star <= opts.stop_tol {
            converged = true;
            break;
        }
    }
    Ok(FixedPointRun { omega, history, converged })
}
