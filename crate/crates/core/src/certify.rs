//! The constants ledger, every certification inequality, and the verdict.
//!
//! A computed approximate fixed point is worth something only with an
//! auditable chain from measurable facts (wall margins, speed bounds, basis
//! quality, Jacobian stability) to an explicit radius `delta2` such that an
//! exact profile lies within `delta2` (in L2) of the computed state. This
//! module owns that chain. Every number that enters it is recorded with a
//! provenance tag, every inequality is recorded with both sides, and the
//! verdict is a pure function of those records:
//!
//!  * `certified`      — every check passed, nothing taken on faith;
//!  * `conditionally-certified` — every check passed, but some constant is
//!    user-supplied (the Holder conversion constant always is) or is a
//!    sampled supremum that was not explicitly acknowledged;
//!  * `failed`         — some check failed. The certificate still carries
//!    everything that was computed, so the failure is diagnosable.
//!
//! Nothing here ever weakens a check to make a run pass: a run that cannot
//! close the chain fails with the offending inequality on record.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
// Needed for float math without std; spuriously "unused" when a test
// build links std into the graph.
#[allow(unused_imports)]
use num_traits::Float;

use crate::boundary::CurveData;
use crate::elliptic::ElementwiseVectorField;
use crate::galerkin::{
    apply_lambda, assemble_frozen_jacobian, GalerkinSpace, LambdaOutput, Problem,
};
use crate::geometry::{DomainSpec, Mesh, TWO_PI};
use crate::linalg::{lu_solve, DenseMatrix};
use crate::rng::Rng;
use crate::transport::{
    decompose_path, tangent_exit, FlowField, FlowSurvey, StreamMode, TangentDirection,
};
use crate::vec2::{Mat2, Point2};

/// Inflation applied to sampled suprema before they enter the chain.
pub const SAMPLING_SAFETY: f64 = 1.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CertifyError {
    /// The backward flow does not leave through the sampled data support.
    NonTransversal { margin: f64 },
    /// No dyadic perturbation radius down to 2^-20 preserves the margins.
    NoMargin,
    /// No probed radius keeps the modal Jacobian inside its budget.
    NoNeighborhood,
}

impl fmt::Display for CertifyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CertifyError::NonTransversal { margin } => {
                write!(f, "data wall not uniformly transversal (worst margin {margin:.3e})")
            }
            CertifyError::NoMargin => {
                write!(f, "no dyadic perturbation radius down to 2^-20 preserves the wall margins")
            }
            CertifyError::NoNeighborhood => {
                write!(f, "no probed radius keeps the frozen Jacobian inside its budget")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Ledger types.
// ---------------------------------------------------------------------------

/// Where a ledger value comes from; decides how far the verdict can go.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Provenance {
    /// Exact arithmetic on values already in the ledger.
    AnalyticFormula,
    /// Supremum or infimum estimated by dense sampling (inflated where the
    /// chain direction requires it).
    SampledBound,
    /// Output of a discrete spectral computation (eigensolve, SVD, power
    /// iteration).
    DiscreteEstimate,
    /// Taken from the run configuration on faith.
    UserSupplied,
}

#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConstantEntry {
    pub name: String,
    pub value: f64,
    pub provenance: Provenance,
    /// What this value was computed from (ledger names or short phrases).
    pub inputs: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct ConstantsLedger {
    pub entries: Vec<ConstantEntry>,
}

impl ConstantsLedger {
    pub fn push(&mut self, name: &str, value: f64, provenance: Provenance, inputs: &[&str]) {
        self.entries.push(ConstantEntry {
            name: name.into(),
            value,
            provenance,
            inputs: inputs.iter().map(|&s| s.into()).collect(),
        });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.value)
    }
}

#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckRecord {
    pub name: String,
    /// The inequality tested, in words.
    pub inequality: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

fn check(name: &str, inequality: &str, lhs: f64, rhs: f64, pass: bool) -> CheckRecord {
    CheckRecord { name: name.into(), inequality: inequality.into(), lhs, rhs, pass }
}

#[derive(Clone, Copy, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Residuals {
    /// ||omega0 - P Lambda(omega0)||: modal defect of the anchor state.
    pub anchor_defect: f64,
    /// ||Upsilon(omega0) - omega0||: one full update step from the anchor.
    pub update_gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Verdict {
    Certified,
    ConditionallyCertified,
    Failed,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Certified => "certified",
            Verdict::ConditionallyCertified => "conditionally-certified",
            Verdict::Failed => "failed",
        }
    }
}

/// The full machine-readable output of one certification run.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Certificate {
    pub constants: Vec<ConstantEntry>,
    pub checks: Vec<CheckRecord>,
    /// Present once the anchor state exists; null for early failures.
    pub residuals: Option<Residuals>,
    pub verdict: Verdict,
    /// Radius of the L2 ball around the anchor state that contains an exact
    /// profile when the verdict is not `failed`.
    pub conclusion_bound: f64,
    pub seed: u64,
    pub config_hash: u64,
}

impl Certificate {
    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|e| e.name == name).map(|e| e.value)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }
}

// ---------------------------------------------------------------------------
// Quadrature.
// ---------------------------------------------------------------------------

fn simpson_refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_refine(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + simpson_refine(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature with a relative tolerance (against the
/// coarse whole-interval estimate).
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = rel_tol * whole.abs().max(1e-300);
    simpson_refine(&f, a, fa, b, fb, m, fm, whole, tol, 40)
}

// ---------------------------------------------------------------------------
// The growth factor.
// ---------------------------------------------------------------------------

/// Closed form of (1/2) int_0^t exp((2m+1)(t-s)) exp(-2 mu s) ds: the
/// variance-like kernel accumulated along a backward path of length t in a
/// field with C1 bound m and divergence -2 mu.
pub fn dispersion_integral(m: f64, t: f64, mu: f64) -> f64 {
    (((2.0 * m + 1.0) * t).exp() - (-2.0 * mu * t).exp()) / (4.0 * m + 4.0 * mu + 2.0)
}

/// Quadrature oracle for `dispersion_integral`.
pub fn dispersion_integral_quadrature(m: f64, t: f64, mu: f64, rel_tol: f64) -> f64 {
    adaptive_simpson(
        |s| 0.5 * ((2.0 * m + 1.0) * (t - s)).exp() * (-2.0 * mu * s).exp(),
        0.0,
        t,
        rel_tol,
    )
}

/// L2 amplification from field perturbations (C1 size m) to traced exit
/// data over backward paths of length at most t: e^t sqrt(dispersion).
pub fn growth_bound(m: f64, t: f64, mu: f64) -> f64 {
    t.exp() * dispersion_integral(m, t, mu).max(0.0).sqrt()
}

// ---------------------------------------------------------------------------
// Wall constants.
// ---------------------------------------------------------------------------

/// The trace constant on the data wall, with the raw ingredients kept for
/// the ledger.
#[derive(Clone, Copy, Debug)]
pub struct DataWallBound {
    pub value: f64,
    /// inf of -<n, q> over the sampled data support.
    pub inf_normal_speed: f64,
    /// sup of |q| / -<n, q>, pointwise over the sampled data support.
    pub sup_speed_ratio: f64,
    pub h_sup: f64,
    pub dh_sup: f64,
}

/// sup(1 / -<n,q>) ||h||_C0 + (1 + sup |q| / -<n,q>) ||h'||_C0, sampled over
/// the part of the data wall that carries data: the factor mapping a field
/// perturbation at the exit to the perturbation of the traced value.
/// Errors if the backward flow fails to leave through any sampled point.
pub fn data_wall_constant(
    field: &FlowField,
    domain: &DomainSpec,
    h: &CurveData,
    n_samples: usize,
) -> Result<DataWallBound, CertifyError> {
    let wall = domain.data_wall();
    let curve = domain.wall(wall);
    let (th0, span) = match &h.window {
        Some(w) => (w.start, w.width),
        None => (0.0, TWO_PI),
    };
    let mut hint = None;
    let mut inf_speed = f64::INFINITY;
    let mut ratio = 0.0f64;
    for s in 0..=n_samples {
        let th = th0 + span * s as f64 / n_samples as f64;
        let q = field.eval(curve.point(th), &mut hint);
        let nq = -domain.outward_normal(wall, th).dot(q);
        inf_speed = inf_speed.min(nq);
        if nq > 0.0 {
            ratio = ratio.max(q.norm() / nq);
        }
    }
    if !(inf_speed > 0.0) {
        return Err(CertifyError::NonTransversal { margin: inf_speed });
    }
    let h_sup = h.sup_abs();
    let dh_sup = h.sup_abs_deriv_arclength(curve);
    Ok(DataWallBound {
        value: h_sup / inf_speed + (1.0 + ratio) * dh_sup,
        inf_normal_speed: inf_speed,
        sup_speed_ratio: ratio,
        h_sup,
        dh_sup,
    })
}

/// C1-type bound for the advecting field. Within elements Dq = -mu I
/// exactly; the elementwise part varies only across edges, so its slope is
/// estimated by the largest adjacent-element jump over centroid distance.
/// The result is 1.05 * max(sup |q|, mu + jump slope).
#[derive(Clone, Copy, Debug)]
pub struct FieldBound {
    pub value: f64,
    pub sup_speed: f64,
    /// mu plus the sampled jump slope of the elementwise part.
    pub gradient_estimate: f64,
}

pub fn field_bound(
    mesh: &Mesh,
    fem: Option<&ElementwiseVectorField>,
    mu: f64,
    sup_speed: f64,
) -> FieldBound {
    let centroid = |t: usize| {
        let [a, b, c] = mesh.triangle_points(t);
        (a + b + c) * (1.0 / 3.0)
    };
    let mut slope = 0.0f64;
    if let Some(fem) = fem {
        for t in 0..mesh.triangles.len() {
            let ct = centroid(t);
            for e in 0..3 {
                if let Some(o) = mesh.neighbors[t][e] {
                    if o > t {
                        let d = ct.dist(centroid(o));
                        if d > 0.0 {
                            slope = slope
                                .max((fem.per_triangle[t] - fem.per_triangle[o]).norm() / d);
                        }
                    }
                }
            }
        }
    }
    let gradient_estimate = mu + slope;
    FieldBound {
        value: SAMPLING_SAFETY * sup_speed.max(gradient_estimate),
        sup_speed,
        gradient_estimate,
    }
}

// ---------------------------------------------------------------------------
// The perturbation budget delta1.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginBudget {
    pub delta1: f64,
    /// (sup kappa |q| + M)(T*+1) e^{M(T*+1)}: how fast a C1 field change of
    /// unit size can erode a wall margin along displaced paths.
    pub erosion: f64,
    /// (T*+1) e^{M(T*+1)}: path displacement per unit field change.
    pub displacement: f64,
}

/// Largest dyadic delta1 = 2^-k (k <= 20) such that any C1 perturbation of
/// size delta1 keeps every wall margin above c1/2 and displaces no path by
/// more than half the wall gap.
pub fn margin_budget(survey: &FlowSurvey, m: f64) -> Result<MarginBudget, CertifyError> {
    let t1 = survey.t_star + 1.0;
    let displacement = t1 * (m * t1).exp();
    let erosion = (survey.sup_curv_q_data.max(survey.sup_curv_q_free) + m) * displacement;
    for k in 0..=20 {
        let d = 0.5f64.powi(k);
        if d * (1.0 + erosion) <= 0.5 * survey.c1 && d * displacement <= 0.5 * survey.wall_gap {
            return Ok(MarginBudget { delta1: d, erosion, displacement });
        }
    }
    Err(CertifyError::NoMargin)
}

// ---------------------------------------------------------------------------
// Holder machinery: the seminorm and the comparison bump mass.
// ---------------------------------------------------------------------------

/// Sampled Holder seminorm of a vertex field: sup over vertex pairs closer
/// than `delta` of |f(x) - f(y)| / |x - y|^alpha. Spatial hashing keeps the
/// pair scan near-linear for delta comparable to the mesh size.
pub fn holder_seminorm(mesh: &Mesh, f: &[f64], alpha: f64, delta: f64) -> f64 {
    let key = |p: Point2| ((p.x / delta).floor() as i64, (p.y / delta).floor() as i64);
    let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (v, &p) in mesh.vertices.iter().enumerate() {
        cells.entry(key(p)).or_default().push(v);
    }
    let mut sup = 0.0f64;
    for (v, &p) in mesh.vertices.iter().enumerate() {
        let (ci, cj) = key(p);
        for di in -1..=1 {
            for dj in -1..=1 {
                let Some(list) = cells.get(&(ci + di, cj + dj)) else { continue };
                for &w in list {
                    if w <= v {
                        continue;
                    }
                    let d = p.dist(mesh.vertices[w]);
                    if d > 0.0 && d < delta {
                        sup = sup.max((f[v] - f[w]).abs() / d.powf(alpha));
                    }
                }
            }
        }
    }
    sup
}

/// c^2 int_0^r ((delta^alpha / 2) - s^alpha)^2 s ds, closed form.
fn bump_radial_mass(c: f64, da: f64, alpha: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    c * c
        * (0.125 * da * da * r * r - da * r.powf(alpha + 2.0) / (alpha + 2.0)
            + r.powf(2.0 * alpha + 2.0) / (2.0 * alpha + 2.0))
}

/// L2 norm over a disc of radius rho tangent to the origin of the bump
/// phi(x) = max(0, (c/2) delta^alpha - c |x|^alpha).
///
/// Any field with Holder seminorm <= c at scale delta whose magnitude
/// reaches (c/2) delta^alpha at some point dominates this bump on a
/// radius-rho interior disc touching that point, so its L2 mass there is at
/// least this value. Contrapositive: L2 mass below it certifies the
/// uniform bound (c/2) delta^alpha.
pub fn bump_mass(rho: f64, alpha: f64, delta: f64, c: f64) -> f64 {
    if !(rho > 0.0) || !(delta > 0.0) || !(c > 0.0) {
        return 0.0;
    }
    let da = delta.powf(alpha);
    // Support radius: (c/2) delta^alpha = c r^alpha.
    let r0 = delta * 0.5f64.powf(1.0 / alpha);
    let profile = |theta: f64| {
        // Polar around the tangency point: the disc spans r < 2 rho cos(theta).
        let reach = 2.0 * rho * theta.cos();
        bump_radial_mass(c, da, alpha, r0.min(reach).max(0.0))
    };
    let half_pi = core::f64::consts::FRAC_PI_2;
    let mass2 = if r0 < 2.0 * rho {
        // Inside |theta| < theta_star the support lies fully inside the disc.
        let theta_star = (r0 / (2.0 * rho)).acos();
        2.0 * (theta_star * bump_radial_mass(c, da, alpha, r0)
            + adaptive_simpson(profile, theta_star, half_pi, 1e-9))
    } else {
        2.0 * adaptive_simpson(profile, 0.0, half_pi, 1e-9)
    };
    mass2.max(0.0).sqrt()
}

/// Monte-Carlo oracle for `bump_mass` squared: (mean, standard error) of
/// the integral from n uniform draws over the disc.
pub fn bump_mass_mc(
    rho: f64,
    alpha: f64,
    delta: f64,
    c: f64,
    n: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = Rng::seed_from_u64(seed);
    let area = core::f64::consts::PI * rho * rho;
    let peak = 0.5 * c * delta.powf(alpha);
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut k = 0usize;
    while k < n {
        let u = rng.range(-1.0, 1.0);
        let v = rng.range(-1.0, 1.0);
        if u * u + v * v > 1.0 {
            continue;
        }
        let p = Point2::new(rho + rho * u, rho * v);
        let phi = (peak - c * p.norm().powf(alpha)).max(0.0);
        sum += phi * phi;
        sum_sq += phi * phi * phi * phi;
        k += 1;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0) / n as f64;
    (area * mean, area * var.sqrt())
}

// ---------------------------------------------------------------------------
// Basis and iterate bounds.
// ---------------------------------------------------------------------------

/// max over basis fields of max(sup |phi_j|, sup |grad phi_j|): vertex
/// values and elementwise P1 gradients.
pub fn basis_c1_bound(mesh: &Mesh, space: &GalerkinSpace) -> f64 {
    let mut out = 0.0f64;
    for e in &space.basis {
        for &val in e.iter() {
            out = out.max(val.abs());
        }
        for t in 0..mesh.triangles.len() {
            let g = crate::elliptic::basis_gradients(mesh, t);
            let tri = mesh.triangles[t];
            let grad = g[0] * e[tri[0]] + g[1] * e[tri[1]] + g[2] * e[tri[2]];
            out = out.max(grad.norm());
        }
    }
    out
}

/// (1 + gamma (1 + ||A||) B_U) (e^{T*+1} ||h||_C0 + c_tilde e^{(T*+1)(M+2)}):
/// C0-level sensitivity of one update step to a unit state perturbation,
/// used to convert the L2 neighborhood into a uniform one.
pub fn iterate_c0_bound(
    gamma: f64,
    a_norm: f64,
    b_u: f64,
    t_star: f64,
    m: f64,
    h_sup: f64,
    c_tilde: f64,
) -> f64 {
    let t1 = t_star + 1.0;
    (1.0 + gamma * (1.0 + a_norm) * b_u) * (t1.exp() * h_sup + c_tilde * (t1 * (m + 2.0)).exp())
}

// ---------------------------------------------------------------------------
// The coupled-system budget.
// ---------------------------------------------------------------------------

/// sqrt(2) kappa0 (eps0^2 + eps0 / lambda1)^{1/2}: how much the coupled
/// modal/complement error system can amplify in the weighted norm.
pub fn interaction_budget(kappa0: f64, epsilon0: f64, lambda1: f64) -> f64 {
    2.0f64.sqrt() * kappa0 * (epsilon0 * epsilon0 + epsilon0 / lambda1).sqrt()
}

/// Operator norm induced on the eta0-weighted product space by a 2x2 matrix
/// of componentwise bounds: the spectral norm of
/// [[b00, b01/sqrt(eta0)], [sqrt(eta0) b10, b11]].
pub fn weighted_2x2_norm(b: [[f64; 2]; 2], eta0: f64) -> f64 {
    let s = eta0.sqrt();
    Mat2 { a: b[0][0], b: b[0][1] / s, c: s * b[1][0], d: b[1][1] }.op_norm()
}

// ---------------------------------------------------------------------------
// The Jacobian-stability radius delta2.
// ---------------------------------------------------------------------------

/// Largest radius (up to `cap`) at which every probe state keeps the modal
/// Jacobian within `tolerance` of the frozen one in spectral norm. Probes
/// are the tail direction (if given) plus seeded random directions from the
/// modal space, all normalized in L2. The cap is tried first; below it the
/// radius is bisected between the largest passing and smallest failing
/// dyadic fractions.
pub fn delta2_estimate(
    p: &Problem,
    space: &GalerkinSpace,
    frozen: &DenseMatrix,
    omega0: &[f64],
    tolerance: f64,
    cap: f64,
    tail_direction: Option<&[f64]>,
    n_probes: usize,
    seed: u64,
) -> Result<f64, CertifyError> {
    if !(cap > 0.0) {
        return Err(CertifyError::NoNeighborhood);
    }
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    if let Some(t) = tail_direction {
        let n = p.norm(t);
        if n > 0.0 {
            dirs.push(t.iter().map(|&x| x / n).collect());
        }
    }
    let mut rng = Rng::seed_from_u64(seed);
    while dirs.len() < n_probes.max(1) {
        let coords: Vec<f64> = (0..space.dim()).map(|_| rng.normal()).collect();
        let v = space.reconstruct(&coords);
        let n = p.norm(&v);
        if n > 0.0 {
            dirs.push(v.iter().map(|&x| x / n).collect());
        }
    }
    let n_dim = space.dim();
    let passes = |radius: f64| -> bool {
        for dir in &dirs {
            let state: Vec<f64> =
                omega0.iter().zip(dir.iter()).map(|(&o, &x)| o + radius * x).collect();
            let Ok(lam) = apply_lambda(p, &state) else { return false };
            let Ok(a) = assemble_frozen_jacobian(p, space, &lam) else { return false };
            let mut diff = DenseMatrix::zeros(n_dim, n_dim);
            for i in 0..n_dim {
                for j in 0..n_dim {
                    *diff.at_mut(i, j) = a.at(i, j) - frozen.at(i, j);
                }
            }
            if diff.spectral_norm() > tolerance {
                return false;
            }
        }
        true
    };
    if passes(cap) {
        return Ok(cap);
    }
    let mut lo = cap;
    let mut found = false;
    for _ in 0..20 {
        lo *= 0.5;
        if passes(lo) {
            found = true;
            break;
        }
    }
    if !found {
        return Err(CertifyError::NoNeighborhood);
    }
    let mut hi = 2.0 * lo;
    for _ in 0..12 {
        let mid = 0.5 * (lo + hi);
        if passes(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

// ---------------------------------------------------------------------------
// Tangent-response audit.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct TangentAudit {
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
}

/// For seeded random closed-form divergence-free perturbation fields
/// supported strictly inside the domain, compare the L2 norm of the
/// linearized traced response against c_tilde * growth_bound(m, T*) times
/// the L2 norm of the perturbation. Every ratio should sit at or below 1
/// when m really bounds the field in C1.
pub fn audit_tangent_bound(
    p: &Problem,
    base: &LambdaOutput,
    m: f64,
    c_tilde: f64,
    n_fields: usize,
    seed: u64,
) -> TangentAudit {
    let field = FlowField::with_fem(p.mesh, &base.fem, p.mu);
    let factor = c_tilde * growth_bound(m, base.transport.max_tau, p.mu);
    let band0 = p.domain.wall(crate::geometry::Wall::Inner).max_radius();
    let band1 = p.domain.wall(crate::geometry::Wall::Outer).min_radius();
    let pad = 0.02 * (band1 - band0);
    let mut rng = Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(n_fields);
    let mut max_ratio = 0.0f64;
    for _ in 0..n_fields {
        let mode = StreamMode {
            k: 1 + (rng.next_u64() % 6) as u32,
            a: rng.normal(),
            b: rng.normal(),
            r0: band0 + pad,
            r1: band1 - pad,
        };
        let mut q2 = 0.0f64;
        for t in 0..p.mesh.triangles.len() {
            let [a, b, c] = p.mesh.triangle_points(t);
            let area = p.mesh.triangle_area(t);
            for mid in [(a + b) * 0.5, (b + c) * 0.5, (c + a) * 0.5] {
                q2 += area / 3.0 * mode.eval(mid).norm_sq();
            }
        }
        let mut resp = vec![0.0; p.mesh.n_vertices()];
        for v in 0..p.mesh.n_vertices() {
            let tr = &base.transport.traces[v];
            let pieces = decompose_path(tr, Some(p.mesh));
            let te = tangent_exit(
                &field,
                p.domain,
                p.vorticity_data(),
                tr,
                &pieces,
                &TangentDirection::Analytic(&|x| mode.eval(x)),
            );
            resp[v] = te.omega_dot;
        }
        let rnorm = p.norm(&resp);
        let bound = factor * q2.sqrt();
        let ratio = if rnorm == 0.0 { 0.0 } else { rnorm / bound };
        max_ratio = max_ratio.max(ratio);
        ratios.push(ratio);
    }
    TangentAudit { ratios, max_ratio }
}

// ---------------------------------------------------------------------------
// The certification fold.
// ---------------------------------------------------------------------------

/// Solver outputs the chain consumes. Absent when the pipeline failed
/// before producing an anchor state (the certificate then fails on the
/// earliest check instead).
pub struct SolveArtifacts<'a> {
    pub space: &'a GalerkinSpace,
    /// The frozen modal Jacobian A at the anchor state.
    pub jacobian: &'a DenseMatrix,
    /// ||(I - A)^{-1}||, from the dense SVD of I - A.
    pub gamma: f64,
    pub omega0: &'a [f64],
    /// Lambda at the anchor state.
    pub lambda0: &'a LambdaOutput,
    /// First eigenvalue of the full-Dirichlet Laplacian on the mesh.
    pub lambda1: f64,
    /// Tail-solve norm estimate, already inflated by its safety factor.
    pub epsilon0: f64,
    /// Direction that realized the tail norm, if the caller kept it.
    pub tail_direction: Option<&'a [f64]>,
}

pub struct CertifyInputs<'a> {
    pub problem: &'a Problem<'a>,
    /// Survey of the flow at the anchor state.
    pub survey: &'a FlowSurvey,
    /// The advecting field's elementwise part at the anchor state.
    pub fem: &'a ElementwiseVectorField,
    pub artifacts: Option<SolveArtifacts<'a>>,
    /// Holder-to-uniform conversion constant, taken on faith from the
    /// configuration.
    pub c2: f64,
    pub n_probes: usize,
    pub seed: u64,
    pub config_hash: u64,
    /// Treat sampled suprema as proven for the purpose of the verdict.
    pub ack_sampled_bounds: bool,
}

/// Names that must be present and finite before any non-failed verdict.
const REQUIRED_CONSTANTS: [&str; 10] =
    ["c_tilde", "K", "C2", "lambda1", "epsilon0", "kappa0", "delta1", "delta_c", "gamma", "delta2"];

fn assemble(
    inp: &CertifyInputs,
    led: ConstantsLedger,
    mut checks: Vec<CheckRecord>,
    residuals: Option<Residuals>,
    conclusion: f64,
) -> Certificate {
    let missing = REQUIRED_CONSTANTS
        .iter()
        .filter(|n| !led.get(n).map(f64::is_finite).unwrap_or(false))
        .count();
    checks.push(check(
        "ledger-complete",
        "every chained constant present and finite",
        missing as f64,
        0.0,
        missing == 0,
    ));
    let all_pass = checks.iter().all(|c| c.pass);
    let verdict = if !all_pass {
        Verdict::Failed
    } else if led.entries.iter().any(|e| e.provenance == Provenance::UserSupplied)
        || (!inp.ack_sampled_bounds
            && led.entries.iter().any(|e| e.provenance == Provenance::SampledBound))
    {
        Verdict::ConditionallyCertified
    } else {
        Verdict::Certified
    };
    Certificate {
        constants: led.entries,
        checks,
        residuals,
        verdict,
        conclusion_bound: conclusion,
        seed: inp.seed,
        config_hash: inp.config_hash,
    }
}

/// Run the whole chain and produce the certificate. Never errors: any
/// failure becomes a failing check with the verdict `failed`.
pub fn run_certification(inp: &CertifyInputs) -> Certificate {
    let p = inp.problem;
    let survey = inp.survey;
    let mut led = ConstantsLedger::default();
    let mut checks: Vec<CheckRecord> = Vec::new();

    led.push("mu", p.mu, Provenance::AnalyticFormula, &["config"]);
    let fb = field_bound(p.mesh, Some(inp.fem), p.mu, survey.sup_q);
    led.push("M", fb.value, Provenance::SampledBound, &["sup |q|", "element jumps", "mu"]);
    led.push("c1", survey.c1, Provenance::SampledBound, &["wall margins"]);
    led.push("T_star", survey.t_star, Provenance::SampledBound, &["exit times"]);

    checks.push(check(
        "transversality",
        "both wall margins positive: c1 > 0",
        survey.c1,
        0.0,
        survey.transversal && survey.c1 > 0.0,
    ));
    checks.push(check(
        "trace-coverage",
        "every sampled backward path exits through the data wall",
        survey.n_failures as f64,
        0.0,
        survey.n_failures == 0,
    ));
    if !survey.transversal || !(survey.c1 > 0.0) {
        return assemble(inp, led, checks, None, 0.0);
    }

    let field = FlowField::with_fem(p.mesh, inp.fem, p.mu);
    let dw = match data_wall_constant(&field, p.domain, p.vorticity_data(), 4096) {
        Ok(dw) => dw,
        Err(CertifyError::NonTransversal { margin }) => {
            checks.push(check(
                "transversality",
                "inf of -<n, q> over the data support positive",
                margin,
                0.0,
                false,
            ));
            return assemble(inp, led, checks, None, 0.0);
        }
        Err(_) => unreachable!(),
    };
    led.push(
        "c_tilde",
        dw.value,
        Provenance::SampledBound,
        &["data-wall margin", "sup |h|", "sup |h'|"],
    );

    let Some(art) = &inp.artifacts else {
        return assemble(inp, led, checks, None, 0.0);
    };

    let (_, rho) = p.domain.inscribed_disc();
    led.push("rho", rho, Provenance::SampledBound, &["domain geometry"]);
    led.push("alpha", 0.5, Provenance::AnalyticFormula, &[]);

    let mb = match margin_budget(survey, fb.value) {
        Ok(mb) => mb,
        Err(_) => {
            checks.push(check(
                "field-margin",
                "some dyadic delta1 keeps margins and corridor",
                0.0,
                0.0,
                false,
            ));
            return assemble(inp, led, checks, None, 0.0);
        }
    };
    led.push(
        "delta1",
        mb.delta1,
        Provenance::SampledBound,
        &["c1", "M", "T_star", "wall gap", "wall curvature"],
    );
    checks.push(check(
        "field-margin",
        "delta1 (1 + erosion) <= c1 / 2",
        mb.delta1 * (1.0 + mb.erosion),
        0.5 * survey.c1,
        mb.delta1 > 0.0 && mb.delta1 * (1.0 + mb.erosion) <= 0.5 * survey.c1,
    ));

    let kg = growth_bound(fb.value + mb.delta1, survey.t_star + 1.0, p.mu);
    led.push("K", kg, Provenance::AnalyticFormula, &["M", "delta1", "T_star", "mu"]);
    let kappa0 = dw.value * kg;
    led.push("kappa0", kappa0, Provenance::AnalyticFormula, &["c_tilde", "K"]);
    led.push("lambda1", art.lambda1, Provenance::DiscreteEstimate, &["dirichlet eigensolve"]);
    led.push(
        "kappa0_over_lambda1",
        kappa0 / art.lambda1,
        Provenance::AnalyticFormula,
        &["kappa0", "lambda1"],
    );
    led.push("epsilon0", art.epsilon0, Provenance::DiscreteEstimate, &["tail power iteration"]);
    let eta0 = (art.lambda1 * art.epsilon0).min(1.0);
    led.push("eta0", eta0, Provenance::AnalyticFormula, &["lambda1", "epsilon0"]);
    led.push("gamma", art.gamma, Provenance::DiscreteEstimate, &["singular values of I - A"]);
    checks.push(check(
        "stability",
        "sigma_min(I - A) >= 1e-10",
        if art.gamma.is_finite() && art.gamma > 0.0 { 1.0 / art.gamma } else { 0.0 },
        1e-10,
        art.gamma.is_finite() && art.gamma > 0.0 && 1.0 / art.gamma >= 1e-10,
    ));

    let b_u = basis_c1_bound(p.mesh, art.space);
    led.push("B_U", b_u, Provenance::DiscreteEstimate, &["basis C1 sampling"]);
    led.push("C2", inp.c2, Provenance::UserSupplied, &["config"]);
    let a_norm = art.jacobian.spectral_norm();
    let c1b = iterate_c0_bound(art.gamma, a_norm, b_u, survey.t_star, fb.value, dw.h_sup, dw.value);
    led.push(
        "C1",
        c1b,
        Provenance::DiscreteEstimate,
        &["gamma", "||A||", "B_U", "T_star", "M", "sup |h|", "c_tilde"],
    );
    let delta = if c1b > 0.0 { (mb.delta1 / (2.0 * c1b * inp.c2)).powi(2).min(0.99) } else { 0.99 };
    led.push("delta", delta, Provenance::AnalyticFormula, &["delta1", "C1", "C2"]);
    checks.push(check(
        "regularity-window",
        "2 C1 sqrt(delta) <= delta1 / C2",
        2.0 * c1b * delta.sqrt(),
        mb.delta1 / inp.c2,
        2.0 * c1b * delta.sqrt() <= (mb.delta1 / inp.c2) * (1.0 + 1e-12),
    ));

    let dc = bump_mass(rho, 0.5, delta, mb.delta1 / inp.c2).min(mb.delta1);
    led.push(
        "delta_c",
        dc,
        Provenance::AnalyticFormula,
        &["rho", "alpha", "delta", "delta1", "C2"],
    );
    checks.push(check(
        "uniform-window",
        "0 < delta_c <= delta1",
        dc,
        mb.delta1,
        dc > 0.0 && dc <= mb.delta1,
    ));

    let budget = interaction_budget(kappa0, art.epsilon0, art.lambda1);
    checks.push(check(
        "contraction-budget",
        "sqrt(2) kappa0 sqrt(eps0^2 + eps0/lambda1) <= 1 / (2 gamma)",
        budget,
        1.0 / (2.0 * art.gamma),
        budget <= 1.0 / (2.0 * art.gamma),
    ));

    let d2 = delta2_estimate(
        p,
        art.space,
        art.jacobian,
        art.omega0,
        kappa0 * art.epsilon0,
        dc,
        art.tail_direction,
        inp.n_probes,
        inp.seed,
    )
    .unwrap_or(0.0);
    led.push(
        "delta2",
        d2,
        Provenance::SampledBound,
        &["jacobian probes", "delta_c", "kappa0", "epsilon0"],
    );
    checks.push(check(
        "neighborhood",
        "delta2 > 0 with the probed Jacobian within kappa0 eps0",
        d2,
        0.0,
        d2 > 0.0,
    ));

    // Residuals at the anchor state: the modal defect and one full update
    // step, from the already-computed Lambda output.
    let r: Vec<f64> =
        art.lambda0.omega.values.iter().zip(art.omega0.iter()).map(|(&l, &o)| l - o).collect();
    let pr = art.space.coords(p.solver, &r);
    let n_dim = art.space.dim();
    let mut ia = DenseMatrix::identity(n_dim);
    for i in 0..n_dim {
        for j in 0..n_dim {
            *ia.at_mut(i, j) -= art.jacobian.at(i, j);
        }
    }
    let update_gap = match lu_solve(&ia, &pr) {
        Some(du) => {
            let mut d = art.space.reconstruct(&du);
            let prf = art.space.reconstruct(&pr);
            for i in 0..d.len() {
                d[i] += r[i] - prf[i];
            }
            p.norm(&d)
        }
        None => f64::INFINITY,
    };
    let plam = art.space.project(p.solver, &art.lambda0.omega.values);
    let defect: Vec<f64> = art.omega0.iter().zip(plam.iter()).map(|(&o, &x)| o - x).collect();
    let residuals = Some(Residuals { anchor_defect: p.norm(&defect), update_gap });

    let thresh = 0.5 * d2 * eta0.sqrt();
    checks.push(check(
        "anchor-residual",
        "||Upsilon(omega0) - omega0|| <= delta2 sqrt(eta0) / 2",
        update_gap,
        thresh,
        update_gap <= thresh,
    ));

    assemble(inp, led, checks, residuals, d2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{BoundaryData, FourierSeries};
    use crate::elliptic::{wall_mask, Poisson};
    use crate::geometry::{build_mesh, Wall};
    use crate::transport::TraceOptions;

    #[test]
    fn growth_bound_matches_hand_value() {
        // m = 0, t = ln 2, mu = 1: 2 sqrt((2 - 1/4) / 6).
        let want = 2.0 * (1.75f64 / 6.0).sqrt();
        assert!((growth_bound(0.0, 2.0f64.ln(), 1.0) - want).abs() < 1e-14);
        assert!((want - 1.0801).abs() < 1e-4);
    }

    #[test]
    fn dispersion_closed_form_matches_quadrature() {
        let mut rng = Rng::seed_from_u64(41);
        for _ in 0..20 {
            let m = rng.range(0.0, 3.0);
            let t = rng.range(0.1, 3.0);
            let mu = rng.range(0.6, 2.0);
            let closed = dispersion_integral(m, t, mu);
            let quad = dispersion_integral_quadrature(m, t, mu, 1e-13);
            assert!(
                (closed - quad).abs() <= 1e-10 * closed.abs().max(1.0),
                "m={m} t={t} mu={mu}: {closed} vs {quad}"
            );
        }
    }

    #[test]
    fn growth_bound_is_monotone_in_field_size_and_horizon() {
        for i in 0..20 {
            for j in 0..20 {
                let m = 0.15 * i as f64;
                let t = 0.05 + 0.15 * j as f64;
                assert!(growth_bound(m + 0.15, t, 1.0) >= growth_bound(m, t, 1.0));
                assert!(growth_bound(m, t + 0.15, 1.0) >= growth_bound(m, t, 1.0));
            }
        }
    }

    #[test]
    fn bump_mass_scales_linearly_in_the_seminorm_bound() {
        let a = bump_mass(0.4, 0.5, 0.3, 1.0);
        let b = bump_mass(0.4, 0.5, 0.3, 2.0);
        assert!(a > 0.0);
        assert!((b - 2.0 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn bump_mass_shrinks_with_the_window() {
        let mut prev = bump_mass(0.4, 0.5, 0.8, 1.0);
        for k in 1..8 {
            let cur = bump_mass(0.4, 0.5, 0.8 * 0.5f64.powi(k), 1.0);
            assert!(cur < prev, "k={k}: {cur} !< {prev}");
            prev = cur;
        }
    }

    #[test]
    fn bump_mass_is_continuous_across_the_containment_branch() {
        // Support radius r0 = delta/4 = 0.25; the branch flips at rho = 0.125.
        let lo = bump_mass(0.125 - 1e-6, 0.5, 1.0, 1.0);
        let hi = bump_mass(0.125 + 1e-6, 0.5, 1.0, 1.0);
        assert!((hi - lo).abs() < 1e-4 * hi, "{lo} vs {hi}");
    }

    #[test]
    fn bump_mass_agrees_with_monte_carlo() {
        let (rho, alpha, delta, c) = (0.45, 0.5, 0.3, 2.0);
        let quad = bump_mass(rho, alpha, delta, c);
        let (mc, se) = bump_mass_mc(rho, alpha, delta, c, 200_000, 7);
        assert!(
            (quad * quad - mc).abs() <= 4.0 * se,
            "quad^2 {} vs mc {} +- {}",
            quad * quad,
            mc,
            se
        );
    }

    #[test]
    fn fields_that_beat_the_uniform_bound_carry_at_least_the_bump_mass() {
        // phi with a smaller slope dominates the comparison bump pointwise,
        // so its mass on the tangent disc must exceed bump_mass.
        let (rho, alpha, delta, c) = (0.45, 0.5, 0.5, 1.0);
        let dc = bump_mass(rho, alpha, delta, c);
        let peak = 0.5 * c * delta.powf(alpha);
        for slope_frac in [0.4, 0.7, 0.9] {
            let cp = slope_frac * c;
            let mut rng = Rng::seed_from_u64(11);
            let area = core::f64::consts::PI * rho * rho;
            let mut sum = 0.0f64;
            let mut k = 0;
            while k < 200_000 {
                let u = rng.range(-1.0, 1.0);
                let v = rng.range(-1.0, 1.0);
                if u * u + v * v > 1.0 {
                    continue;
                }
                let p = Point2::new(rho + rho * u, rho * v);
                let phi = (peak - cp * p.norm().powf(alpha)).max(0.0);
                sum += phi * phi;
                k += 1;
            }
            let mass = (area * sum / 200_000.0).sqrt();
            assert!(
                mass >= dc * 0.995,
                "slope {slope_frac}: mass {mass} below bump mass {dc}"
            );
        }
    }

    #[test]
    fn holder_seminorm_is_exact_for_a_root_distance_field() {
        let domain = DomainSpec::annulus(0.5, 2.0);
        let mesh = build_mesh(&domain, 8, 24);
        let v_star = mesh.vertices[50];
        let f: Vec<f64> = mesh.vertices.iter().map(|&p| p.dist(v_star).sqrt()).collect();
        // Pairs through v_star give |d^{1/2} - 0| / d^{1/2} = 1 exactly, and
        // sqrt is 1/2-Holder with constant exactly 1.
        let s = holder_seminorm(&mesh, &f, 0.5, 0.4);
        assert!((s - 1.0).abs() < 1e-12, "seminorm {s}");
    }

    #[test]
    fn holder_seminorm_hashing_matches_brute_force() {
        let domain = DomainSpec::annulus(0.5, 2.0);
        let mesh = build_mesh(&domain, 5, 16);
        let mut rng = Rng::seed_from_u64(3);
        let f: Vec<f64> = (0..mesh.n_vertices()).map(|_| rng.normal()).collect();
        for delta in [0.2, 0.5, 1.1] {
            let fast = holder_seminorm(&mesh, &f, 0.5, delta);
            let mut brute = 0.0f64;
            for v in 0..mesh.n_vertices() {
                for w in (v + 1)..mesh.n_vertices() {
                    let d = mesh.vertices[v].dist(mesh.vertices[w]);
                    if d > 0.0 && d < delta {
                        brute = brute.max((f[v] - f[w]).abs() / d.powf(0.5));
                    }
                }
            }
            assert_eq!(fast, brute, "delta {delta}");
        }
    }

    #[test]
    fn data_wall_constant_radial_and_modulated_values() {
        let domain = DomainSpec::annulus(0.5, 2.0);
        let field = FlowField::drift(1.0);
        // h = 1: inf -<n,q> = 2 on the outer wall, no derivative term.
        let c = data_wall_constant(&field, &domain, &CurveData::constant(1.0), 2048).unwrap();
        assert!((c.value - 0.5).abs() < 1e-12, "{}", c.value);
        assert!((c.inf_normal_speed - 2.0).abs() < 1e-12);
        assert!((c.sup_speed_ratio - 1.0).abs() < 1e-12);
        // h = cos(theta): |h| <= 1, |dh/ds| <= 1/2 on r = 2, so
        // 1/2 + (1 + 1) * 1/2 = 3/2.
        let h = CurveData {
            series: FourierSeries { constant: 0.0, cos_coeffs: vec![1.0], sin_coeffs: vec![] },
            window: None,
            scale: 1.0,
        };
        let c = data_wall_constant(&field, &domain, &h, 4096).unwrap();
        assert!((c.value - 1.5).abs() < 1e-6, "{}", c.value);
        // h = 0 keeps the margins but contributes nothing.
        let c = data_wall_constant(&field, &domain, &CurveData::zero(), 512).unwrap();
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn data_wall_constant_rejects_a_reversed_field() {
        // Data on the inner wall, where the radial drift flows inward, never
        // out: the backward flow cannot exit there.
        let inner = crate::geometry::RadialCurve::circle(0.5);
        let outer = crate::geometry::RadialCurve::circle(2.0);
        let domain = DomainSpec::new(inner, outer, false).unwrap();
        let field = FlowField::drift(1.0);
        match data_wall_constant(&field, &domain, &CurveData::constant(1.0), 256) {
            Err(CertifyError::NonTransversal { margin }) => assert!(margin < 0.0),
            other => panic!("expected NonTransversal, got {other:?}"),
        }
    }

    fn survey_fixture(c1: f64, t_star: f64, curv: f64, gap: f64) -> FlowSurvey {
        FlowSurvey {
            transversal: true,
            margin_data_wall: c1,
            margin_free_wall: c1,
            c1,
            t_star,
            sup_q: 2.0,
            sup_curv_q_data: curv,
            sup_curv_q_free: curv,
            wall_gap: gap,
            n_failures: 0,
            first_failure: None,
        }
    }

    #[test]
    fn margin_budget_reproduces_hand_worked_radii() {
        // Vanishing field bound: erosion = 2.386, budget 0.25/3.386 = 0.0738,
        // first dyadic below it is 2^-4.
        let s = survey_fixture(0.5, 4.0f64.ln(), 1.0, 1.5);
        let mb = margin_budget(&s, 1e-12).unwrap();
        assert_eq!(mb.delta1, 0.0625);
        // Unit annulus gap with M = 2.1: erosion 183.7, budget 2.7e-3 -> 2^-9.
        let s = survey_fixture(1.0, 2.0f64.ln(), 1.0, 1.0);
        let mb = margin_budget(&s, 2.1).unwrap();
        assert_eq!(mb.delta1, 0.5f64.powi(9));
    }

    #[test]
    fn margin_budget_fails_when_margins_vanish() {
        let s = survey_fixture(1e-9, 2.0, 50.0, 1.0);
        assert_eq!(margin_budget(&s, 60.0), Err(CertifyError::NoMargin));
    }

    #[test]
    fn field_bound_radial_value() {
        let domain = DomainSpec::annulus(0.5, 2.0);
        let mesh = build_mesh(&domain, 4, 12);
        // Pure drift: sup |q| = 2 on the outer wall, gradient mu = 1.
        let fb = field_bound(&mesh, None, 1.0, 2.0);
        assert!((fb.value - 2.1).abs() < 1e-12);
        // A constant elementwise part does not add slope.
        let fem = ElementwiseVectorField {
            per_triangle: vec![Point2::new(0.3, -0.1); mesh.triangles.len()],
        };
        let fb = field_bound(&mesh, Some(&fem), 1.0, 2.0);
        assert!((fb.value - 2.1).abs() < 1e-12);
        assert_eq!(fb.gradient_estimate, 1.0);
    }

    #[test]
    fn interaction_budget_arithmetic_and_domination() {
        // kappa0 = eps0 = lambda1 = 1: transformed matrix is [[1,1],[1,1]],
        // norm 2, equal to the budget sqrt(2) * sqrt(2); and 2 > 1/(2 gamma)
        // for gamma = 1, so that configuration must fail the check.
        assert!((interaction_budget(1.0, 1.0, 1.0) - 2.0).abs() < 1e-14);
        assert!(
            (weighted_2x2_norm([[1.0, 1.0], [1.0, 1.0]], 1.0) - 2.0).abs() < 1e-12
        );
        assert!(interaction_budget(1.0, 1.0, 1.0) > 0.5);

        let mut rng = Rng::seed_from_u64(99);
        for _ in 0..50 {
            let kappa0 = rng.range(0.1, 3.0);
            let eps0 = rng.range(0.01, 0.8);
            let lambda1 = rng.range(0.5, 20.0);
            let bound = [[kappa0 * eps0, kappa0 * eps0], [kappa0 / lambda1, kappa0 * eps0]];
            let m = [
                [bound[0][0] * rng.range(-1.0, 1.0), bound[0][1] * rng.range(-1.0, 1.0)],
                [bound[1][0] * rng.range(-1.0, 1.0), bound[1][1] * rng.range(-1.0, 1.0)],
            ];
            let norm = weighted_2x2_norm(m, lambda1 * eps0);
            let budget = interaction_budget(kappa0, eps0, lambda1);
            assert!(norm <= budget + 1e-9, "norm {norm} budget {budget}");
        }
    }

    #[test]
    fn certification_without_transversality_fails_on_the_first_check() {
        let domain = DomainSpec::annulus(0.5, 2.0);
        let mesh = build_mesh(&domain, 3, 8);
        let mask = wall_mask(&mesh, &[Wall::Inner, Wall::Outer]);
        let solver = Poisson::new(&mesh, mask);
        let data = BoundaryData::zero();
        let p = Problem::new(&mesh, &domain, 1.0, &data, &solver, TraceOptions::default());
        let fem = ElementwiseVectorField { per_triangle: vec![Point2::ZERO; mesh.triangles.len()] };
        let survey = FlowSurvey {
            transversal: false,
            margin_data_wall: -1.0,
            margin_free_wall: 0.5,
            c1: -1.0,
            t_star: 0.0,
            sup_q: 2.0,
            sup_curv_q_data: 1.0,
            sup_curv_q_free: 1.0,
            wall_gap: 1.5,
            n_failures: 3,
            first_failure: Some(Point2::new(1.0, 0.0)),
        };
        let cert = run_certification(&CertifyInputs {
            problem: &p,
            survey: &survey,
            fem: &fem,
            artifacts: None,
            c2: 10.0,
            n_probes: 2,
            seed: 1,
            config_hash: 0,
            ack_sampled_bounds: false,
        });
        assert_eq!(cert.verdict, Verdict::Failed);
        let first = cert.check("transversality").unwrap();
        assert!(!first.pass);
        assert!(cert.residuals.is_none());
        assert_eq!(cert.conclusion_bound, 0.0);
        // The partial ledger still carries what was measurable.
        assert!(cert.constant("M").is_some());
        assert!(cert.constant("delta2").is_none());
    }
}
