//! Characteristic tracing for the transport half of the problem.
//!
//! The advecting field is q(x) = (perp gradient of the stream function)
//! - mu x. The stream part is elementwise constant (P1), the -mu x part is
//! closed form, so within every triangle Dq = -mu I exactly. Two things
//! follow and are exploited hard here:
//!
//!  * the flow map has Jacobian determinant exp(-2 mu t) globally,
//!  * the sensitivity of a trace to a field perturbation obeys
//!    w' = mu w - qt(z(s)) along the backward path, which integrates in
//!    closed form per mesh element (Duhamel with a constant integrand).
//!
//! Vorticity values come from tracing backward until the path leaves the
//! domain: crossing the data wall at time tau and point xi gives
//! omega(y) = exp(tau) h(xi). Wall crossings are detected on the analytic
//! boundary curves (not the polygonal mesh boundary) and resolved by
//! bisection over single embedded-RK steps from the last interior anchor.

use alloc::vec;
use alloc::vec::Vec;
// Needed for float math without std; spuriously "unused" when a test
// build links std into the graph.
#[allow(unused_imports)]
use num_traits::Float;

use crate::boundary::CurveData;
use crate::elliptic::ElementwiseVectorField;
use crate::geometry::{DomainSpec, Mesh, Wall, TWO_PI};
use crate::vec2::Point2;

#[derive(Clone, Debug, PartialEq)]
pub enum TransportError {
    /// A backward path left through the wall that carries no data.
    ExitedFreeWall { from: Point2 },
    /// A path ran past the time budget without leaving the domain.
    TimedOut { from: Point2 },
    /// The field vanished along the path.
    Stagnated { from: Point2, at: Point2 },
}

impl core::fmt::Display for TransportError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TransportError::ExitedFreeWall { from } => {
                write!(f, "backward path from ({}, {}) exited through the free wall", from.x, from.y)
            }
            TransportError::TimedOut { from } => {
                write!(f, "backward path from ({}, {}) exceeded the time budget", from.x, from.y)
            }
            TransportError::Stagnated { from, at } => write!(
                f,
                "field stagnated along the path from ({}, {}) at ({}, {})",
                from.x, from.y, at.x, at.y
            ),
        }
    }
}

/// Divergence-free closed-form perturbation: the rotated gradient of
/// psi = g(r) (a cos k theta + b sin k theta) with
/// g(r) = ((r - r0)(r1 - r))^2 / ((r1 - r0)/2)^4 on [r0, r1], zero outside.
#[derive(Clone, Copy, Debug)]
pub struct StreamMode {
    pub k: u32,
    pub a: f64,
    pub b: f64,
    pub r0: f64,
    pub r1: f64,
}

impl StreamMode {
    fn g(&self, r: f64) -> (f64, f64) {
        if r <= self.r0 || r >= self.r1 {
            return (0.0, 0.0);
        }
        let norm = ((self.r1 - self.r0) * 0.5).powi(4);
        let u = r - self.r0;
        let v = self.r1 - r;
        ((u * v) * (u * v) / norm, 2.0 * u * v * (v - u) / norm)
    }

    pub fn stream(&self, p: Point2) -> f64 {
        let r = p.norm();
        let th = p.angle();
        let (g, _) = self.g(r);
        let kf = self.k as f64;
        g * (self.a * (kf * th).cos() + self.b * (kf * th).sin())
    }

    /// The rotated gradient of the stream function.
    pub fn eval(&self, p: Point2) -> Point2 {
        let r = p.norm();
        if r <= self.r0 || r >= self.r1 {
            return Point2::ZERO;
        }
        let th = p.angle();
        let (g, dg) = self.g(r);
        let kf = self.k as f64;
        let t = self.a * (kf * th).cos() + self.b * (kf * th).sin();
        let dt = kf * (-self.a * (kf * th).sin() + self.b * (kf * th).cos());
        let e_r = Point2::new(th.cos(), th.sin());
        let e_th = Point2::new(-th.sin(), th.cos());
        // perp grad psi = (d psi/dr) e_theta - (1/r)(d psi/dtheta) e_r
        e_th * (dg * t) - e_r * (g * dt / r)
    }
}

/// The advecting field: optional elementwise (FEM) part, the exact -mu x
/// drift, and optional closed-form modes (scaled; used for perturbation
/// studies). The FEM part is evaluated with clamping so the field extends
/// continuously a hair beyond the polygonal mesh boundary.
#[derive(Clone, Copy)]
pub struct FlowField<'a> {
    pub mesh: Option<&'a Mesh>,
    pub fem: Option<&'a ElementwiseVectorField>,
    pub mu: f64,
    pub modes: &'a [StreamMode],
    pub mode_scale: f64,
}

impl<'a> FlowField<'a> {
    /// Pure drift q = -mu x.
    pub fn drift(mu: f64) -> Self {
        FlowField { mesh: None, fem: None, mu, modes: &[], mode_scale: 0.0 }
    }

    pub fn with_fem(mesh: &'a Mesh, fem: &'a ElementwiseVectorField, mu: f64) -> Self {
        FlowField { mesh: Some(mesh), fem: Some(fem), mu, modes: &[], mode_scale: 0.0 }
    }

    pub fn eval(&self, p: Point2, hint: &mut Option<usize>) -> Point2 {
        let mut q = p * (-self.mu);
        if let (Some(mesh), Some(fem)) = (self.mesh, self.fem) {
            let (t, _) = mesh.locate_clamped(p, *hint);
            *hint = Some(t);
            q += fem.per_triangle[t];
        }
        if self.mode_scale != 0.0 {
            for m in self.modes {
                q += m.eval(p) * self.mode_scale;
            }
        }
        q
    }

    /// q with the elementwise part read from a caller-chosen triangle. The
    /// one-sided value matters on element edges, where the FEM part jumps.
    pub fn eval_in_triangle(&self, p: Point2, t: usize) -> Point2 {
        let mut q = p * (-self.mu);
        if let Some(fem) = self.fem {
            q += fem.per_triangle[t];
        }
        if self.mode_scale != 0.0 {
            for m in self.modes {
                q += m.eval(p) * self.mode_scale;
            }
        }
        q
    }
}

/// Which way to run the clock. Backward traces (the default use) follow
/// z' = -q; the vorticity representation lives on backward exits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeDirection {
    ForwardFlow,
    BackwardFlow,
}

#[derive(Clone, Copy, Debug)]
pub struct TraceOptions {
    /// Error-per-unit-time target of the embedded RK pair.
    pub tol: f64,
    /// Time budget; reaching it is the Timeout outcome.
    pub t_max: f64,
    pub max_steps: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions { tol: 1e-9, t_max: 100.0, max_steps: 200_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Outcome {
    /// Left the domain through `wall` at path time `tau`; `xi` is the exit
    /// point projected onto the analytic wall, at angle `theta`.
    Exit { wall: Wall, tau: f64, xi: Point2, theta: f64 },
    Timeout,
    Stagnation { at: Point2 },
}

#[derive(Clone, Copy, Debug)]
pub struct PathNode {
    pub t: f64,
    pub x: Point2,
    /// Path velocity dx/dt at x (already sign-adjusted for the direction).
    pub v: Point2,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub nodes: Vec<PathNode>,
    pub outcome: Outcome,
}

/// Signed crossing indicator: positive beyond the wall, negative inside.
pub fn wall_excess(domain: &DomainSpec, wall: Wall, p: Point2) -> f64 {
    match wall {
        Wall::Outer => p.norm() - domain.outer.radius(p.angle()),
        Wall::Inner => domain.inner.radius(p.angle()) - p.norm(),
    }
}

/// d/dt of `wall_excess` along a motion x' = v (analytic, valid off the
/// origin). Used to decide immediate exit when a trace starts on a wall.
pub fn wall_excess_rate(domain: &DomainSpec, wall: Wall, x: Point2, v: Point2) -> f64 {
    let r = x.norm();
    let radial = x.dot(v) / r;
    let theta_dot = x.cross(v) / (r * r);
    match wall {
        Wall::Outer => radial - domain.outer.radius_d1(x.angle()) * theta_dot,
        Wall::Inner => domain.inner.radius_d1(x.angle()) * theta_dot - radial,
    }
}

fn project_to_wall(domain: &DomainSpec, wall: Wall, p: Point2) -> (Point2, f64) {
    let theta = p.angle();
    let r = domain.wall(wall).radius(theta);
    (p * (r / p.norm()), theta)
}

// Dormand-Prince 5(4) tableau.
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] =
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
const B5: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct StepResult {
    y5: Point2,
    err: f64,
    k_last: Point2,
}

fn dopri5_step<F: FnMut(Point2) -> Point2>(f: &mut F, x: Point2, k1: Point2, h: f64) -> StepResult {
    let k2 = f(x + (k1 * A2[0]) * h);
    let k3 = f(x + (k1 * A3[0] + k2 * A3[1]) * h);
    let k4 = f(x + (k1 * A4[0] + k2 * A4[1] + k3 * A4[2]) * h);
    let k5 = f(x + (k1 * A5[0] + k2 * A5[1] + k3 * A5[2] + k4 * A5[3]) * h);
    let k6 = f(x + (k1 * A6[0] + k2 * A6[1] + k3 * A6[2] + k4 * A6[3] + k5 * A6[4]) * h);
    let y5 = x + (k1 * B5[0] + k3 * B5[2] + k4 * B5[3] + k5 * B5[4] + k6 * B5[5]) * h;
    let k7 = f(y5);
    let y4 = x
        + (k1 * B4[0] + k3 * B4[2] + k4 * B4[3] + k5 * B4[4] + k6 * B4[5] + k7 * B4[6]) * h;
    StepResult { y5, err: (y5 - y4).norm(), k_last: k7 }
}

/// Integrate from `y` until the path leaves the domain or the budget runs
/// out. Every accepted step is recorded (with velocities) so the path can
/// be re-interpolated later.
pub fn trace(
    field: &FlowField,
    domain: &DomainSpec,
    y: Point2,
    dir: TimeDirection,
    opts: &TraceOptions,
) -> Trace {
    let sign = match dir {
        TimeDirection::ForwardFlow => 1.0,
        TimeDirection::BackwardFlow => -1.0,
    };
    let mut hint: Option<usize> = None;
    let mut f = |p: Point2| field.eval(p, &mut hint) * sign;

    let mut nodes = Vec::new();
    let mut x = y;
    let mut t = 0.0;
    let mut k1 = f(x);
    nodes.push(PathNode { t, x, v: k1 });

    // Start on a wall, moving out: immediate exit.
    for wall in [Wall::Outer, Wall::Inner] {
        let e = wall_excess(domain, wall, x);
        if e >= -1e-11 && wall_excess_rate(domain, wall, x, k1) > 1e-13 {
            let (xi, theta) = project_to_wall(domain, wall, x);
            return Trace { nodes, outcome: Outcome::Exit { wall, tau: 0.0, xi, theta } };
        }
    }

    // Never step so far that a wall could be jumped over entirely.
    let gap = {
        let mut g = f64::INFINITY;
        for s in 0..512 {
            let th = TWO_PI * s as f64 / 512.0;
            g = g.min(domain.outer.radius(th) - domain.inner.radius(th));
        }
        g.min(2.0 * domain.inner.min_radius())
    };

    let mut h = 1e-4;
    for _ in 0..opts.max_steps {
        let speed = k1.norm();
        if speed < 1e-12 {
            return Trace { nodes, outcome: Outcome::Stagnation { at: x } };
        }
        if t >= opts.t_max - 1e-15 {
            return Trace { nodes, outcome: Outcome::Timeout };
        }
        h = h.min(0.5 * gap / speed).min(opts.t_max - t).max(1e-14);
        let step = dopri5_step(&mut f, x, k1, h);
        if step.err > opts.tol * h && h > 1e-13 {
            h *= (0.9 * (opts.tol * h / step.err).powf(0.2)).max(0.2);
            continue;
        }
        // Accepted. Did we cross a wall?
        let mut crossing: Option<(Wall, f64)> = None;
        for wall in [Wall::Outer, Wall::Inner] {
            if wall_excess(domain, wall, step.y5) > 0.0 {
                // Bisect on single fixed steps from the anchor.
                let mut lo = 0.0f64;
                let mut hi = h;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let probe = dopri5_step(&mut f, x, k1, mid).y5;
                    if wall_excess(domain, wall, probe) > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                if crossing.map_or(true, |(_, s)| hi < s) {
                    crossing = Some((wall, hi));
                }
            }
        }
        if let Some((wall, s)) = crossing {
            let hit = dopri5_step(&mut f, x, k1, s);
            let (xi, theta) = project_to_wall(domain, wall, hit.y5);
            nodes.push(PathNode { t: t + s, x: hit.y5, v: f(hit.y5) });
            return Trace { nodes, outcome: Outcome::Exit { wall, tau: t + s, xi, theta } };
        }
        t += h;
        x = step.y5;
        k1 = step.k_last;
        nodes.push(PathNode { t, x, v: k1 });
        let grow = if step.err > 0.0 { (0.9 * (opts.tol * h / step.err).powf(0.2)).min(5.0) } else { 5.0 };
        h *= grow.max(0.2);
        h = h.min(0.25);
    }
    Trace { nodes, outcome: Outcome::Timeout }
}

/// Position of the backward/forward path at time s (cubic Hermite between
/// recorded nodes).
pub fn path_position(trace: &Trace, s: f64) -> Point2 {
    let nodes = &trace.nodes;
    if s <= nodes[0].t {
        return nodes[0].x;
    }
    let last = nodes.len() - 1;
    if s >= nodes[last].t {
        return nodes[last].x;
    }
    let mut lo = 0;
    let mut hi = last;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if nodes[mid].t <= s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = &nodes[lo];
    let b = &nodes[hi];
    let dt = b.t - a.t;
    if dt <= 0.0 {
        return a.x;
    }
    let u = (s - a.t) / dt;
    let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
    let h10 = u * (1.0 - u) * (1.0 - u);
    let h01 = u * u * (3.0 - 2.0 * u);
    let h11 = u * u * (u - 1.0);
    a.x * h00 + a.v * (h10 * dt) + b.x * h01 + b.v * (h11 * dt)
}

/// Run the flow for a fixed time (no exit allowed) and return the endpoint.
pub fn flow_map(
    field: &FlowField,
    domain: &DomainSpec,
    y: Point2,
    dir: TimeDirection,
    t: f64,
    tol: f64,
) -> Result<Point2, TransportError> {
    let opts = TraceOptions { tol, t_max: t, ..Default::default() };
    let tr = trace(field, domain, y, dir, &opts);
    match tr.outcome {
        Outcome::Timeout => Ok(tr.nodes.last().unwrap().x),
        Outcome::Exit { .. } => Err(TransportError::ExitedFreeWall { from: y }),
        Outcome::Stagnation { at } => Err(TransportError::Stagnated { from: y, at }),
    }
}

// ---------------------------------------------------------------------------
// Sensitivity of the exit data to a field perturbation.
// ---------------------------------------------------------------------------

/// One maximal sub-interval of the path on which the elementwise part of a
/// perturbation is constant. `tri` is None for meshless fields.
#[derive(Clone, Copy, Debug)]
pub struct Piece {
    pub s0: f64,
    pub s1: f64,
    pub tri: Option<usize>,
    /// Path positions at the 4-point Gauss nodes of [s0, s1].
    pub gl_x: [Point2; 4],
}

#[derive(Clone, Debug)]
pub struct TracePieces {
    pub pieces: Vec<Piece>,
    pub tau: f64,
}

const GL_NODES: [f64; 4] = [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526];
const GL_WEIGHTS: [f64; 4] = [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538];

fn gl_positions(trace: &Trace, s0: f64, s1: f64) -> [Point2; 4] {
    let mid = 0.5 * (s0 + s1);
    let half = 0.5 * (s1 - s0);
    [
        path_position(trace, mid + half * GL_NODES[0]),
        path_position(trace, mid + half * GL_NODES[1]),
        path_position(trace, mid + half * GL_NODES[2]),
        path_position(trace, mid + half * GL_NODES[3]),
    ]
}

/// Split the recorded path into pieces on which the containing triangle is
/// constant. Pure-analytic perturbations only need the Gauss nodes, so a
/// None mesh yields one piece per sampling interval.
pub fn decompose_path(trace: &Trace, mesh: Option<&Mesh>) -> TracePieces {
    let tau = trace.nodes.last().map(|n| n.t).unwrap_or(0.0);
    let mut pieces = Vec::new();
    if tau <= 0.0 {
        return TracePieces { pieces, tau };
    }
    let min_edge = mesh.map(|m| {
        let mut e = f64::INFINITY;
        for tri in &m.triangles {
            for k in 0..3 {
                e = e.min(m.vertices[tri[k]].dist(m.vertices[tri[(k + 1) % 3]]));
            }
        }
        e
    });
    let mut hint: Option<usize> = None;
    let mut tri_at = |s: f64| -> Option<usize> {
        mesh.map(|m| {
            let (t, _) = m.locate_clamped(path_position(trace, s), hint);
            hint = Some(t);
            t
        })
    };
    for w in trace.nodes.windows(2) {
        let (t0, t1) = (w[0].t, w[1].t);
        if t1 <= t0 {
            continue;
        }
        // Sample finely enough that no element is skipped.
        let m_sub = match min_edge {
            Some(e) => {
                let chord = w[1].x.dist(w[0].x);
                ((chord / (0.4 * e)).ceil() as usize).max(1)
            }
            None => 1,
        };
        for k in 0..m_sub {
            let a = t0 + (t1 - t0) * k as f64 / m_sub as f64;
            let b = t0 + (t1 - t0) * (k + 1) as f64 / m_sub as f64;
            split_constant(trace, &mut tri_at, a, b, 0, &mut pieces);
        }
    }
    TracePieces { pieces, tau }
}

fn split_constant(
    trace: &Trace,
    tri_at: &mut impl FnMut(f64) -> Option<usize>,
    a: f64,
    b: f64,
    depth: usize,
    out: &mut Vec<Piece>,
) {
    let ta = tri_at(a + 1e-15 * (b - a));
    let tb = tri_at(b - 1e-15 * (b - a));
    if ta == tb || depth > 24 || b - a < 1e-13 {
        if ta == tb && depth <= 24 {
            let tm = tri_at(0.5 * (a + b));
            if tm != ta && b - a > 1e-13 {
                split_constant(trace, tri_at, a, 0.5 * (a + b), depth + 1, out);
                split_constant(trace, tri_at, 0.5 * (a + b), b, depth + 1, out);
                return;
            }
        }
        out.push(Piece { s0: a, s1: b, tri: ta, gl_x: gl_positions(trace, a, b) });
        return;
    }
    // Bisect the crossing.
    let mut lo = a;
    let mut hi = b;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if tri_at(mid) == ta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let cut = 0.5 * (lo + hi);
    split_constant(trace, tri_at, a, cut, depth + 1, out);
    split_constant(trace, tri_at, cut, b, depth + 1, out);
}

/// A perturbation direction of the field.
pub enum TangentDirection<'a> {
    /// Elementwise-constant (a P1 rotated gradient); integrated exactly.
    Elementwise(&'a ElementwiseVectorField),
    /// Arbitrary smooth field; Gauss quadrature per piece.
    Analytic(&'a dyn Fn(Point2) -> Point2),
}

/// w(tau) = - int_0^tau exp(mu (tau - s)) qt(z(s)) ds, propagated piece by
/// piece: the first-order displacement of the backward path endpoint when
/// the field gains an infinitesimal qt. Within a piece Dq = -mu I, so
/// w' = mu w - qt(z). Where the path crosses into the next element the base
/// field itself jumps and w must jump with it: the perturbed path reaches
/// the shared edge at a shifted time, and the naive integral charges that
/// shift with the wrong side's velocity.
pub fn tangent_endpoint(
    field: &FlowField,
    tr: &Trace,
    pieces: &TracePieces,
    dir: &TangentDirection,
) -> Point2 {
    let mu = field.mu;
    let mut w = Point2::ZERO;
    for (i, piece) in pieces.pieces.iter().enumerate() {
        let grow = (mu * (piece.s1 - piece.s0)).exp();
        w = w * grow;
        match dir {
            TangentDirection::Elementwise(qt) => {
                let tri = piece.tri.expect("elementwise direction requires a meshed path");
                // Exact: int exp(mu (s1 - s)) ds over [s0, s1].
                w -= qt.per_triangle[tri] * ((grow - 1.0) / mu);
            }
            TangentDirection::Analytic(f) => {
                let half = 0.5 * (piece.s1 - piece.s0);
                let mid = 0.5 * (piece.s0 + piece.s1);
                for g in 0..4 {
                    let s = mid + half * GL_NODES[g];
                    w -= f(piece.gl_x[g]) * (GL_WEIGHTS[g] * half * (mu * (piece.s1 - s)).exp());
                }
            }
        }
        if let Some(next) = pieces.pieces.get(i + 1) {
            w = crossing_transfer(field, tr, piece, next, w);
        }
    }
    w
}

/// Sensitivity transfer across an element edge where the base field jumps:
/// w+ = w- + (V+ - V-) (n.w-)/(n.V-), with V = -q the backward velocity and
/// n a normal of the shared edge (its scale and sign cancel).
fn crossing_transfer(field: &FlowField, tr: &Trace, prev: &Piece, next: &Piece, w: Point2) -> Point2 {
    let (Some(mesh), Some(fem)) = (field.mesh, field.fem) else { return w };
    let (Some(a), Some(b)) = (prev.tri, next.tri) else { return w };
    if a == b {
        return w;
    }
    let tb = mesh.triangles[b];
    let mut shared = [usize::MAX; 2];
    let mut count = 0;
    for &v in &mesh.triangles[a] {
        if tb.contains(&v) {
            if count < 2 {
                shared[count] = v;
            }
            count += 1;
        }
    }
    if count != 2 {
        // Only a vertex in common: no edge normal, and a measure-zero event.
        return w;
    }
    let n = (mesh.vertices[shared[1]] - mesh.vertices[shared[0]]).perp();
    let zc = path_position(tr, prev.s1);
    let v_minus = -field.eval_in_triangle(zc, a);
    let jump = fem.per_triangle[a] - fem.per_triangle[b];
    let denom = n.dot(v_minus);
    if denom.abs() <= 1e-9 * n.norm() * v_minus.norm() {
        // Grazing crossing; the transfer is ill-defined there and the event
        // itself is fragile, so leave w alone rather than amplify noise.
        return w;
    }
    w + jump * (n.dot(w) / denom)
}

#[derive(Clone, Copy, Debug)]
pub struct TangentExit {
    pub w: Point2,
    pub tau_dot: f64,
    pub xi_dot: Point2,
    pub omega_dot: f64,
}

/// First-order response of (tau, xi, omega) to the field perturbation, for
/// a backward trace that exits through the data wall.
pub fn tangent_exit(
    field: &FlowField,
    domain: &DomainSpec,
    h_data: &CurveData,
    tr: &Trace,
    pieces: &TracePieces,
    dir: &TangentDirection,
) -> TangentExit {
    let (wall, tau, xi, theta) = match tr.outcome {
        Outcome::Exit { wall, tau, xi, theta } => (wall, tau, xi, theta),
        _ => panic!("tangent_exit needs an exiting trace"),
    };
    let w = tangent_endpoint(field, tr, pieces, dir);
    // The exit-side field, read from the triangle the path arrived through:
    // xi sits on the polygonal boundary where locate could pick a neighbor.
    let q = match pieces.pieces.last().and_then(|p| p.tri) {
        Some(t) => field.eval_in_triangle(xi, t),
        None => field.eval(xi, &mut None),
    };
    let n = domain.outward_normal(wall, theta);
    let tau_dot = n.dot(w) / n.dot(q);
    let xi_dot = w - q * tau_dot;
    let t_hat = domain.wall(wall).unit_tangent(theta);
    let h_val = h_data.value(theta);
    let dh_ds = h_data.deriv_arclength(domain.wall(wall), theta);
    let omega_dot = tau.exp() * (tau_dot * h_val + dh_ds * xi_dot.dot(t_hat));
    TangentExit { w, tau_dot, xi_dot, omega_dot }
}

// ---------------------------------------------------------------------------
// The trace-back operator and the flow survey.
// ---------------------------------------------------------------------------

/// Vorticity by backward tracing from every mesh vertex. Traces are kept
/// (they are reused for Jacobian assembly).
#[derive(Clone, Debug)]
pub struct TransportSolution {
    pub omega: crate::elliptic::ScalarField,
    pub traces: Vec<Trace>,
    pub max_tau: f64,
}

pub fn transport_field(
    mesh: &Mesh,
    field: &FlowField,
    domain: &DomainSpec,
    h_data: &CurveData,
    opts: &TraceOptions,
) -> Result<TransportSolution, TransportError> {
    let data_wall = domain.data_wall();
    let n = mesh.n_vertices();
    let mut omega = vec![0.0; n];
    let mut traces = Vec::with_capacity(n);
    let mut max_tau = 0.0f64;
    for v in 0..n {
        let y = mesh.vertices[v];
        let tr = trace(field, domain, y, TimeDirection::BackwardFlow, opts);
        match tr.outcome {
            Outcome::Exit { wall, tau, theta, .. } if wall == data_wall => {
                omega[v] = tau.exp() * h_data.value(theta);
                max_tau = max_tau.max(tau);
            }
            Outcome::Exit { .. } => return Err(TransportError::ExitedFreeWall { from: y }),
            Outcome::Timeout => return Err(TransportError::TimedOut { from: y }),
            Outcome::Stagnation { at } => return Err(TransportError::Stagnated { from: y, at }),
        }
        traces.push(tr);
    }
    Ok(TransportSolution { omega: crate::elliptic::ScalarField { values: omega }, traces, max_tau })
}

/// Sampled facts about one field on one domain: wall transversality
/// margins, speed bounds, exit-time horizon. Everything the downstream
/// constants need from the flow, in one sweep.
#[derive(Clone, Debug)]
pub struct FlowSurvey {
    /// Every backward path from the seed set exits the data wall, and the
    /// wall margins are strictly positive with the right signs.
    pub transversal: bool,
    /// inf over the data wall of -<n, q> (backward flow must leave here).
    pub margin_data_wall: f64,
    /// inf over the free wall of <n, q> (forward flow leaves here).
    pub margin_free_wall: f64,
    /// min of the two margins.
    pub c1: f64,
    /// Longest backward exit time over the seed set.
    pub t_star: f64,
    /// sup |q| over the sampled domain and walls (raw, uninflated).
    pub sup_q: f64,
    /// sup over the data wall of |curvature| * |q|.
    pub sup_curv_q_data: f64,
    /// Same quantity on the free wall.
    pub sup_curv_q_free: f64,
    /// min over angles of the wall-to-wall gap (corridor half-width x2).
    pub wall_gap: f64,
    pub n_failures: usize,
    pub first_failure: Option<Point2>,
}

pub fn survey_flow(
    mesh: &Mesh,
    field: &FlowField,
    domain: &DomainSpec,
    opts: &TraceOptions,
) -> FlowSurvey {
    let data_wall = domain.data_wall();
    let free_wall = data_wall.opposite();
    let mut hint = None;

    let n_wall = 2048;
    let mut margin_data = f64::INFINITY;
    let mut margin_free = f64::INFINITY;
    let mut sup_q = 0.0f64;
    let mut sup_curv_q = 0.0f64;
    let mut sup_curv_q_free = 0.0f64;
    let mut wall_gap = f64::INFINITY;
    for s in 0..n_wall {
        let th = TWO_PI * s as f64 / n_wall as f64;
        wall_gap = wall_gap.min(domain.outer.radius(th) - domain.inner.radius(th));
        for wall in [Wall::Inner, Wall::Outer] {
            let p = domain.wall(wall).point(th);
            let q = field.eval(p, &mut hint);
            sup_q = sup_q.max(q.norm());
            let nq = domain.outward_normal(wall, th).dot(q);
            if wall == data_wall {
                margin_data = margin_data.min(-nq);
                sup_curv_q = sup_curv_q.max(domain.wall(wall).curvature(th).abs() * q.norm());
            } else {
                let _ = free_wall;
                margin_free = margin_free.min(nq);
                sup_curv_q_free =
                    sup_curv_q_free.max(domain.wall(wall).curvature(th).abs() * q.norm());
            }
        }
    }
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle_points(t);
        let centroid = (a + b + c) * (1.0 / 3.0);
        sup_q = sup_q.max(field.eval(centroid, &mut hint).norm());
    }
    for v in 0..mesh.n_vertices() {
        sup_q = sup_q.max(field.eval(mesh.vertices[v], &mut hint).norm());
    }

    let mut t_star = 0.0f64;
    let mut n_failures = 0;
    let mut first_failure = None;
    let mut seeds: Vec<Point2> = mesh.vertices.clone();
    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle_points(t);
        seeds.push((a + b + c) * (1.0 / 3.0));
    }
    for &y in &seeds {
        let tr = trace(field, domain, y, TimeDirection::BackwardFlow, opts);
        match tr.outcome {
            Outcome::Exit { wall, tau, .. } if wall == data_wall => t_star = t_star.max(tau),
            _ => {
                n_failures += 1;
                if first_failure.is_none() {
                    first_failure = Some(y);
                }
            }
        }
    }
    let transversal = n_failures == 0 && margin_data > 0.0 && margin_free > 0.0;
    FlowSurvey {
        transversal,
        margin_data_wall: margin_data,
        margin_free_wall: margin_free,
        c1: margin_data.min(margin_free),
        t_star,
        sup_q,
        sup_curv_q_data: sup_curv_q,
        sup_curv_q_free,
        wall_gap,
        n_failures,
        first_failure,
    }
}
