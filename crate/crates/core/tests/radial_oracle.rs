//! End-to-end checks against the radially symmetric closed form.
//!
//! On the annulus 0.5 <= |y| <= 2 with pure drift q = -x (mu = 1) and unit
//! vorticity data on the outer wall, everything is solvable by hand: the
//! backward path from y is y * e^t, the exit time is ln(2/|y|), the
//! transported field is 2/|y|, and the fixed-time flow map compresses areas
//! at the exact rate e^{2 mu t}. These tests pin the public pipeline to
//! those numbers.

use selfsim_core::boundary::CurveData;
use selfsim_core::geometry::{build_mesh, DomainSpec, TWO_PI};
use selfsim_core::rng::Rng;
use selfsim_core::transport::{
    flow_map, survey_flow, transport_field, FlowField, StreamMode, TimeDirection, TraceOptions,
};
use selfsim_core::Point2;

fn mesh_area(mesh: &selfsim_core::geometry::Mesh) -> f64 {
    let mut area = 0.0;
    for tri in &mesh.triangles {
        let a = mesh.vertices[tri[0]];
        let b = mesh.vertices[tri[1]];
        let c = mesh.vertices[tri[2]];
        area += 0.5 * ((b - a).cross(c - a)).abs();
    }
    area
}

#[test]
fn mesh_area_converges_to_the_annulus_area() {
    // pi (2^2 - 0.5^2) = 3.75 pi. The polygonal deficit is O(h^2) from the
    // boundary chords alone, so one refinement should cut it by ~4.
    let domain = DomainSpec::annulus(0.5, 2.0);
    let exact = 3.75 * core::f64::consts::PI;
    let coarse = (exact - mesh_area(&build_mesh(&domain, 8, 24))).abs();
    let fine = (exact - mesh_area(&build_mesh(&domain, 16, 48))).abs();
    assert!(fine < exact * 5e-3, "fine-mesh area off by {fine:.3e}");
    assert!(fine < 0.35 * coarse, "no quadratic decay: {coarse:.3e} -> {fine:.3e}");
}

#[test]
fn transport_reproduces_the_reciprocal_radius_profile() {
    let domain = DomainSpec::annulus(0.5, 2.0);
    let mesh = build_mesh(&domain, 10, 30);
    let field = FlowField::drift(1.0);
    let h = CurveData::constant(1.0);
    let opts = TraceOptions { tol: 1e-10, ..Default::default() };

    let sol = transport_field(&mesh, &field, &domain, &h, &opts).expect("radial transport");
    let mut worst = 0.0f64;
    for (v, y) in mesh.vertices.iter().enumerate() {
        let exact = 2.0 / y.norm();
        worst = worst.max((sol.omega.values[v] - exact).abs() / exact);
    }
    assert!(worst < 1e-8, "worst relative transport error {worst:.3e}");
    // Longest exit time is from the inner wall: ln(2 / 0.5).
    assert!((sol.max_tau - 4.0f64.ln()).abs() < 1e-8);
}

#[test]
fn survey_recovers_the_handworked_margins() {
    let domain = DomainSpec::annulus(0.5, 2.0);
    let mesh = build_mesh(&domain, 10, 30);
    let field = FlowField::drift(1.0);
    let s = survey_flow(&mesh, &field, &domain, &TraceOptions::default());
    assert!(s.transversal);
    assert!((s.margin_data_wall - 2.0).abs() < 1e-9);
    assert!((s.margin_free_wall - 0.5).abs() < 1e-9);
    assert!((s.c1 - 0.5).abs() < 1e-9);
    assert!((s.t_star - 4.0f64.ln()).abs() < 1e-7);
    assert!((s.sup_q - 2.0).abs() < 1e-9);
    assert!((s.wall_gap - 1.5).abs() < 1e-9);
}

/// 2x2 determinant of the flow-map Jacobian by central differences.
fn fd_det(field: &FlowField, domain: &DomainSpec, y: Point2, t: f64) -> f64 {
    let eps = 1e-4;
    let tol = 1e-12;
    let mut cols = [Point2::ZERO; 2];
    for (i, e) in [Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)].iter().enumerate() {
        let plus = flow_map(field, domain, y + *e * eps, TimeDirection::BackwardFlow, t, tol)
            .expect("flow map left the domain");
        let minus = flow_map(field, domain, y - *e * eps, TimeDirection::BackwardFlow, t, tol)
            .expect("flow map left the domain");
        cols[i] = (plus - minus) * (0.5 / eps);
    }
    cols[0].cross(cols[1])
}

#[test]
fn flow_map_compresses_at_the_divergence_rate() {
    // Backward flow of any divergence-free field plus the -mu x drift
    // expands areas at exactly e^{2 mu t}, whatever the rotational part
    // does. Checked for the pure drift and for drift plus smooth
    // closed-form modes.
    let domain = DomainSpec::annulus(0.5, 2.0);
    let mu = 1.0;
    let modes = [
        StreamMode { k: 2, a: 0.7, b: -0.4, r0: 0.55, r1: 1.95 },
        StreamMode { k: 3, a: -0.5, b: 0.8, r0: 0.6, r1: 1.9 },
    ];
    let drift = FlowField::drift(mu);
    let swirl = FlowField { mesh: None, fem: None, mu, modes: &modes, mode_scale: 0.08 };

    let mut rng = Rng::seed_from_u64(0x5eed_d137);
    for _ in 0..25 {
        let r = 0.75 + 0.45 * rng.uniform();
        let th = TWO_PI * rng.uniform();
        let y = Point2::new(r * th.cos(), r * th.sin());
        let t = 0.1 + 0.15 * rng.uniform();
        let exact = (2.0 * mu * t).exp();
        for field in [&drift, &swirl] {
            let det = fd_det(field, &domain, y, t);
            let rel = (det - exact).abs() / exact;
            assert!(rel < 1e-6, "det {det:.9} vs {exact:.9} at y=({}, {}), t={t}", y.x, y.y);
        }
    }
}
