//! Acceptance gate: one test per shipped accuracy/contract criterion.
//!
//! Each test prints a single `criterion N ... PASS/FAIL` line with the
//! measured numbers before asserting, so a red run shows the whole
//! scoreboard at once under `--nocapture`. Criteria 1-8 and 10 drive the
//! library against closed-form oracles; 9 and 11 run the real binary on the
//! shipped fixtures and inspect its artifacts.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use selfsim_cli::config;
use selfsim_cli::output::RunReport;
use selfsim_core::boundary::{BoundaryData, CurveData};
use selfsim_core::certify::{
    audit_tangent_bound, bump_mass, bump_mass_mc, holder_seminorm, interaction_budget,
    weighted_2x2_norm, Certificate,
};
use selfsim_core::elliptic::{
    estimate_tail_norm, lowest_eigenpairs, mass_matrix, wall_mask, Poisson, ScalarField,
};
use selfsim_core::galerkin::{apply_lambda, Problem};
use selfsim_core::geometry::{build_mesh, disc_mesh, DomainSpec, Mesh, Wall, TWO_PI};
use selfsim_core::linalg::CsrMatrix;
use selfsim_core::rng::Rng;
use selfsim_core::transport::{
    decompose_path, flow_map, survey_flow, tangent_exit, trace, FlowField, Outcome, StreamMode,
    TangentDirection, TimeDirection, TraceOptions,
};
use selfsim_core::Point2;

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn radial_problem_data() -> BoundaryData {
    BoundaryData {
        stream_inner: CurveData::zero(),
        stream_outer: CurveData::zero(),
        vorticity: CurveData::constant(1.0),
    }
}

fn l2_norm(mass: &CsrMatrix, f: &[f64], scratch: &mut [f64]) -> f64 {
    mass.matvec(f, scratch);
    f.iter().zip(scratch.iter()).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
}

#[test]
fn criterion_01_radial_transport_accuracy_and_runtime() {
    let start = Instant::now();
    let domain = DomainSpec::annulus(0.5, 2.0);
    let mesh = build_mesh(&domain, 30, 160); // h = 0.05 radially and along the walls
    let solver = Poisson::new(&mesh, wall_mask(&mesh, &[Wall::Inner, Wall::Outer]));
    let data = radial_problem_data();
    let opts = TraceOptions { tol: 1e-9, ..Default::default() };
    let p = Problem::new(&mesh, &domain, 1.0, &data, &solver, opts);

    let base = apply_lambda(&p, &vec![0.0; mesh.n_vertices()]).expect("radial anchor transport");
    let mut err = 0.0f64;
    for (v, y) in mesh.vertices.iter().enumerate() {
        err = err.max((base.omega.values[v] - 2.0 / y.norm()).abs());
    }
    let secs = start.elapsed().as_secs_f64();

    let pass = err <= 1e-5 && secs <= 60.0;
    println!(
        "criterion 1 (radial profile, max vertex error <= 1e-5 in <= 60 s): {} — error {err:.3e}, {secs:.1} s",
        verdict(pass)
    );
    assert!(pass, "max vertex error {err:.3e}, runtime {secs:.1} s");
}

#[test]
fn criterion_02_exit_time_and_margin_oracle() {
    let domain = DomainSpec::annulus(0.5, 2.0);
    let field = FlowField::drift(1.0);
    let opts = TraceOptions { tol: 1e-12, ..Default::default() };

    let mut rng = Rng::seed_from_u64(0x0a15);
    let mut tau_err = 0.0f64;
    for _ in 0..40 {
        let r = rng.range(0.55, 1.9);
        let th = TWO_PI * rng.uniform();
        let y = Point2::new(r * th.cos(), r * th.sin());
        let tr = trace(&field, &domain, y, TimeDirection::BackwardFlow, &opts);
        match tr.outcome {
            Outcome::Exit { wall: Wall::Outer, tau, .. } => {
                tau_err = tau_err.max((tau - (2.0 / r).ln()).abs());
            }
            other => panic!("radial backward trace must exit the outer wall, got {other:?}"),
        }
    }

    let mesh = build_mesh(&domain, 10, 30);
    let survey = survey_flow(&mesh, &field, &domain, &opts);
    let c1_err = (survey.c1 - 0.5).abs();
    let tstar_err = (survey.t_star - 4.0f64.ln()).abs();

    let pass = tau_err <= 1e-8 && c1_err <= 1e-6 && tstar_err <= 1e-8;
    println!(
        "criterion 2 (tau=ln(2/|y|) to 1e-8, c1=0.5 to 1e-6, T*=ln4 to 1e-8): {} — tau {tau_err:.2e}, c1 {c1_err:.2e}, T* {tstar_err:.2e}",
        verdict(pass)
    );
    assert!(pass, "tau err {tau_err:.2e}, c1 err {c1_err:.2e}, T* err {tstar_err:.2e}");
}

/// 2x2 determinant of the backward flow-map Jacobian by central differences.
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
fn criterion_03_flow_jacobian_determinant_identity() {
    let domain = DomainSpec::annulus(0.5, 2.0);
    let mu = 1.0;
    let modes = [
        StreamMode { k: 2, a: 0.7, b: -0.4, r0: 0.55, r1: 1.95 },
        StreamMode { k: 3, a: -0.5, b: 0.8, r0: 0.6, r1: 1.9 },
    ];
    let drift = FlowField::drift(mu);
    let swirl = FlowField { mesh: None, fem: None, mu, modes: &modes, mode_scale: 0.05 };
    let t_star = 4.0f64.ln();

    let mut rng = Rng::seed_from_u64(0xdec0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let r = rng.range(0.55, 1.55);
        let th = TWO_PI * rng.uniform();
        let y = Point2::new(r * th.cos(), r * th.sin());
        // t <= T*, shortened where the backward path (r e^t, plus swirl
        // drift-off and the finite-difference seeds) needs outer-wall room.
        let t = (1.6 / r).ln().min(t_star) * rng.range(0.05, 1.0);
        let exact = (2.0 * mu * t).exp();
        for field in [&drift, &swirl] {
            let det = fd_det(field, &domain, y, t);
            worst = worst.max((det - exact).abs() / exact);
        }
    }

    let pass = worst <= 1e-5;
    println!(
        "criterion 3 (det D(flow) = e^(2 mu t) within 1e-5 on 100 samples): {} — worst rel {worst:.2e}",
        verdict(pass)
    );
    assert!(pass, "worst relative determinant error {worst:.2e}");
}

#[test]
fn criterion_04_tangent_matches_finite_differences() {
    let domain = DomainSpec::annulus(0.5, 2.0);
    let h = CurveData::constant(1.0);
    let base = FlowField::drift(1.0);
    let opts = TraceOptions { tol: 1e-12, ..Default::default() };

    let mut rng = Rng::seed_from_u64(0x7a46);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mode = StreamMode {
            k: 1 + (rng.next_u64() % 6) as u32,
            a: rng.normal(),
            b: rng.normal(),
            r0: 0.55,
            r1: 1.95,
        };
        let r = rng.range(0.65, 1.8);
        let th = TWO_PI * rng.uniform();
        let y = Point2::new(r * th.cos(), r * th.sin());

        let tr = trace(&base, &domain, y, TimeDirection::BackwardFlow, &opts);
        let pieces = decompose_path(&tr, None);
        let te = tangent_exit(
            &base,
            &domain,
            &h,
            &tr,
            &pieces,
            &TangentDirection::Analytic(&|x| mode.eval(x)),
        );

        let gamma_at = |scale: f64| -> f64 {
            let f = FlowField {
                mesh: None,
                fem: None,
                mu: 1.0,
                modes: core::slice::from_ref(&mode),
                mode_scale: scale,
            };
            let tr = trace(&f, &domain, y, TimeDirection::BackwardFlow, &opts);
            match tr.outcome {
                Outcome::Exit { wall: Wall::Outer, tau, theta, .. } => tau.exp() * h.value(theta),
                other => panic!("perturbed trace must still exit the data wall, got {other:?}"),
            }
        };
        let eps = 1e-4;
        let fd = (gamma_at(eps) - gamma_at(-eps)) / (2.0 * eps);
        let rel = (te.omega_dot - fd).abs() / fd.abs().max(te.omega_dot.abs()).max(1e-3);
        worst = worst.max(rel);
    }

    let pass = worst <= 1e-4;
    println!(
        "criterion 4 (tangent vs FD directional derivative within 1e-4): {} — worst rel {worst:.2e}",
        verdict(pass)
    );
    assert!(pass, "worst relative tangent/FD gap {worst:.2e}");
}

#[test]
fn criterion_05_tangent_l2_amplification_audit() {
    let domain = DomainSpec::annulus(0.5, 2.0);
    let mesh = build_mesh(&domain, 8, 28);
    let solver = Poisson::new(&mesh, wall_mask(&mesh, &[Wall::Inner, Wall::Outer]));
    let data = radial_problem_data();
    let opts = TraceOptions { tol: 1e-10, ..Default::default() };
    let p = Problem::new(&mesh, &domain, 1.0, &data, &solver, opts);
    let base = apply_lambda(&p, &vec![0.0; mesh.n_vertices()]).expect("radial anchor");

    // Hand bounds for the pure drift: sup |q| = 2 and |Dq| = 1, so 2.1
    // covers the C1 size with 5% headroom; data-wall margin 2 with sup h = 1
    // gives the trace factor 0.5.
    let audit = audit_tangent_bound(&p, &base, 2.1, 0.5, 50, 0x5eed);

    let pass = audit.max_ratio <= 1.0;
    println!(
        "criterion 5 (50 perturbations inside the C~ K(M,T*) budget): {} — max ratio {:.4}",
        verdict(pass),
        audit.max_ratio
    );
    assert!(pass, "max amplification ratio {:.4}", audit.max_ratio);
}

/// max(0, peak - c r^alpha) around a center: the extremal profile for the
/// uniform-bound lemma. Its Holder seminorm at any scale is exactly c
/// (r^alpha is alpha-Holder with constant 1, and truncation only contracts).
fn spike(mesh: &Mesh, center: Point2, peak: f64, c: f64, alpha: f64) -> Vec<f64> {
    mesh.vertices
        .iter()
        .map(|&p| (peak - c * (p - center).norm().powf(alpha)).max(0.0))
        .collect()
}

#[test]
fn criterion_06_uniform_bound_from_seminorm_and_mass() {
    let domain = DomainSpec::annulus(1.0, 2.0);
    let mesh = build_mesh(&domain, 40, 160);
    let mass = mass_matrix(&mesh);
    let n = mesh.n_vertices();
    let mut scratch = vec![0.0; n];

    // rho = 0.4 fits a tangent disc at every point of the unit-width
    // annulus; the bump support radius delta/4 = 0.125 spans several cells.
    let (rho, alpha, delta, c) = (0.4, 0.5, 0.5, 1.0);
    let dc = bump_mass(rho, alpha, delta, c);
    let threshold = 0.5 * c * delta.powf(alpha);

    let wall_verts: Vec<usize> = (0..n).filter(|&v| mesh.wall_of_vertex[v].is_some()).collect();
    let inner_verts: Vec<usize> = (0..n).filter(|&v| mesh.wall_of_vertex[v].is_none()).collect();

    let mut rng = Rng::seed_from_u64(0xb06);
    let mut worst_frac = 0.0f64;
    for i in 0..100 {
        let f: Vec<f64> = match i % 3 {
            0 => {
                // Smooth random plane waves.
                let waves: Vec<(f64, Point2, f64)> = (0..5)
                    .map(|_| {
                        (
                            rng.normal(),
                            Point2::new(rng.range(-6.0, 6.0), rng.range(-6.0, 6.0)),
                            TWO_PI * rng.uniform(),
                        )
                    })
                    .collect();
                mesh.vertices
                    .iter()
                    .map(|&p| waves.iter().map(|(a, w, ph)| a * (w.dot(p) + ph).cos()).sum())
                    .collect()
            }
            1 => {
                let v = inner_verts[(rng.next_u64() as usize) % inner_verts.len()];
                spike(&mesh, mesh.vertices[v], threshold, c, alpha)
            }
            _ => {
                // Peak on a wall: the tangency geometry the mass bound is
                // computed for, so this is the near-extremal case.
                let v = wall_verts[(rng.next_u64() as usize) % wall_verts.len()];
                spike(&mesh, mesh.vertices[v], threshold, c, alpha)
            }
        };
        let sem = holder_seminorm(&mesh, &f, alpha, delta);
        let l2 = l2_norm(&mass, &f, &mut scratch);
        // Scale to sit inside both hypothesis bounds; the 5% headroom covers
        // the P1 quadrature of the cusped extremal profile.
        let s = 0.95 * (c / sem.max(1e-300)).min(dc / l2.max(1e-300));
        let max_abs = f.iter().map(|x| (x * s).abs()).fold(0.0, f64::max);
        worst_frac = worst_frac.max(max_abs / threshold);
    }

    let (mc_mean, mc_se) = bump_mass_mc(rho, alpha, delta, c, 10_000_000, 0x60c);
    let mc_gap = (dc * dc - mc_mean).abs();

    let pass = worst_frac <= 1.0 && mc_gap <= 3.0 * mc_se;
    println!(
        "criterion 6 (bounded fields stay under (c/2) delta^1/2; quadrature vs MC 3-sigma): {} — sup/limit {worst_frac:.3}, |gap| {mc_gap:.2e} vs {:.2e}",
        verdict(pass),
        3.0 * mc_se
    );
    assert!(pass, "sup/limit {worst_frac:.3}, quadrature-MC gap {mc_gap:.2e} vs 3 sigma {:.2e}", 3.0 * mc_se);
}

#[test]
fn criterion_07_poisson_order_and_disc_eigenvalue() {
    // Manufactured solution with nonzero data on both walls.
    let domain = DomainSpec::annulus(1.0, 2.0);
    let exact = |p: Point2| (2.0 * p.x).sin() * p.y.cos();
    let laplacian = |p: Point2| -5.0 * (2.0 * p.x).sin() * p.y.cos();

    let mut errors = Vec::new();
    for (layers, sectors) in [(8, 32), (16, 64), (32, 128)] {
        let mesh = build_mesh(&domain, layers, sectors);
        let solver = Poisson::new(&mesh, wall_mask(&mesh, &[Wall::Inner, Wall::Outer]));
        let f = ScalarField::from_fn(&mesh, laplacian);
        let g = ScalarField::from_fn(&mesh, exact);
        let u = solver.solve(&f.values, &g.values).expect("manufactured solve");
        let diff: Vec<f64> =
            (0..mesh.n_vertices()).map(|v| u.values[v] - exact(mesh.vertices[v])).collect();
        let mass = mass_matrix(&mesh);
        let mut scratch = vec![0.0; mesh.n_vertices()];
        errors.push(l2_norm(&mass, &diff, &mut scratch));
    }
    let ratios = [errors[0] / errors[1], errors[1] / errors[2]];
    let order_ok = ratios.iter().all(|r| (3.3..=4.7).contains(r));

    // Unit-disc fundamental Dirichlet eigenvalue at h = 0.02.
    let mesh = disc_mesh(1.0, 50, 160);
    let p = Poisson::new(&mesh, wall_mask(&mesh, &[Wall::Outer]));
    let sys = lowest_eigenpairs(&p, 1, 29).expect("disc eigenpair");
    let lambda1 = sys.eigenvalues[0];
    let eig_rel = (lambda1 - 5.7832).abs() / 5.7832;
    let eig_ok = eig_rel <= 0.01;

    let pass = order_ok && eig_ok;
    println!(
        "criterion 7 (O(h^2) ratios in [3.3,4.7]; disc lambda1 within 1%): {} — ratios {:.2}/{:.2}, lambda1 {lambda1:.4} ({eig_rel:.2e} rel)",
        verdict(pass),
        ratios[0],
        ratios[1]
    );
    assert!(pass, "ratios {ratios:?}, disc lambda1 {lambda1} rel err {eig_rel:.2e}");
}

#[test]
fn criterion_08_tail_norm_spectral_identity() {
    let domain = DomainSpec::annulus(1.0, 2.0);
    let mesh = build_mesh(&domain, 10, 40);
    let p = Poisson::new(&mesh, wall_mask(&mesh, &[Wall::Inner, Wall::Outer]));
    let sys = lowest_eigenpairs(&p, 41, 97).expect("eigenbasis");

    let mut worst = 0.0f64;
    for n in [10usize, 20, 40] {
        let est = estimate_tail_norm(&p, &sys.modes[..n], 1.0, 1234).expect("tail estimate");
        let want = 1.0 / sys.eigenvalues[n];
        worst = worst.max((est.value - want).abs() / want);
    }

    let pass = worst <= 0.05;
    println!(
        "criterion 8 (tail norm within 5% of 1/lambda_(N+1) for N=10,20,40): {} — worst rel {worst:.2e}",
        verdict(pass)
    );
    assert!(pass, "worst relative tail-norm error {worst:.2e}");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_selfsim"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn read_csv_column(path: &Path, col: usize) -> Vec<Option<f64>> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).and_then(|s| s.parse().ok()))
        .collect()
}

#[test]
fn criterion_09_contraction_and_conclusion_on_the_reference_fixture() {
    let dir = out_dir("acceptance-reference");
    let out = bin()
        .args(["certify", "--config"])
        .arg(fixture("reference.json"))
        .env("SELFSIM_OUTPUT_DIR", &dir)
        .output()
        .expect("binary runs");
    let ok_exit = out.status.code() == Some(0);
    assert!(ok_exit, "certify exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));

    // Every recorded star-norm step ratio stays under the contraction rate.
    let ratios: Vec<f64> =
        read_csv_column(&dir.join("history.csv"), 5).into_iter().flatten().collect();
    assert!(!ratios.is_empty(), "history carries no contraction ratios");
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    let ratio_ok = max_ratio <= 0.5 + 1e-3;

    // The limit is a fixed point to 1e-6 in L2.
    let report: RunReport =
        serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    let residual = report.final_lambda_residual.expect("certified run reaches the iteration");
    let residual_ok = residual <= 1e-6;

    // And it stays within the certified radius of the anchor, measured in
    // L2 on the run's own mesh.
    let cert: Certificate =
        serde_json::from_slice(&std::fs::read(dir.join("certificate.json")).unwrap()).unwrap();
    let delta2 = cert.constant("delta2").expect("ledger carries delta2");
    let (cfg, _) = config::load(&fixture("reference.json")).unwrap();
    let (layers, sectors) = cfg.mesh_dims();
    let mesh = build_mesh(&cfg.domain_spec().unwrap(), layers, sectors);
    let omega: Vec<f64> =
        read_csv_column(&dir.join("omega.csv"), 1).into_iter().map(Option::unwrap).collect();
    let omega0: Vec<f64> =
        read_csv_column(&dir.join("omega0.csv"), 1).into_iter().map(Option::unwrap).collect();
    let diff: Vec<f64> = omega.iter().zip(&omega0).map(|(a, b)| a - b).collect();
    let mass = mass_matrix(&mesh);
    let mut scratch = vec![0.0; mesh.n_vertices()];
    let dist = l2_norm(&mass, &diff, &mut scratch);
    let dist_ok = dist <= delta2;

    let pass = ok_exit && ratio_ok && residual_ok && dist_ok;
    println!(
        "criterion 9 (certified fixture: ratios <= 0.501, fixed-point residual <= 1e-6, drift <= delta2): {} — max ratio {max_ratio:.3}, residual {residual:.2e}, |omega-omega0| {dist:.2e} vs delta2 {delta2:.2e}",
        verdict(pass)
    );
    assert!(pass, "ratio {max_ratio}, residual {residual:.2e}, dist {dist:.2e} vs delta2 {delta2:.2e}");
}

#[test]
fn criterion_10_weighted_block_norm_domination() {
    let mut rng = Rng::seed_from_u64(0x10b1);
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..100 {
        let kappa0 = rng.range(0.05, 4.0);
        let eps0 = rng.range(0.005, 0.9);
        let lambda1 = rng.range(0.4, 30.0);
        let bound = [[kappa0 * eps0, kappa0 * eps0], [kappa0 / lambda1, kappa0 * eps0]];
        let m = [
            [bound[0][0] * rng.range(-1.0, 1.0), bound[0][1] * rng.range(-1.0, 1.0)],
            [bound[1][0] * rng.range(-1.0, 1.0), bound[1][1] * rng.range(-1.0, 1.0)],
        ];
        let norm = weighted_2x2_norm(m, lambda1 * eps0);
        let budget = interaction_budget(kappa0, eps0, lambda1);
        worst_excess = worst_excess.max(norm - budget);
    }

    let pass = worst_excess <= 1e-9;
    println!(
        "criterion 10 (100 dominated blocks under sqrt(2) kappa0 sqrt(eps0^2+eps0/lambda1)): {} — worst excess {worst_excess:.2e}",
        verdict(pass)
    );
    assert!(pass, "worst norm excess over the budget: {worst_excess:.2e}");
}

#[test]
fn criterion_11_certificate_determinism() {
    let dirs = [out_dir("acceptance-det-a"), out_dir("acceptance-det-b")];
    for dir in &dirs {
        let out = bin()
            .args(["certify", "--config"])
            .arg(fixture("reference.json"))
            .env("SELFSIM_OUTPUT_DIR", dir)
            .output()
            .expect("binary runs");
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dirs[0].join("certificate.json")).unwrap();
    let b = std::fs::read(dirs[1].join("certificate.json")).unwrap();

    let pass = a == b;
    println!(
        "criterion 11 (two certify runs, byte-identical certificate.json): {} — {} bytes",
        verdict(pass),
        a.len()
    );
    assert!(pass, "certificates differ between identical runs");
}
