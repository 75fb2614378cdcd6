//! Pipeline orchestration: mesh, base-field transversality gate, modal
//! space, anchor state, frozen Jacobian, certificate, then the refining
//! iteration. One pipeline per invocation; every stage is timed.
//!
//! The anchor is the first image of zero under the composed map (the pure
//! data response): cheap, deterministic, and close enough to the fixed
//! point for the certificate's neighborhood to stretch over the limit.

use std::time::Instant;

use selfsim_core::certify::{run_certification, Certificate, CertifyInputs, SolveArtifacts, Verdict};
use selfsim_core::elliptic::{
    estimate_tail_norm, lowest_eigenpairs, perp_gradient, stream_boundary_values, wall_mask,
    Poisson,
};
use selfsim_core::galerkin::{
    apply_lambda, apply_upsilon, assemble_jacobian, build_space, inverse_gap_bound,
    iterate_to_fixed_point, star_norm, IterateOptions, Problem, ProbeScheme, StepRecord,
};
use selfsim_core::geometry::{build_mesh, DomainSpec, Mesh, Wall};
use selfsim_core::transport::{survey_flow, FlowField, TraceOptions};

use crate::config::{BasisKind, RunConfig};

#[derive(Debug)]
pub struct PipelineFailure(pub String);

impl std::fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Certify,
    Solve,
}

pub struct PipelineOutput {
    pub domain: DomainSpec,
    pub mesh: Mesh,
    pub omega0: Vec<f64>,
    pub omega_bar: Vec<f64>,
    pub psi_bar: Vec<f64>,
    pub history: Vec<StepRecord>,
    pub certificate: Option<Certificate>,
    pub eta0: f64,
    /// ||Lambda(omega_bar) - omega_bar|| at the reported state.
    pub final_lambda_residual: f64,
    /// (stage name, seconds), in execution order.
    pub timings: Vec<(String, f64)>,
}

fn num<E: core::fmt::Debug>(stage: &str) -> impl Fn(E) -> PipelineFailure + '_ {
    move |e| PipelineFailure(format!("{stage}: {e:?}"))
}

pub fn run(
    cfg: &RunConfig,
    config_hash: u64,
    mode: Mode,
    ack_cli: bool,
) -> Result<PipelineOutput, PipelineFailure> {
    let mut timings: Vec<(String, f64)> = Vec::new();
    let mut mark = Instant::now();
    let mut stage = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), mark.elapsed().as_secs_f64()));
        mark = Instant::now();
    };

    // Domain, mesh, solver, problem. The config was validated upstream, so
    // geometry errors here are real configuration mistakes and were caught
    // by `domain_spec` before the pipeline started.
    let domain = cfg.domain_spec().expect("validated config");
    let (n_layers, n_sectors) = cfg.mesh_dims();
    let mesh = build_mesh(&domain, n_layers, n_sectors);
    let data = cfg.boundary_data();
    let solver = Poisson::new(&mesh, wall_mask(&mesh, &[Wall::Inner, Wall::Outer]));
    let trace_opts = TraceOptions { tol: cfg.ode_tol, t_max: cfg.t_max, max_steps: 200_000 };
    let p = Problem::new(&mesh, &domain, cfg.mu, &data, &solver, trace_opts);
    let ack = cfg.acknowledgments.sampled_bounds || ack_cli;
    let zeros = vec![0.0f64; mesh.n_vertices()];
    stage("setup", &mut timings);

    // Transversality gate on the zero-state field (drift + the stream
    // response to g alone). If the base field does not cross the walls the
    // right way, certification emits a failed certificate and solving has
    // nothing to trace.
    let bc = stream_boundary_values(&mesh, &data);
    let psi_base = solver.solve(&zeros, &bc).map_err(num("stream solve"))?;
    let fem_base = perp_gradient(&mesh, &psi_base);
    let base_field = FlowField::with_fem(&mesh, &fem_base, cfg.mu);
    let survey_base = survey_flow(&mesh, &base_field, &domain, &p.trace_opts);
    stage("transversality", &mut timings);

    if !survey_base.transversal || !(survey_base.c1 > 0.0) {
        if mode == Mode::Solve {
            return Err(PipelineFailure(format!(
                "base field is not transversal (data-wall margin {:.3e}, free-wall margin {:.3e})",
                survey_base.margin_data_wall, survey_base.margin_free_wall
            )));
        }
        let certificate = run_certification(&CertifyInputs {
            problem: &p,
            survey: &survey_base,
            fem: &fem_base,
            artifacts: None,
            c2: cfg.c2(),
            n_probes: 4,
            seed: cfg.seed,
            config_hash,
            ack_sampled_bounds: ack,
        });
        stage("certificate", &mut timings);
        return Ok(PipelineOutput {
            domain,
            mesh,
            omega0: zeros.clone(),
            omega_bar: zeros,
            psi_bar: psi_base.values,
            history: Vec::new(),
            certificate: Some(certificate),
            eta0: 1.0,
            final_lambda_residual: f64::NAN,
            timings,
        });
    }

    // Modal space, first eigenvalue, tail norm. lambda1 is always the
    // full-Dirichlet ground eigenvalue, whatever basis the space uses.
    let (space, eigs) = build_space(
        &p,
        cfg.basis.n,
        &cfg.essential_walls(),
        !data.vorticity.is_zero(),
        cfg.seed,
    )
    .map_err(num("modal space"))?;
    let lambda1 = match cfg.basis.kind {
        BasisKind::DirichletEigen => eigs[0],
        BasisKind::MixedEigen => {
            lowest_eigenpairs(&solver, 1, cfg.seed).map_err(num("ground eigenvalue"))?.eigenvalues
                [0]
        }
    };
    let tail = estimate_tail_norm(&solver, &space.basis, 1.1, cfg.seed)
        .map_err(num("tail estimate"))?;
    let eta0 = (lambda1 * tail.value).min(1.0);
    stage("modal-space", &mut timings);

    // Anchor state: the data response Lambda(0), then everything frozen
    // there.
    let lam_start = apply_lambda(&p, &zeros).map_err(num("anchor transport"))?;
    let omega0 = lam_start.omega.values.clone();
    let lam0 = apply_lambda(&p, &omega0).map_err(num("anchor transport"))?;
    stage("anchor", &mut timings);

    let a = assemble_jacobian(&p, &space, &omega0, &lam0, ProbeScheme::Tangent, cfg.fd_step)
        .map_err(num("jacobian"))?;
    let gamma = inverse_gap_bound(&a.entries).map_err(num("jacobian"))?;
    stage("jacobian", &mut timings);

    let anchor_field = FlowField::with_fem(&mesh, &lam0.fem, cfg.mu);
    let survey = survey_flow(&mesh, &anchor_field, &domain, &p.trace_opts);
    stage("survey", &mut timings);

    let certificate = if mode == Mode::Certify {
        let cert = run_certification(&CertifyInputs {
            problem: &p,
            survey: &survey,
            fem: &lam0.fem,
            artifacts: Some(SolveArtifacts {
                space: &space,
                jacobian: &a.entries,
                gamma,
                omega0: &omega0,
                lambda0: &lam0,
                lambda1,
                epsilon0: tail.value,
                tail_direction: Some(&tail.direction),
            }),
            c2: cfg.c2(),
            n_probes: 4,
            seed: cfg.seed,
            config_hash,
            ack_sampled_bounds: ack,
        });
        stage("certificate", &mut timings);
        Some(cert)
    } else {
        None
    };

    // A failed certificate stops the pipeline at the anchor: iterating a
    // map with no certified contraction would dress up the report.
    if let Some(cert) = &certificate {
        if cert.verdict == Verdict::Failed {
            let r: Vec<f64> =
                lam0.omega.values.iter().zip(omega0.iter()).map(|(&l, &o)| l - o).collect();
            let final_lambda_residual = p.norm(&r);
            return Ok(PipelineOutput {
                domain,
                mesh,
                omega_bar: omega0.clone(),
                omega0,
                psi_bar: lam0.psi.values,
                history: Vec::new(),
                certificate,
                eta0,
                final_lambda_residual,
                timings,
            });
        }
    }

    // Refining iteration from the anchor, in the weighted norm. Stop at a
    // 1e-7 relative drop from the first step, but never chase steps below
    // what the transport integrator can resolve: the adaptive tracer
    // evaluates the composed map only to ode_tol (relative), and below
    // that level the update sizes are step-control jitter, not signal.
    let probe = apply_upsilon(&p, &space, &a.entries, &omega0).map_err(num("iteration"))?;
    let d0: Vec<f64> = probe.omega.iter().zip(omega0.iter()).map(|(&x, &y)| x - y).collect();
    let first_step = star_norm(&p, &space, eta0, &d0);
    let anchor_star = star_norm(&p, &space, eta0, &omega0);
    let noise_floor = (64.0 * f64::EPSILON + cfg.ode_tol) * anchor_star;
    let neighborhood = certificate
        .as_ref()
        .filter(|c| c.conclusion_bound > 0.0)
        .map(|c| c.conclusion_bound);
    let run = iterate_to_fixed_point(
        &p,
        &space,
        &a.entries,
        &omega0,
        &IterateOptions {
            stop_tol: (1e-7 * first_step).max(noise_floor).max(1e-300),
            max_steps: 40,
            eta0,
            neighborhood,
        },
    )
    .map_err(num("iteration"))?;
    if !run.converged {
        return Err(PipelineFailure(
            "fixed-point iteration did not converge within 40 steps".to_string(),
        ));
    }
    let omega_bar = run.omega;
    let lam_bar = apply_lambda(&p, &omega_bar).map_err(num("final transport"))?;
    let r: Vec<f64> =
        lam_bar.omega.values.iter().zip(omega_bar.iter()).map(|(&l, &o)| l - o).collect();
    let final_lambda_residual = p.norm(&r);
    stage("iteration", &mut timings);

    Ok(PipelineOutput {
        domain,
        mesh,
        omega0,
        omega_bar,
        psi_bar: lam_bar.psi.values,
        history: run.history,
        certificate,
        eta0,
        final_lambda_residual,
        timings,
    })
}
