//! Command-line front end.
//!
//! Exit codes: 0 the run certified (or certified conditionally with the
//! sampled bounds acknowledged); 1 the certificate failed or conditions
//! were not acknowledged; 2 configuration error; 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use selfsim_core::certify::Verdict;
use selfsim_core::elliptic::{perp_gradient, ScalarField};
use selfsim_core::transport::{trace, wall_excess, FlowField, Outcome, TimeDirection};
use selfsim_core::geometry::Wall;
use selfsim_core::Point2;

use selfsim_cli::config::{self, RunConfig};
use selfsim_cli::output::{self, RunReport, StageTime};
use selfsim_cli::pipeline::{self, Mode, PipelineOutput};

#[derive(Parser)]
#[command(name = "selfsim", version, about = "Self-similar Euler profiles on annular domains: solve, certify, inspect.")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the fixed-point problem and emit an existence certificate.
    Certify {
        #[arg(long)]
        config: PathBuf,
        /// Accept sampled suprema as proven for the purpose of the verdict.
        #[arg(long)]
        ack_sampled_bounds: bool,
    },
    /// Solve the fixed-point problem and write the fields, no certificate.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Trace sample points through the solved field (CSV of `x,y` rows).
    Trace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        points: PathBuf,
    },
    /// Render the report of a previous run.
    Report {
        /// Locates the output directory; may be omitted when SELFSIM_OUTPUT_DIR is set.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

enum AppError {
    Config(String),
    Runtime(String),
}

impl From<config::ConfigError> for AppError {
    fn from(e: config::ConfigError) -> Self {
        AppError::Config(e.0)
    }
}

impl From<pipeline::PipelineFailure> for AppError {
    fn from(e: pipeline::PipelineFailure) -> Self {
        AppError::Runtime(e.0)
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Certify { config, ack_sampled_bounds } => cmd_certify(&config, ack_sampled_bounds),
        Cmd::Solve { config } => cmd_solve(&config),
        Cmd::Trace { config, points } => cmd_trace(&config, &points),
        Cmd::Report { config, format } => cmd_report(config.as_deref(), format),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(AppError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

/// The output directory: the configuration's, unless the environment
/// overrides it.
fn resolve_output_dir(cfg: &RunConfig) -> PathBuf {
    match std::env::var("SELFSIM_OUTPUT_DIR") {
        Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(&cfg.output_dir),
    }
}

fn write_run_artifacts(
    dir: &Path,
    cfg: &RunConfig,
    hash: u64,
    out: &PipelineOutput,
) -> Result<Vec<String>, AppError> {
    output::ensure_dir(dir)?;
    let mut files = Vec::new();
    let record = |p: PathBuf, files: &mut Vec<String>| {
        files.push(p.file_name().unwrap().to_string_lossy().into_owned());
    };
    if let Some(cert) = &out.certificate {
        record(output::write_certificate(dir, cert)?, &mut files);
    }
    record(output::write_history(dir, &out.history)?, &mut files);
    let (vp, tp) = output::write_mesh(dir, &out.mesh)?;
    record(vp, &mut files);
    record(tp, &mut files);
    record(output::write_scalar_csv(dir, "omega", &out.omega_bar)?, &mut files);
    record(output::write_scalar_csv(dir, "omega0", &out.omega0)?, &mut files);
    record(output::write_scalar_csv(dir, "psi", &out.psi_bar)?, &mut files);
    record(
        output::write_vtk(dir, &out.mesh, &[("omega", &out.omega_bar), ("psi", &out.psi_bar)])?,
        &mut files,
    );
    let mut report = RunReport {
        verdict: out.certificate.as_ref().map(|c| c.verdict.as_str().to_string()),
        certificate: out.certificate.clone(),
        config_hash: hash,
        eta0: out.eta0,
        final_lambda_residual: (!out.final_lambda_residual.is_nan())
            .then_some(out.final_lambda_residual),
        iteration_steps: out.history.len(),
        files: Vec::new(),
        timings: out
            .timings
            .iter()
            .map(|(stage, seconds)| StageTime { stage: stage.clone(), seconds: *seconds })
            .collect(),
        config: cfg.clone(),
    };
    report.files = files.clone();
    report.files.push("report.json".to_string());
    output::write_report(dir, &report)?;
    files.push("report.json".to_string());
    Ok(files)
}

fn cmd_certify(config_path: &Path, ack_flag: bool) -> Result<u8, AppError> {
    let (cfg, hash) = config::load(config_path)?;
    let dir = resolve_output_dir(&cfg);
    let out = pipeline::run(&cfg, hash, Mode::Certify, ack_flag)?;
    write_run_artifacts(&dir, &cfg, hash, &out)?;
    let cert = out.certificate.as_ref().expect("certify mode always carries a certificate");
    println!("verdict: {}", cert.verdict.as_str());
    match cert.verdict {
        Verdict::Failed => {
            for c in cert.checks.iter().filter(|c| !c.pass) {
                println!("  failed check: {} ({})", c.name, c.inequality);
            }
        }
        _ => {
            println!(
                "an exact profile exists within {:.6e} of the computed state",
                cert.conclusion_bound
            );
        }
    }
    println!("artifacts: {}", dir.display());
    let acknowledged = cfg.acknowledgments.sampled_bounds || ack_flag;
    Ok(match cert.verdict {
        Verdict::Certified => 0,
        Verdict::ConditionallyCertified if acknowledged => 0,
        _ => 1,
    })
}

fn cmd_solve(config_path: &Path) -> Result<u8, AppError> {
    let (cfg, hash) = config::load(config_path)?;
    let dir = resolve_output_dir(&cfg);
    let out = pipeline::run(&cfg, hash, Mode::Solve, false)?;
    write_run_artifacts(&dir, &cfg, hash, &out)?;
    if let Some(r) = (!out.final_lambda_residual.is_nan()).then_some(out.final_lambda_residual) {
        println!("solved in {} steps, fixed-point residual {:.3e}", out.history.len(), r);
    }
    println!("artifacts: {}", dir.display());
    Ok(0)
}

struct TraceRow {
    x: f64,
    y: f64,
    tau: f64,
    exit_theta: f64,
    h_exit: f64,
    omega: f64,
    t_free: f64,
    status: String,
}

fn read_points(path: &Path) -> Result<Vec<Point2>, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut pts = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let parse = |s: Option<&str>| s.and_then(|t| t.parse::<f64>().ok());
        match (parse(parts.next()), parse(parts.next())) {
            (Some(x), Some(y)) => pts.push(Point2::new(x, y)),
            // A non-numeric first row is a header; anything later is a mistake.
            _ if ln == 0 => continue,
            _ => {
                return Err(AppError::Config(format!(
                    "{}:{}: expected `x,y`, got `{line}`",
                    path.display(),
                    ln + 1
                )))
            }
        }
    }
    if pts.is_empty() {
        return Err(AppError::Config(format!("{}: no points", path.display())));
    }
    Ok(pts)
}

fn cmd_trace(config_path: &Path, points_path: &Path) -> Result<u8, AppError> {
    let (cfg, hash) = config::load(config_path)?;
    let points = read_points(points_path)?;
    let dir = resolve_output_dir(&cfg);
    let out = pipeline::run(&cfg, hash, Mode::Solve, false)?;
    write_run_artifacts(&dir, &cfg, hash, &out)?;

    let psi = ScalarField { values: out.psi_bar.clone() };
    let fem = perp_gradient(&out.mesh, &psi);
    let field = FlowField::with_fem(&out.mesh, &fem, cfg.mu);
    let data = cfg.boundary_data();
    let data_wall = out.domain.data_wall();
    let opts = selfsim_core::transport::TraceOptions {
        tol: cfg.ode_tol,
        t_max: cfg.t_max,
        max_steps: 200_000,
    };

    let mut rows = Vec::with_capacity(points.len());
    for p in points {
        let mut row = TraceRow {
            x: p.x,
            y: p.y,
            tau: f64::NAN,
            exit_theta: f64::NAN,
            h_exit: f64::NAN,
            omega: f64::NAN,
            t_free: f64::NAN,
            status: "ok".to_string(),
        };
        // Points on a wall are valid seeds (immediate exit), so gate on the
        // signed excess rather than strict containment.
        let beyond = wall_excess(&out.domain, Wall::Inner, p).max(wall_excess(&out.domain, Wall::Outer, p));
        if beyond > 1e-9 {
            row.status = "outside-domain".to_string();
            rows.push(row);
            continue;
        }
        match trace(&field, &out.domain, p, TimeDirection::BackwardFlow, &opts).outcome {
            Outcome::Exit { wall, tau, theta, .. } if wall == data_wall => {
                row.tau = tau;
                row.exit_theta = theta;
                row.h_exit = data.vorticity.value(theta);
                row.omega = tau.exp() * row.h_exit;
            }
            Outcome::Exit { .. } => row.status = "backward-exit-on-free-wall".to_string(),
            Outcome::Timeout => row.status = "backward-timeout".to_string(),
            Outcome::Stagnation { .. } => row.status = "backward-stagnation".to_string(),
        }
        match trace(&field, &out.domain, p, TimeDirection::ForwardFlow, &opts).outcome {
            Outcome::Exit { wall, tau, .. } if wall != data_wall => row.t_free = tau,
            Outcome::Exit { .. } => {
                if row.status == "ok" {
                    row.status = "forward-exit-on-data-wall".to_string();
                }
            }
            Outcome::Timeout | Outcome::Stagnation { .. } => {
                if row.status == "ok" {
                    row.status = "forward-no-exit".to_string();
                }
            }
        }
        rows.push(row);
    }

    let mut csv = String::from("x,y,tau,exit_theta,h_exit,omega,t_free,status\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.x, r.y, r.tau, r.exit_theta, r.h_exit, r.omega, r.t_free, r.status
        ));
    }
    std::fs::write(dir.join("trace.csv"), csv)?;

    println!(
        "{:>12} {:>12} {:>12} {:>12} {:>12} {:>12}  status",
        "x", "y", "tau", "omega", "t_free", "exit_theta"
    );
    for r in &rows {
        println!(
            "{:>12.6} {:>12.6} {:>12.6} {:>12.6e} {:>12.6} {:>12.6}  {}",
            r.x, r.y, r.tau, r.omega, r.t_free, r.exit_theta, r.status
        );
    }
    println!("trace table: {}", dir.join("trace.csv").display());
    Ok(0)
}

fn cmd_report(config_path: Option<&Path>, format: Format) -> Result<u8, AppError> {
    let dir = match std::env::var("SELFSIM_OUTPUT_DIR") {
        Ok(d) if !d.is_empty() => PathBuf::from(d),
        _ => match config_path {
            Some(p) => PathBuf::from(&config::load(p)?.0.output_dir),
            None => {
                return Err(AppError::Config(
                    "pass --config or set SELFSIM_OUTPUT_DIR to locate the run".to_string(),
                ))
            }
        },
    };
    let report = output::read_report(&dir).map_err(|e| {
        AppError::Runtime(format!("cannot read report in {}: {e}", dir.display()))
    })?;
    match format {
        Format::Json => {
            let mut text = serde_json::to_string_pretty(&report)
                .map_err(|e| AppError::Runtime(e.to_string()))?;
            text.push('\n');
            print!("{text}");
        }
        Format::Text => print!("{}", output::render_text(&report)),
    }
    Ok(0)
}
