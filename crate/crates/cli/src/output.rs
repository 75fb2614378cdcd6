//! Artifact writers and the run report.
//!
//! `certificate.json` is the canonical deterministic artifact: identical
//! configuration and seed produce identical bytes. Timings (and anything
//! else wall-clock dependent) live only in `report.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use selfsim_core::certify::{Certificate, Provenance};
use selfsim_core::galerkin::StepRecord;
use selfsim_core::geometry::{Mesh, Wall};

use crate::config::RunConfig;

pub fn ensure_dir(dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)
}

fn write_text(path: &Path, text: &str) -> io::Result<()> {
    fs::write(path, text.as_bytes())
}

pub fn write_certificate(dir: &Path, cert: &Certificate) -> io::Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(cert)?;
    text.push('\n');
    let path = dir.join("certificate.json");
    write_text(&path, &text)?;
    Ok(path)
}

pub fn write_history(dir: &Path, history: &[StepRecord]) -> io::Result<PathBuf> {
    let mut out = String::from("step,lambda_residual,step_size,step_star,dist_from_start,contraction\n");
    for r in history {
        let contraction = r.contraction.map(|c| c.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.lambda_residual, r.step_size, r.step_star, r.dist_from_start, contraction
        ));
    }
    let path = dir.join("history.csv");
    write_text(&path, &out)?;
    Ok(path)
}

pub fn write_mesh(dir: &Path, mesh: &Mesh) -> io::Result<(PathBuf, PathBuf)> {
    let mut v = String::from("id,x,y,wall\n");
    for (i, p) in mesh.vertices.iter().enumerate() {
        let wall = match mesh.wall_of_vertex[i] {
            Some(Wall::Inner) => "inner",
            Some(Wall::Outer) => "outer",
            None => "",
        };
        v.push_str(&format!("{},{},{},{}\n", i, p.x, p.y, wall));
    }
    let vp = dir.join("vertices.csv");
    write_text(&vp, &v)?;

    let mut t = String::from("id,v0,v1,v2\n");
    for (i, tri) in mesh.triangles.iter().enumerate() {
        t.push_str(&format!("{},{},{},{}\n", i, tri[0], tri[1], tri[2]));
    }
    let tp = dir.join("triangles.csv");
    write_text(&tp, &t)?;
    Ok((vp, tp))
}

pub fn write_scalar_csv(dir: &Path, name: &str, values: &[f64]) -> io::Result<PathBuf> {
    let mut out = String::from("id,value\n");
    for (i, x) in values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i, x));
    }
    let path = dir.join(format!("{name}.csv"));
    write_text(&path, &out)?;
    Ok(path)
}

/// Legacy-ASCII VTK unstructured grid with one point scalar per field.
pub fn write_vtk(dir: &Path, mesh: &Mesh, fields: &[(&str, &[f64])]) -> io::Result<PathBuf> {
    let n = mesh.vertices.len();
    let m = mesh.triangles.len();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("self-similar profile fields\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    out.push_str(&format!("POINTS {n} double\n"));
    for p in &mesh.vertices {
        out.push_str(&format!("{} {} 0\n", p.x, p.y));
    }
    out.push_str(&format!("CELLS {m} {}\n", 4 * m));
    for tri in &mesh.triangles {
        out.push_str(&format!("3 {} {} {}\n", tri[0], tri[1], tri[2]));
    }
    out.push_str(&format!("CELL_TYPES {m}\n"));
    for _ in 0..m {
        out.push_str("5\n");
    }
    out.push_str(&format!("POINT_DATA {n}\n"));
    for (name, values) in fields {
        assert_eq!(values.len(), n);
        out.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
        for x in *values {
            out.push_str(&format!("{x}\n"));
        }
    }
    let path = dir.join("fields.vtk");
    write_text(&path, &out)?;
    Ok(path)
}

#[derive(Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

/// Everything one run reports, including the wall-clock story. Written as
/// `report.json`; the `report` subcommand re-renders it.
#[derive(Serialize, Deserialize)]
pub struct RunReport {
    pub verdict: Option<String>,
    pub certificate: Option<Certificate>,
    pub config_hash: u64,
    pub eta0: f64,
    /// Absent when the run stopped before producing a state to measure.
    pub final_lambda_residual: Option<f64>,
    pub iteration_steps: usize,
    pub files: Vec<String>,
    pub timings: Vec<StageTime>,
    pub config: RunConfig,
}

pub fn write_report(dir: &Path, report: &RunReport) -> io::Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    let path = dir.join("report.json");
    write_text(&path, &text)?;
    Ok(path)
}

pub fn read_report(dir: &Path) -> io::Result<RunReport> {
    let bytes = fs::read(dir.join("report.json"))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn provenance_str(p: Provenance) -> &'static str {
    match p {
        Provenance::AnalyticFormula => "analytic",
        Provenance::SampledBound => "sampled",
        Provenance::DiscreteEstimate => "discrete",
        Provenance::UserSupplied => "user-supplied",
    }
}

/// Human-readable rendering of a report (the `--format text` path).
pub fn render_text(r: &RunReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("config hash    {:016x}\n", r.config_hash));
    out.push_str(&format!("verdict        {}\n", r.verdict.as_deref().unwrap_or("(no certificate)")));
    if let Some(cert) = &r.certificate {
        out.push_str(&format!("seed           {}\n", cert.seed));
        out.push_str(&format!("conclusion     exact profile within {:.6e} of the anchor state\n", cert.conclusion_bound));
        out.push_str("\nconstants\n");
        for e in &cert.constants {
            out.push_str(&format!(
                "  {:<12} {:>14.6e}  {:<13} <- {}\n",
                e.name,
                e.value,
                provenance_str(e.provenance),
                e.inputs.join(", ")
            ));
        }
        out.push_str("\nchecks\n");
        for c in &cert.checks {
            out.push_str(&format!(
                "  [{}] {:<22} {:.6e} vs {:.6e}  ({})\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.lhs,
                c.rhs,
                c.inequality
            ));
        }
        if let Some(res) = &cert.residuals {
            out.push_str("\nresiduals\n");
            out.push_str(&format!("  anchor defect  {:.6e}\n", res.anchor_defect));
            out.push_str(&format!("  update gap     {:.6e}\n", res.update_gap));
        }
    }
    out.push_str(&format!("\neta0           {:.6e}\n", r.eta0));
    if let Some(x) = r.final_lambda_residual {
        out.push_str(&format!("final residual {:.6e}\n", x));
    }
    out.push_str(&format!("iterations     {}\n", r.iteration_steps));
    out.push_str("\ntimings\n");
    for t in &r.timings {
        out.push_str(&format!("  {:<16} {:.3}s\n", t.stage, t.seconds));
    }
    out.push_str("\nfiles\n");
    for f in &r.files {
        out.push_str(&format!("  {f}\n"));
    }
    out
}
