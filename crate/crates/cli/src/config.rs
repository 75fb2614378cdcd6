//! Run configuration: one JSON document in, validated core types out.
//!
//! The file is hashed (FNV-1a over the raw bytes) before parsing; the hash
//! rides along into the certificate and the report so that artifacts can be
//! matched to the exact configuration that produced them.

use serde::{Deserialize, Serialize};

use selfsim_core::boundary::{BoundaryData, CurveData, FourierSeries, SupportArc};
use selfsim_core::geometry::{DomainSpec, RadialCurve, Wall, TWO_PI};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Trigonometric coefficients: constant + per-mode cosine/sine amplitudes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSpec {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl SeriesSpec {
    fn to_series(&self) -> FourierSeries {
        FourierSeries {
            constant: self.constant,
            cos_coeffs: self.cos.clone(),
            sin_coeffs: self.sin.clone(),
        }
    }

    fn is_zero(&self) -> bool {
        self.constant == 0.0
            && self.cos.iter().all(|&c| c == 0.0)
            && self.sin.iter().all(|&c| c == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    Annulus,
    DeformedAnnulus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WallLabel {
    Inner,
    Outer,
}

fn default_sigma1() -> WallLabel {
    WallLabel::Outer
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub kind: DomainKind,
    pub r_inner: f64,
    pub r_outer: f64,
    /// Radial Fourier perturbation of each wall (deformed-annulus only).
    #[serde(default)]
    pub inner_perturbation: Option<SeriesSpec>,
    #[serde(default)]
    pub outer_perturbation: Option<SeriesSpec>,
    /// Which wall carries the vorticity data.
    #[serde(default = "default_sigma1")]
    pub sigma1_label: WallLabel,
}

/// Prescribed stream values on both walls.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallPairSpec {
    #[serde(default)]
    pub inner: SeriesSpec,
    #[serde(default)]
    pub outer: SeriesSpec,
}

/// Support arc [start, end] with a smooth cutoff ramp at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSpec {
    pub start: f64,
    pub end: f64,
    pub ramp: f64,
}

fn default_scale() -> f64 {
    1.0
}

/// Vorticity data on the data wall: scale * series, optionally windowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub series: SeriesSpec,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub support: Option<ArcSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    /// Laplacian eigenmodes with both walls essential.
    DirichletEigen,
    /// Eigenmodes with only the data wall essential.
    MixedEigen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub kind: BasisKind,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Acknowledgments {
    /// Accept sampled suprema as proven for the purpose of the verdict.
    #[serde(default)]
    pub sampled_bounds: bool,
}

fn default_fd_step() -> f64 {
    1e-6
}

fn default_t_max() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub mu: f64,
    #[serde(default)]
    pub g_spec: WallPairSpec,
    pub h_spec: DataSpec,
    pub basis: BasisConfig,
    /// Target edge length of the structured mesh.
    pub mesh_target_h: f64,
    /// Error-per-unit-time target of the characteristic tracer.
    pub ode_tol: f64,
    /// Relative step used when the Jacobian is probed by differences.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Time budget per trace.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Uniform-to-Hoelder conversion constant; defaults to 10.
    #[serde(default)]
    pub c2_override: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub acknowledgments: Acknowledgments,
    pub output_dir: String,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.mu > 0.5) {
            return Err(err(format!("mu must satisfy mu > 1/2 (got {})", self.mu)));
        }
        if !(self.domain.r_inner > 0.0) || !(self.domain.r_outer > self.domain.r_inner) {
            return Err(err(format!(
                "domain radii must satisfy 0 < r_inner < r_outer (got {} and {})",
                self.domain.r_inner, self.domain.r_outer
            )));
        }
        match self.domain.kind {
            DomainKind::Annulus => {
                if self.domain.inner_perturbation.is_some() || self.domain.outer_perturbation.is_some() {
                    return Err(err("wall perturbations require kind = deformed-annulus"));
                }
            }
            DomainKind::DeformedAnnulus => {}
        }
        if self.basis.n < 1 {
            return Err(err("basis.n must be at least 1"));
        }
        for (name, v) in [
            ("mesh_target_h", self.mesh_target_h),
            ("ode_tol", self.ode_tol),
            ("fd_step", self.fd_step),
            ("t_max", self.t_max),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(err(format!("{name} must be a positive finite number (got {v})")));
            }
        }
        if let Some(c2) = self.c2_override {
            if !(c2 > 0.0) || !c2.is_finite() {
                return Err(err(format!("c2_override must be positive and finite (got {c2})")));
            }
        }
        if !self.h_spec.scale.is_finite() {
            return Err(err("h_spec.scale must be finite"));
        }
        if let Some(arc) = &self.h_spec.support {
            let width = arc.end - arc.start;
            if !(width > 0.0) || width >= TWO_PI {
                return Err(err(format!(
                    "h_spec.support must satisfy 0 < end - start < 2 pi (got width {width})"
                )));
            }
            if !(arc.ramp > 0.0) || arc.ramp > 0.5 * width {
                return Err(err(format!(
                    "h_spec.support.ramp must lie in (0, width/2] (got {})",
                    arc.ramp
                )));
            }
        }
        if self.output_dir.is_empty() {
            return Err(err("output_dir must not be empty"));
        }
        Ok(())
    }

    pub fn domain_spec(&self) -> Result<DomainSpec, ConfigError> {
        let curve = |base: f64, pert: &Option<SeriesSpec>| -> Result<RadialCurve, ConfigError> {
            match pert {
                None => Ok(RadialCurve::circle(base)),
                Some(s) => RadialCurve::new(base, s.cos.clone(), s.sin.clone())
                    .map_err(|e| err(format!("invalid wall shape: {e:?}"))),
            }
        };
        let inner = curve(self.domain.r_inner, &self.domain.inner_perturbation)?;
        let outer = curve(self.domain.r_outer, &self.domain.outer_perturbation)?;
        DomainSpec::new(inner, outer, self.domain.sigma1_label == WallLabel::Outer)
            .map_err(|e| err(format!("invalid domain: {e:?}")))
    }

    pub fn boundary_data(&self) -> BoundaryData {
        let g = |s: &SeriesSpec| CurveData {
            series: s.to_series(),
            window: None,
            scale: if s.is_zero() { 0.0 } else { 1.0 },
        };
        let window = self.h_spec.support.map(|arc| SupportArc {
            start: arc.start,
            width: arc.end - arc.start,
            ramp: arc.ramp,
        });
        BoundaryData {
            stream_inner: g(&self.g_spec.inner),
            stream_outer: g(&self.g_spec.outer),
            vorticity: CurveData {
                series: self.h_spec.series.to_series(),
                window,
                scale: if self.h_spec.series.is_zero() { 0.0 } else { self.h_spec.scale },
            },
        }
    }

    /// Structured mesh dimensions hitting the target edge length.
    pub fn mesh_dims(&self) -> (usize, usize) {
        let h = self.mesh_target_h;
        let extent = self.domain.r_outer - self.domain.r_inner;
        let mean_r = 0.5 * (self.domain.r_outer + self.domain.r_inner);
        let n_layers = ((extent / h).ceil() as usize).max(2);
        let raw_sectors = ((TWO_PI * mean_r / h).ceil() as usize).max(8);
        // Round up to a multiple of 4 so the mesh keeps its quarter symmetry.
        let n_sectors = raw_sectors.div_ceil(4) * 4;
        (n_layers, n_sectors)
    }

    pub fn essential_walls(&self) -> Vec<Wall> {
        match self.basis.kind {
            BasisKind::DirichletEigen => vec![Wall::Inner, Wall::Outer],
            BasisKind::MixedEigen => vec![match self.domain.sigma1_label {
                WallLabel::Inner => Wall::Inner,
                WallLabel::Outer => Wall::Outer,
            }],
        }
    }

    pub fn c2(&self) -> f64 {
        self.c2_override.unwrap_or(10.0)
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Parse and validate a configuration file; returns the config and the hash
/// of the raw bytes.
pub fn load(path: &std::path::Path) -> Result<(RunConfig, u64), ConfigError> {
    let bytes = std::fs::read(path)
        .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
    let hash = fnv1a64(&bytes);
    let cfg: RunConfig = serde_json::from_slice(&bytes)
        .map_err(|e| err(format!("cannot parse {}: {e}", path.display())))?;
    cfg.validate()?;
    Ok((cfg, hash))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> RunConfig {
        serde_json::from_str(
            r#"{
                "domain": {"kind": "annulus", "r_inner": 1.0, "r_outer": 2.0},
                "mu": 1.0,
                "h_spec": {"series": {"constant": 1.0}},
                "basis": {"kind": "dirichlet-eigen", "n": 8},
                "mesh_target_h": 0.1,
                "ode_tol": 1e-9,
                "seed": 7,
                "output_dir": "out"
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg = minimal();
        cfg.validate().unwrap();
        assert_eq!(cfg.c2(), 10.0);
        assert_eq!(cfg.essential_walls(), vec![Wall::Inner, Wall::Outer]);
        let (layers, sectors) = cfg.mesh_dims();
        assert!(layers >= 10 && sectors % 4 == 0);
        assert!(!cfg.boundary_data().vorticity.is_zero());
    }

    #[test]
    fn small_mu_is_rejected_with_the_rule_cited() {
        let mut cfg = minimal();
        cfg.mu = 0.4;
        let e = cfg.validate().unwrap_err();
        assert!(e.0.contains("mu > 1/2"), "{}", e.0);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = minimal();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn support_arc_bounds_are_enforced() {
        let mut cfg = minimal();
        cfg.h_spec.support = Some(ArcSpec { start: 0.0, end: 0.0, ramp: 0.1 });
        assert!(cfg.validate().is_err());
        cfg.h_spec.support = Some(ArcSpec { start: 0.3, end: 1.9, ramp: 0.5 });
        cfg.validate().unwrap();
        let data = cfg.boundary_data();
        assert_eq!(data.vorticity.value(0.0), 0.0);
        assert!(data.vorticity.value(1.1) > 0.99);
    }

    #[test]
    fn hash_is_stable() {
        // FNV-1a reference value for "a".
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_ne!(fnv1a64(b"config-a"), fnv1a64(b"config-b"));
    }
}
