//! Annular domains bounded by smooth radial graphs r(theta), and structured
//! triangulations of them.
//!
//! Both walls of the domain are curves of the form
//!   r(theta) = R + sum_k (a_k cos k theta + b_k sin k theta),
//! traversed counterclockwise. The mesh is a polar grid of quadrilateral
//! cells split into two triangles each; all triangles are CCW. Point
//! location exploits the grid structure (index arithmetic plus a neighbor
//! walk for the deformed cases).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
// Needed for float math without std; spuriously "unused" when a test
// build links std into the graph.
#[allow(unused_imports)]
use num_traits::Float;

use crate::vec2::Point2;

pub const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Debug, PartialEq)]
pub enum GeometryError {
    NonpositiveRadius { theta: f64, radius: f64 },
    WallsCross { theta: f64, inner: f64, outer: f64 },
}

impl core::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GeometryError::NonpositiveRadius { theta, radius } => {
                write!(f, "radial curve reaches r = {radius} at theta = {theta}")
            }
            GeometryError::WallsCross { theta, inner, outer } => {
                write!(f, "walls cross near theta = {theta}: inner {inner} >= outer {outer}")
            }
        }
    }
}

/// Closed curve given as a radial graph around the origin.
#[derive(Clone, Debug)]
pub struct RadialCurve {
    pub base_radius: f64,
    /// Coefficient of cos(k theta), k starting at 1.
    pub cos_coeffs: Vec<f64>,
    /// Coefficient of sin(k theta), k starting at 1.
    pub sin_coeffs: Vec<f64>,
}

impl RadialCurve {
    pub fn circle(radius: f64) -> Self {
        RadialCurve { base_radius: radius, cos_coeffs: Vec::new(), sin_coeffs: Vec::new() }
    }

    /// Validates that the radius stays strictly positive (dense sampling).
    pub fn new(base_radius: f64, cos_coeffs: Vec<f64>, sin_coeffs: Vec<f64>) -> Result<Self, GeometryError> {
        let c = RadialCurve { base_radius, cos_coeffs, sin_coeffs };
        for s in 0..4096 {
            let theta = TWO_PI * s as f64 / 4096.0;
            let r = c.radius(theta);
            if !(r > 0.0) {
                return Err(GeometryError::NonpositiveRadius { theta, radius: r });
            }
        }
        Ok(c)
    }

    pub fn radius(&self, theta: f64) -> f64 {
        let mut r = self.base_radius;
        for (k, &a) in self.cos_coeffs.iter().enumerate() {
            r += a * ((k + 1) as f64 * theta).cos();
        }
        for (k, &b) in self.sin_coeffs.iter().enumerate() {
            r += b * ((k + 1) as f64 * theta).sin();
        }
        r
    }

    /// dr/dtheta.
    pub fn radius_d1(&self, theta: f64) -> f64 {
        let mut r = 0.0;
        for (k, &a) in self.cos_coeffs.iter().enumerate() {
            let m = (k + 1) as f64;
            r -= a * m * (m * theta).sin();
        }
        for (k, &b) in self.sin_coeffs.iter().enumerate() {
            let m = (k + 1) as f64;
            r += b * m * (m * theta).cos();
        }
        r
    }

    /// d2r/dtheta2.
    pub fn radius_d2(&self, theta: f64) -> f64 {
        let mut r = 0.0;
        for (k, &a) in self.cos_coeffs.iter().enumerate() {
            let m = (k + 1) as f64;
            r -= a * m * m * (m * theta).cos();
        }
        for (k, &b) in self.sin_coeffs.iter().enumerate() {
            let m = (k + 1) as f64;
            r -= b * m * m * (m * theta).sin();
        }
        r
    }

    pub fn point(&self, theta: f64) -> Point2 {
        let r = self.radius(theta);
        Point2::new(r * theta.cos(), r * theta.sin())
    }

    /// dx/dtheta (unnormalized CCW tangent).
    pub fn tangent(&self, theta: f64) -> Point2 {
        let r = self.radius(theta);
        let dr = self.radius_d1(theta);
        let (s, c) = (theta.sin(), theta.cos());
        Point2::new(dr * c - r * s, dr * s + r * c)
    }

    /// |dx/dtheta| = sqrt(r^2 + r'^2); converts d/dtheta to d/ds (arc length).
    pub fn arc_speed(&self, theta: f64) -> f64 {
        let r = self.radius(theta);
        let dr = self.radius_d1(theta);
        (r * r + dr * dr).sqrt()
    }

    pub fn unit_tangent(&self, theta: f64) -> Point2 {
        self.tangent(theta).normalized()
    }

    /// Unit normal on the origin-far side (the outward normal when this
    /// curve is the outer wall; negate for the inner wall).
    pub fn radial_normal(&self, theta: f64) -> Point2 {
        let t = self.tangent(theta);
        Point2::new(t.y, -t.x).normalized()
    }

    /// Curvature of the CCW-parameterized curve; 1/R for a circle.
    pub fn curvature(&self, theta: f64) -> f64 {
        let r = self.radius(theta);
        let d1 = self.radius_d1(theta);
        let d2 = self.radius_d2(theta);
        (r * r + 2.0 * d1 * d1 - r * d2) / (r * r + d1 * d1).powf(1.5)
    }

    /// Signed radial gap: |p| - r(theta(p)). Positive on the origin-far side.
    pub fn signed_outside(&self, p: Point2) -> f64 {
        p.norm() - self.radius(p.angle())
    }

    pub fn min_radius(&self) -> f64 {
        let mut m = f64::INFINITY;
        for s in 0..4096 {
            m = m.min(self.radius(TWO_PI * s as f64 / 4096.0));
        }
        m
    }

    pub fn max_radius(&self) -> f64 {
        let mut m = 0.0f64;
        for s in 0..4096 {
            m = m.max(self.radius(TWO_PI * s as f64 / 4096.0));
        }
        m
    }
}

/// Which wall of the annular domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wall {
    Inner,
    Outer,
}

impl Wall {
    pub fn opposite(self) -> Wall {
        match self {
            Wall::Inner => Wall::Outer,
            Wall::Outer => Wall::Inner,
        }
    }
}

/// Annular domain between two radial graphs. `data_on_outer` records which
/// wall carries the vorticity boundary data (the stream data lives on both).
#[derive(Clone, Debug)]
pub struct DomainSpec {
    pub inner: RadialCurve,
    pub outer: RadialCurve,
    pub data_on_outer: bool,
}

impl DomainSpec {
    /// Round annulus r_in < |x| < r_out with data on the outer wall.
    pub fn annulus(r_in: f64, r_out: f64) -> Self {
        assert!(0.0 < r_in && r_in < r_out);
        DomainSpec { inner: RadialCurve::circle(r_in), outer: RadialCurve::circle(r_out), data_on_outer: true }
    }

    pub fn new(inner: RadialCurve, outer: RadialCurve, data_on_outer: bool) -> Result<Self, GeometryError> {
        for s in 0..4096 {
            let theta = TWO_PI * s as f64 / 4096.0;
            let ri = inner.radius(theta);
            let ro = outer.radius(theta);
            if !(ri > 0.0) {
                return Err(GeometryError::NonpositiveRadius { theta, radius: ri });
            }
            if ri >= ro {
                return Err(GeometryError::WallsCross { theta, inner: ri, outer: ro });
            }
        }
        Ok(DomainSpec { inner, outer, data_on_outer })
    }

    pub fn wall(&self, w: Wall) -> &RadialCurve {
        match w {
            Wall::Inner => &self.inner,
            Wall::Outer => &self.outer,
        }
    }

    /// Wall carrying the vorticity data.
    pub fn data_wall(&self) -> Wall {
        if self.data_on_outer {
            Wall::Outer
        } else {
            Wall::Inner
        }
    }

    /// Unit normal pointing out of the domain at the given wall.
    pub fn outward_normal(&self, w: Wall, theta: f64) -> Point2 {
        let n = self.wall(w).radial_normal(theta);
        match w {
            Wall::Outer => n,
            Wall::Inner => -n,
        }
    }

    pub fn contains(&self, p: Point2) -> bool {
        let theta = p.angle();
        let r = p.norm();
        self.inner.radius(theta) < r && r < self.outer.radius(theta)
    }

    /// Largest disc of the form B(c, rho) with c on the positive x axis that
    /// fits inside the domain (found by sampling, shrinking by 0.9 until the
    /// sampled disc boundary is interior).
    pub fn inscribed_disc(&self) -> (Point2, f64) {
        let ri = self.inner.radius(0.0);
        let ro = self.outer.radius(0.0);
        let center = Point2::new(0.5 * (ri + ro), 0.0);
        let mut rho = 0.5 * (ro - ri);
        for _ in 0..200 {
            let mut ok = true;
            for s in 0..512 {
                let phi = TWO_PI * s as f64 / 512.0;
                let p = center + rho * Point2::new(phi.cos(), phi.sin());
                if !self.contains(p) {
                    ok = false;
                    break;
                }
            }
            if ok {
                return (center, rho);
            }
            rho *= 0.9;
        }
        (center, rho)
    }
}

/// Structured triangulation of an annulus (or a disc, for test fixtures).
///
/// Annulus layout: vertex (layer i, sector j) has index i*n_sectors + j,
/// i = 0 (inner wall) .. n_layers (outer wall), theta_j = 2 pi j / n_sectors.
/// Disc layout: vertex 0 is the center, ring i >= 1 starts at 1 + (i-1)*n_sectors.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<Point2>,
    /// CCW vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// neighbors[t][e] is the triangle across edge (v_e, v_{e+1}) of t.
    pub neighbors: Vec<[Option<usize>; 3]>,
    /// Wall membership per vertex; None for interior vertices.
    pub wall_of_vertex: Vec<Option<Wall>>,
    pub n_layers: usize,
    pub n_sectors: usize,
    has_center: bool,
    inner: RadialCurve,
    outer: RadialCurve,
}

/// Polar-grid triangulation of the annular domain. `n_layers` radial cell
/// layers, `n_sectors` angular sectors (>= 3).
pub fn build_mesh(domain: &DomainSpec, n_layers: usize, n_sectors: usize) -> Mesh {
    assert!(n_layers >= 1 && n_sectors >= 3);
    let nt = n_sectors;
    let mut vertices = Vec::with_capacity((n_layers + 1) * nt);
    let mut wall_of_vertex = Vec::with_capacity((n_layers + 1) * nt);
    for i in 0..=n_layers {
        let s = i as f64 / n_layers as f64;
        for j in 0..nt {
            let theta = TWO_PI * j as f64 / nt as f64;
            let r = (1.0 - s) * domain.inner.radius(theta) + s * domain.outer.radius(theta);
            vertices.push(Point2::new(r * theta.cos(), r * theta.sin()));
            wall_of_vertex.push(if i == 0 {
                Some(Wall::Inner)
            } else if i == n_layers {
                Some(Wall::Outer)
            } else {
                None
            });
        }
    }
    let mut triangles = Vec::with_capacity(2 * n_layers * nt);
    for i in 0..n_layers {
        for j in 0..nt {
            let jn = (j + 1) % nt;
            let a = i * nt + j;
            let b = i * nt + jn;
            let c = (i + 1) * nt + j;
            let d = (i + 1) * nt + jn;
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    let neighbors = build_neighbors(vertices.len(), &triangles);
    Mesh {
        vertices,
        triangles,
        neighbors,
        wall_of_vertex,
        n_layers,
        n_sectors,
        has_center: false,
        inner: domain.inner.clone(),
        outer: domain.outer.clone(),
    }
}

/// Fan-plus-rings triangulation of the disc |x| < radius (eigenvalue and
/// convergence fixtures). The boundary is marked as the outer wall.
pub fn disc_mesh(radius: f64, n_layers: usize, n_sectors: usize) -> Mesh {
    assert!(n_layers >= 1 && n_sectors >= 3);
    let nt = n_sectors;
    let mut vertices = vec![Point2::ZERO];
    let mut wall_of_vertex = vec![None];
    for i in 1..=n_layers {
        let r = radius * i as f64 / n_layers as f64;
        for j in 0..nt {
            let theta = TWO_PI * j as f64 / nt as f64;
            vertices.push(Point2::new(r * theta.cos(), r * theta.sin()));
            wall_of_vertex.push(if i == n_layers { Some(Wall::Outer) } else { None });
        }
    }
    let ring = |i: usize, j: usize| 1 + (i - 1) * nt + (j % nt);
    let mut triangles = Vec::with_capacity(nt + 2 * (n_layers - 1) * nt);
    for j in 0..nt {
        triangles.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..n_layers {
        for j in 0..nt {
            let a = ring(i, j);
            let b = ring(i, j + 1);
            let c = ring(i + 1, j);
            let d = ring(i + 1, j + 1);
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    let neighbors = build_neighbors(vertices.len(), &triangles);
    Mesh {
        vertices,
        triangles,
        neighbors,
        wall_of_vertex,
        n_layers,
        n_sectors,
        has_center: true,
        inner: RadialCurve::circle(0.0),
        outer: RadialCurve::circle(radius),
    }
}

fn build_neighbors(_n_vertices: usize, triangles: &[[usize; 3]]) -> Vec<[Option<usize>; 3]> {
    // Edge (min,max) -> (triangle, local edge); pair identical edges.
    let mut edges: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(3 * triangles.len());
    for (t, tri) in triangles.iter().enumerate() {
        for e in 0..3 {
            let u = tri[e];
            let v = tri[(e + 1) % 3];
            let (lo, hi) = if u < v { (u, v) } else { (v, u) };
            edges.push((lo, hi, t, e));
        }
    }
    edges.sort_unstable();
    let mut neighbors = vec![[None; 3]; triangles.len()];
    let mut k = 0;
    while k + 1 < edges.len() {
        if edges[k].0 == edges[k + 1].0 && edges[k].1 == edges[k + 1].1 {
            let (_, _, t1, e1) = edges[k];
            let (_, _, t2, e2) = edges[k + 1];
            neighbors[t1][e1] = Some(t2);
            neighbors[t2][e2] = Some(t1);
            k += 2;
        } else {
            k += 1;
        }
    }
    neighbors
}

enum WalkOutcome {
    Inside(usize, [f64; 3]),
    Stuck(usize, [f64; 3]),
    Lost,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex_index(&self, layer: usize, sector: usize) -> usize {
        let j = sector % self.n_sectors;
        if self.has_center {
            if layer == 0 {
                0
            } else {
                1 + (layer - 1) * self.n_sectors + j
            }
        } else {
            layer * self.n_sectors + j
        }
    }

    pub fn sector_theta(&self, sector: usize) -> f64 {
        TWO_PI * (sector % self.n_sectors) as f64 / self.n_sectors as f64
    }

    /// (layer, sector) of a vertex; the disc center reports (0, 0).
    pub fn layer_sector(&self, v: usize) -> (usize, usize) {
        if self.has_center {
            if v == 0 {
                (0, 0)
            } else {
                ((v - 1) / self.n_sectors + 1, (v - 1) % self.n_sectors)
            }
        } else {
            (v / self.n_sectors, v % self.n_sectors)
        }
    }

    /// Angular coordinate of a vertex implied by the grid layout.
    pub fn vertex_theta(&self, v: usize) -> f64 {
        let (_, j) = self.layer_sector(v);
        self.sector_theta(j)
    }

    /// Vertices on a wall, ordered by sector.
    pub fn wall_vertices(&self, w: Wall) -> Vec<usize> {
        let layer = match w {
            Wall::Inner => 0,
            Wall::Outer => self.n_layers,
        };
        (0..self.n_sectors).map(|j| self.vertex_index(layer, j)).collect()
    }

    pub fn triangle_points(&self, t: usize) -> [Point2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Signed area (positive by the CCW invariant).
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [p, q, r] = self.triangle_points(t);
        0.5 * (q - p).cross(r - p)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Longest edge in the mesh.
    pub fn h_max(&self) -> f64 {
        let mut h: f64 = 0.0;
        for tri in &self.triangles {
            for e in 0..3 {
                h = h.max(self.vertices[tri[e]].dist(self.vertices[tri[(e + 1) % 3]]));
            }
        }
        h
    }

    pub fn barycentric(&self, t: usize, p: Point2) -> [f64; 3] {
        let [a, b, c] = self.triangle_points(t);
        let area2 = (b - a).cross(c - a);
        [
            (b - p).cross(c - p) / area2,
            (c - p).cross(a - p) / area2,
            (a - p).cross(b - p) / area2,
        ]
    }

    fn grid_candidate(&self, p: Point2) -> usize {
        let theta = {
            let a = p.angle();
            if a < 0.0 {
                a + TWO_PI
            } else {
                a
            }
        };
        let nt = self.n_sectors;
        let j = ((theta / TWO_PI * nt as f64) as usize).min(nt - 1);
        let ri = self.inner.radius(theta);
        let ro = self.outer.radius(theta);
        let s = ((p.norm() - ri) / (ro - ri)).max(0.0).min(1.0 - 1e-12);
        let i = ((s * self.n_layers as f64) as usize).min(self.n_layers - 1);
        if self.has_center {
            if i == 0 {
                j
            } else {
                self.n_sectors + 2 * ((i - 1) * nt + j)
            }
        } else {
            2 * (i * nt + j)
        }
    }

    fn walk(&self, p: Point2, start: usize) -> WalkOutcome {
        let tol = 1e-12;
        let mut t = start.min(self.triangles.len() - 1);
        let max_steps = 4 * (self.n_layers + self.n_sectors) + 16;
        for _ in 0..max_steps {
            let bary = self.barycentric(t, p);
            let mut kmin = 0;
            for k in 1..3 {
                if bary[k] < bary[kmin] {
                    kmin = k;
                }
            }
            if bary[kmin] >= -tol {
                return WalkOutcome::Inside(t, bary);
            }
            // Cross the edge opposite the most negative vertex.
            match self.neighbors[t][(kmin + 1) % 3] {
                Some(next) => t = next,
                None => return WalkOutcome::Stuck(t, bary),
            }
        }
        WalkOutcome::Lost
    }

    /// Triangle containing p plus barycentric coordinates, or None if p is
    /// outside the triangulated domain. `hint` seeds the walk (pass the
    /// previous result when querying along a path).
    pub fn locate(&self, p: Point2, hint: Option<usize>) -> Option<(usize, [f64; 3])> {
        let start = hint.unwrap_or_else(|| self.grid_candidate(p));
        match self.walk(p, start) {
            WalkOutcome::Inside(t, b) => Some((t, b)),
            WalkOutcome::Stuck(..) => None,
            WalkOutcome::Lost => {
                // Deformed meshes can defeat the walk near reentrant bulges;
                // fall back to scanning.
                for t in 0..self.triangles.len() {
                    let b = self.barycentric(t, p);
                    if b[0] >= -1e-12 && b[1] >= -1e-12 && b[2] >= -1e-12 {
                        return Some((t, b));
                    }
                }
                None
            }
        }
    }

    /// Like `locate`, but clamps points that fall marginally outside the
    /// triangulation (event endpoints land on the analytic boundary, which
    /// lies slightly beyond the polygonal mesh boundary) onto the nearest
    /// triangle found. Coordinates are clamped to the simplex.
    pub fn locate_clamped(&self, p: Point2, hint: Option<usize>) -> (usize, [f64; 3]) {
        let start = hint.unwrap_or_else(|| self.grid_candidate(p));
        let (t, bary) = match self.walk(p, start) {
            WalkOutcome::Inside(t, b) | WalkOutcome::Stuck(t, b) => (t, b),
            WalkOutcome::Lost => {
                let mut best = (0, [f64::NEG_INFINITY; 3]);
                let mut best_min = f64::NEG_INFINITY;
                for t in 0..self.triangles.len() {
                    let b = self.barycentric(t, p);
                    let m = b[0].min(b[1]).min(b[2]);
                    if m > best_min {
                        best_min = m;
                        best = (t, b);
                    }
                }
                best
            }
        };
        let mut b = bary;
        let mut sum = 0.0;
        for k in 0..3 {
            b[k] = b[k].max(0.0);
            sum += b[k];
        }
        for k in 0..3 {
            b[k] /= sum;
        }
        (t, b)
    }
}
