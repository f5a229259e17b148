//! Compact sets A ⊂ R^p with intrinsic dimension d: metric, projection onto
//! A, uniform sampling, and quadrature for the d-dimensional surface measure.
//! All other modules stay domain-agnostic through this interface.
//!
//! The norm is Euclidean throughout; the flat torus additionally wraps every
//! axis by its period (minimal-image convention). Implicit-surface quadrature
//! weights are first-order area estimates: good enough for density
//! normalization and covering estimates, never used where exact identities
//! are asserted.

use std::f64::consts::PI;
use std::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::neighbors::Configuration;
use crate::reduce;
use crate::{Error, Result};

/// Ambient coordinates of a single point.
pub type Point = Vec<f64>;

/// Default tolerance on the level-function residual for implicit projections.
pub const PROJECTION_TOL: f64 = 1e-10;

/// Default Newton iteration budget for implicit projections.
pub const NEWTON_BUDGET: usize = 50;

/// A surface {f = 0} in R^3 given by its level function and gradient.
///
/// Projection walks Newton steps along the gradient until |f| drops below
/// `tol`. The bounding box must contain the whole level set; rejection
/// sampling and quadrature scan it.
#[derive(Clone, Copy)]
pub struct ImplicitSurface {
    pub name: &'static str,
    pub f: fn(&[f64]) -> f64,
    pub grad: fn(&[f64]) -> [f64; 3],
    pub bbox: [[f64; 2]; 3],
    pub tol: f64,
    pub budget: usize,
}

impl fmt::Debug for ImplicitSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImplicitSurface").field("name", &self.name).finish()
    }
}

fn genus2_f(x: &[f64]) -> f64 {
    let (a, b, c) = (x[0], x[1], x[2]);
    2.0 * b * (b * b - 3.0 * a * a) * (1.0 - c * c) + (a * a + b * b).powi(2)
        - (9.0 * c * c - 1.0) * (1.0 - c * c)
}

fn genus2_grad(x: &[f64]) -> [f64; 3] {
    let (a, b, c) = (x[0], x[1], x[2]);
    let r2 = a * a + b * b;
    [
        -12.0 * a * b * (1.0 - c * c) + 4.0 * a * r2,
        (6.0 * b * b - 6.0 * a * a) * (1.0 - c * c) + 4.0 * b * r2,
        -4.0 * b * c * (b * b - 3.0 * a * a) + 36.0 * c * c * c - 20.0 * c,
    ]
}

const RING_R: f64 = 1.0;
const RING_RHO: f64 = 0.4;

fn ring_torus_f(x: &[f64]) -> f64 {
    let u = x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + RING_R * RING_R - RING_RHO * RING_RHO;
    u * u - 4.0 * RING_R * RING_R * (x[0] * x[0] + x[1] * x[1])
}

fn ring_torus_grad(x: &[f64]) -> [f64; 3] {
    let u = x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + RING_R * RING_R - RING_RHO * RING_RHO;
    let w = 2.0 * RING_R * RING_R;
    [4.0 * x[0] * (u - w), 4.0 * x[1] * (u - w), 4.0 * x[2] * u]
}

/// Look up a built-in implicit surface by name.
///
/// `"genus2"` is a smooth two-handled surface, used by the surface demo as an
/// illustrative stand-in for "some closed surface of nontrivial topology".
/// `"ring-torus"` has surface area exactly 4π²Rρ (R=1, ρ=0.4), which pins
/// down the quality of the approximate quadrature in tests.
pub fn implicit_builtin(name: &str) -> Option<ImplicitSurface> {
    match name {
        "genus2" => Some(ImplicitSurface {
            name: "genus2",
            f: genus2_f,
            grad: genus2_grad,
            // Widest lobes reach x² + y² = r² with r³ = r² + r + 1 (r ≈ 1.84)
            // at z = 0; the level set stays strictly inside |z| ≤ 1.
            bbox: [[-1.9, 1.9], [-1.9, 1.9], [-1.1, 1.1]],
            tol: PROJECTION_TOL,
            budget: NEWTON_BUDGET,
        }),
        "ring-torus" => Some(ImplicitSurface {
            name: "ring-torus",
            f: ring_torus_f,
            grad: ring_torus_grad,
            bbox: [[-1.45, 1.45], [-1.45, 1.45], [-0.45, 0.45]],
            tol: PROJECTION_TOL,
            budget: NEWTON_BUDGET,
        }),
        _ => None,
    }
}

/// A compact set A ⊂ R^p together with everything the rest of the crate
/// needs from it: intrinsic dimension, metric, projection, sampler,
/// quadrature.
#[derive(Clone, Debug)]
pub enum DomainDescriptor {
    /// Axis-aligned product of closed intervals; d = p.
    Box { bounds: Vec<[f64; 2]> },
    /// Flat torus: each axis wraps with its own period; d = p.
    Torus { period: Vec<f64> },
    /// Round sphere in R^3; d = 2.
    Sphere { center: [f64; 3], radius: f64 },
    /// Level set {f = 0} of a built-in function in R^3; d = 2.
    Implicit { surface: ImplicitSurface },
}

impl DomainDescriptor {
    pub fn new_box(bounds: Vec<[f64; 2]>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidDomain("box needs at least one axis".into()));
        }
        for b in &bounds {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
                return Err(Error::InvalidDomain(format!(
                    "box bounds must be finite and ordered, got [{}, {}]",
                    b[0], b[1]
                )));
            }
        }
        Ok(DomainDescriptor::Box { bounds })
    }

    /// The unit cube [0,1]^d.
    pub fn cube(d: usize) -> Self {
        DomainDescriptor::Box { bounds: vec![[0.0, 1.0]; d] }
    }

    pub fn torus(period: Vec<f64>) -> Result<Self> {
        if period.is_empty() {
            return Err(Error::InvalidDomain("torus needs at least one axis".into()));
        }
        if period.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::InvalidDomain("torus periods must be positive".into()));
        }
        Ok(DomainDescriptor::Torus { period })
    }

    /// The flat torus with period 1 on every axis.
    pub fn unit_torus(d: usize) -> Self {
        DomainDescriptor::Torus { period: vec![1.0; d] }
    }

    pub fn sphere(radius: f64) -> Result<Self> {
        Self::sphere_at([0.0; 3], radius)
    }

    pub fn sphere_at(center: [f64; 3], radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidDomain("sphere radius must be positive".into()));
        }
        Ok(DomainDescriptor::Sphere { center, radius })
    }

    pub fn implicit(name: &str) -> Result<Self> {
        implicit_builtin(name)
            .map(|surface| DomainDescriptor::Implicit { surface })
            .ok_or_else(|| Error::UnknownName(format!("implicit surface '{name}'")))
    }

    /// Ambient dimension p.
    pub fn p(&self) -> usize {
        match self {
            DomainDescriptor::Box { bounds } => bounds.len(),
            DomainDescriptor::Torus { period } => period.len(),
            DomainDescriptor::Sphere { .. } | DomainDescriptor::Implicit { .. } => 3,
        }
    }

    /// Intrinsic dimension d (the dimension of the surface measure).
    pub fn d(&self) -> usize {
        match self {
            DomainDescriptor::Box { bounds } => bounds.len(),
            DomainDescriptor::Torus { period } => period.len(),
            DomainDescriptor::Sphere { .. } | DomainDescriptor::Implicit { .. } => 2,
        }
    }

    /// Per-axis periods when the metric wraps, None otherwise.
    pub(crate) fn periods(&self) -> Option<&[f64]> {
        match self {
            DomainDescriptor::Torus { period } => Some(period),
            _ => None,
        }
    }

    /// Project an ambient point onto A.
    ///
    /// Box: componentwise clamp. Torus: componentwise modulo into [0, period).
    /// Sphere: radial normalization. Implicit surface: Newton steps along the
    /// level-function gradient until |f| < tol, erroring out with the residual
    /// if the budget is exhausted.
    pub fn project(&self, x: &[f64]) -> Result<Point> {
        debug_assert_eq!(x.len(), self.p());
        match self {
            DomainDescriptor::Box { bounds } => Ok(x
                .iter()
                .zip(bounds)
                .map(|(&v, b)| v.clamp(b[0], b[1]))
                .collect()),
            DomainDescriptor::Torus { period } => {
                Ok(x.iter().zip(period).map(|(&v, &p)| wrap(v, p)).collect())
            }
            DomainDescriptor::Sphere { center, radius } => {
                let rel: Vec<f64> = x.iter().zip(center).map(|(&v, &c)| v - c).collect();
                let norm = rel.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::ProjectionFailed { residual: *radius });
                }
                Ok(rel
                    .iter()
                    .zip(center)
                    .map(|(&v, &c)| c + v * radius / norm)
                    .collect())
            }
            DomainDescriptor::Implicit { surface } => {
                let mut y = x.to_vec();
                let mut fv = (surface.f)(&y);
                for _ in 0..surface.budget {
                    if fv.abs() < surface.tol {
                        return Ok(y);
                    }
                    let g = (surface.grad)(&y);
                    let g2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
                    if g2 == 0.0 {
                        break;
                    }
                    let t = fv / g2;
                    for (yi, gi) in y.iter_mut().zip(g) {
                        *yi -= t * gi;
                    }
                    fv = (surface.f)(&y);
                }
                if fv.abs() < surface.tol {
                    Ok(y)
                } else {
                    Err(Error::ProjectionFailed { residual: fv.abs() })
                }
            }
        }
    }

    /// Squared distance under the domain metric. This is the single source of
    /// truth for distances: the neighbor graph, its brute-force oracle, and
    /// every analysis routine all call it, so their orderings agree bit for
    /// bit.
    pub fn dist2(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.periods() {
            None => x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum(),
            Some(periods) => x
                .iter()
                .zip(y)
                .zip(periods)
                .map(|((&a, &b), &p)| {
                    let mut delta = (a - b).abs();
                    if delta > 0.5 * p {
                        delta = p - delta;
                    }
                    delta * delta
                })
                .sum(),
        }
    }

    /// Distance under the domain metric (Euclidean; minimal image on tori).
    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        self.dist2(x, y).sqrt()
    }

    /// Signed displacement x − y, taken through the nearest periodic image on
    /// tori. Its Euclidean norm equals `dist(x, y)`.
    pub fn displacement_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self.periods() {
            None => {
                for ((o, &a), &b) in out.iter_mut().zip(x).zip(y) {
                    *o = a - b;
                }
            }
            Some(periods) => {
                for (((o, &a), &b), &p) in out.iter_mut().zip(x).zip(y).zip(periods) {
                    let mut delta = a - b;
                    if delta > 0.5 * p {
                        delta -= p;
                    } else if delta < -0.5 * p {
                        delta += p;
                    }
                    *o = delta;
                }
            }
        }
    }

    /// Draw n points on A, i.i.d. uniform for box and torus, rotation
    /// invariant for the sphere, rejection-plus-projection for implicit
    /// surfaces. Deterministic for a fixed seed.
    pub fn sample_uniform(&self, n: usize, seed: u64) -> Result<Configuration> {
        if n == 0 {
            return Err(Error::InvalidInput("sample_uniform needs n >= 1".into()));
        }
        let p = self.p();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords = Vec::with_capacity(n * p);
        match self {
            DomainDescriptor::Box { bounds } => {
                for _ in 0..n {
                    for b in bounds {
                        coords.push(b[0] + rng.random::<f64>() * (b[1] - b[0]));
                    }
                }
            }
            DomainDescriptor::Torus { period } => {
                for _ in 0..n {
                    for &pr in period {
                        coords.push(rng.random::<f64>() * pr);
                    }
                }
            }
            DomainDescriptor::Sphere { center, radius } => {
                for _ in 0..n {
                    loop {
                        let v: [f64; 3] = [
                            rng.sample(StandardNormal),
                            rng.sample(StandardNormal),
                            rng.sample(StandardNormal),
                        ];
                        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                        if norm > 1e-12 {
                            for i in 0..3 {
                                coords.push(center[i] + v[i] * radius / norm);
                            }
                            break;
                        }
                    }
                }
            }
            DomainDescriptor::Implicit { surface } => {
                let mut accepted = 0;
                let budget = 200 * n;
                for _ in 0..budget {
                    if accepted == n {
                        break;
                    }
                    let x: Vec<f64> = surface
                        .bbox
                        .iter()
                        .map(|b| b[0] + rng.random::<f64>() * (b[1] - b[0]))
                        .collect();
                    if let Ok(y) = self.project(&x) {
                        coords.extend_from_slice(&y);
                        accepted += 1;
                    }
                }
                if accepted < n {
                    return Err(Error::SamplingFailed(format!(
                        "implicit surface '{}': {accepted}/{n} points after {budget} attempts",
                        surface.name
                    )));
                }
            }
        }
        Ok(Configuration::new(coords, p))
    }

    /// Draw n points on a near-cubical grid, each jittered uniformly within
    /// the central `jitter` fraction of its cell (1 = fully random within
    /// the cell, 0 = exact lattice). Boxes and tori only.
    ///
    /// Box grids include the walls (per-axis nodes idx/(m-1)): hard-wall
    /// minimizers put points on the boundary, and a wall-free lattice would
    /// have to stretch globally to reach them. Torus grids use cell
    /// midpoints. Seeds optimizers with the right macrostructure; leftover
    /// cells beyond the grid are filled by uniform draws, so any n works.
    pub fn sample_stratified(&self, n: usize, jitter: f64, seed: u64) -> Result<Configuration> {
        if n == 0 {
            return Err(Error::InvalidInput("sample_stratified needs n >= 1".into()));
        }
        if !(0.0..=1.0).contains(&jitter) {
            return Err(Error::InvalidInput(format!(
                "jitter fraction must be in [0,1], got {jitter}"
            )));
        }
        let (ranges, walls): (Vec<[f64; 2]>, bool) = match self {
            DomainDescriptor::Box { bounds } => (bounds.clone(), true),
            DomainDescriptor::Torus { period } => {
                (period.iter().map(|&pr| [0.0, pr]).collect(), false)
            }
            _ => {
                return Err(Error::InvalidInput(
                    "stratified sampling needs a box or torus".into(),
                ))
            }
        };
        let p = self.p();
        let m = (n as f64).powf(1.0 / p as f64).floor().max(1.0) as usize;
        let cells = m.pow(p as u32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords = Vec::with_capacity(n * p);
        for cell in 0..cells.min(n) {
            let mut rest = cell;
            for r in ranges.iter() {
                let idx = rest % m;
                rest /= m;
                let offset = jitter * (rng.random::<f64>() - 0.5);
                let t = if walls && m > 1 {
                    ((idx as f64 + offset) / (m - 1) as f64).clamp(0.0, 1.0)
                } else {
                    (idx as f64 + 0.5 + offset) / m as f64
                };
                coords.push(r[0] + t * (r[1] - r[0]));
            }
        }
        for _ in cells.min(n)..n {
            for r in ranges.iter() {
                coords.push(r[0] + rng.random::<f64>() * (r[1] - r[0]));
            }
        }
        Ok(Configuration::new(coords, p))
    }

    /// Discretize the surface measure of A.
    ///
    /// Box and torus use the tensor midpoint rule with `resolution` cells per
    /// axis; the sphere uses equal-area latitude bands times uniform
    /// longitude sectors; implicit surfaces use a smoothed-delta scan of the
    /// bounding box (approximate, first order in the grid spacing).
    pub fn build_quadrature(&self, resolution: usize) -> Result<Quadrature> {
        if resolution < 2 {
            return Err(Error::InvalidInput("quadrature resolution must be >= 2".into()));
        }
        let p = self.p();
        match self {
            DomainDescriptor::Box { bounds } => {
                let sides: Vec<f64> = bounds.iter().map(|b| b[1] - b[0]).collect();
                let origins: Vec<f64> = bounds.iter().map(|b| b[0]).collect();
                Ok(tensor_midpoint(&origins, &sides, resolution))
            }
            DomainDescriptor::Torus { period } => {
                Ok(tensor_midpoint(&vec![0.0; p], period, resolution))
            }
            DomainDescriptor::Sphere { center, radius } => {
                let n_theta = resolution;
                let n_phi = 2 * resolution;
                let w = radius * radius * (2.0 / n_theta as f64) * (2.0 * PI / n_phi as f64);
                let mut nodes = Vec::with_capacity(n_theta * n_phi * 3);
                for j in 0..n_theta {
                    let cos_theta = 1.0 - 2.0 * (j as f64 + 0.5) / n_theta as f64;
                    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
                    for i in 0..n_phi {
                        let phi = 2.0 * PI * (i as f64 + 0.5) / n_phi as f64;
                        nodes.push(center[0] + radius * sin_theta * phi.cos());
                        nodes.push(center[1] + radius * sin_theta * phi.sin());
                        nodes.push(center[2] + radius * cos_theta);
                    }
                }
                let count = n_theta * n_phi;
                // Patch extent: polar band opening angle by the equatorial
                // sector width; node sits mid-patch.
                let theta_polar = (1.0_f64 - 2.0 / n_theta as f64).acos();
                let mesh = 0.5 * radius * theta_polar.hypot(2.0 * PI / n_phi as f64);
                Ok(Quadrature {
                    p: 3,
                    nodes,
                    weights: vec![w; count],
                    total: 4.0 * PI * radius * radius,
                    mesh,
                })
            }
            DomainDescriptor::Implicit { surface } => {
                let m = resolution;
                let h: Vec<f64> =
                    surface.bbox.iter().map(|b| (b[1] - b[0]) / m as f64).collect();
                let vol = h[0] * h[1] * h[2];
                let h_diag = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
                let mut nodes = Vec::new();
                let mut weights = Vec::new();
                let mut c = [0.0f64; 3];
                for i in 0..m {
                    c[0] = surface.bbox[0][0] + (i as f64 + 0.5) * h[0];
                    for j in 0..m {
                        c[1] = surface.bbox[1][0] + (j as f64 + 0.5) * h[1];
                        for l in 0..m {
                            c[2] = surface.bbox[2][0] + (l as f64 + 0.5) * h[2];
                            let fv = (surface.f)(&c);
                            let g = (surface.grad)(&c);
                            let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                            let eps = 1.5 * gn * h_diag;
                            if gn == 0.0 || fv.abs() >= eps {
                                continue;
                            }
                            // Coarea: area = ∫ δ(f)·|∇f| dV, with δ smoothed
                            // over the band |f| < eps.
                            let delta = (1.0 + (PI * fv / eps).cos()) / (2.0 * eps);
                            let Ok(node) = self.project(&c) else { continue };
                            nodes.extend_from_slice(&node);
                            weights.push(vol * delta * gn);
                        }
                    }
                }
                if weights.is_empty() {
                    return Err(Error::InvalidInput(format!(
                        "no quadrature nodes found for '{}' at resolution {m}",
                        surface.name
                    )));
                }
                let total = reduce::pairwise_sum(&weights);
                Ok(Quadrature { p: 3, nodes, weights, total, mesh: 2.0 * h_diag })
            }
        }
    }

    /// Whether x lies on A within `tol` (by distance to its projection).
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self.project(x) {
            Ok(y) => self.dist(x, &y) <= tol,
            Err(_) => false,
        }
    }

    /// Characteristic linear size, used for step and jitter heuristics.
    pub fn scale_hint(&self) -> f64 {
        match self {
            DomainDescriptor::Box { bounds } => geometric_mean_side(bounds),
            DomainDescriptor::Torus { period } => {
                let logs: f64 = period.iter().map(|p| p.ln()).sum();
                (logs / period.len() as f64).exp()
            }
            DomainDescriptor::Sphere { radius, .. } => 2.0 * radius,
            DomainDescriptor::Implicit { surface } => {
                0.5 * bbox_diagonal(&surface.bbox)
            }
        }
    }

    /// Upper estimate of the diameter of A under the domain metric.
    pub fn diameter_hint(&self) -> f64 {
        match self {
            DomainDescriptor::Box { bounds } => bounds
                .iter()
                .map(|b| (b[1] - b[0]) * (b[1] - b[0]))
                .sum::<f64>()
                .sqrt(),
            DomainDescriptor::Torus { period } => {
                period.iter().map(|p| 0.25 * p * p).sum::<f64>().sqrt()
            }
            DomainDescriptor::Sphere { radius, .. } => 2.0 * radius,
            DomainDescriptor::Implicit { surface } => bbox_diagonal(&surface.bbox),
        }
    }
}

fn wrap(v: f64, period: f64) -> f64 {
    let w = v.rem_euclid(period);
    // rem_euclid can return `period` itself for tiny negative inputs.
    if w >= period {
        w - period
    } else {
        w
    }
}

fn geometric_mean_side(bounds: &[[f64; 2]]) -> f64 {
    let logs: f64 = bounds.iter().map(|b| (b[1] - b[0]).ln()).sum();
    (logs / bounds.len() as f64).exp()
}

fn bbox_diagonal(bbox: &[[f64; 2]; 3]) -> f64 {
    bbox.iter().map(|b| (b[1] - b[0]) * (b[1] - b[0])).sum::<f64>().sqrt()
}

fn tensor_midpoint(origins: &[f64], sides: &[f64], m: usize) -> Quadrature {
    let d = origins.len();
    let count = m.pow(d as u32);
    let cell_vol: f64 = sides.iter().map(|s| s / m as f64).product();
    let mut nodes = Vec::with_capacity(count * d);
    let mut index = vec![0usize; d];
    for _ in 0..count {
        for a in 0..d {
            nodes.push(origins[a] + (index[a] as f64 + 0.5) * sides[a] / m as f64);
        }
        for a in (0..d).rev() {
            index[a] += 1;
            if index[a] < m {
                break;
            }
            index[a] = 0;
        }
    }
    // Total is the analytic volume, not the rounded sum of cell volumes.
    let total: f64 = sides.iter().product();
    let mesh = 0.5
        * sides
            .iter()
            .map(|s| (s / m as f64) * (s / m as f64))
            .sum::<f64>()
            .sqrt();
    Quadrature { p: d, nodes, weights: vec![cell_vol; count], total, mesh }
}

/// Discretization of the surface measure of a domain: nodes on A with
/// positive weights summing to (approximately) the total measure.
#[derive(Clone, Debug)]
pub struct Quadrature {
    pub p: usize,
    nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Total measure represented; analytic where known, summed otherwise.
    pub total: f64,
    /// Estimated max distance from a point of A to its nearest node. Reported
    /// alongside covering radii as the proxy error of node-based estimates.
    pub mesh: f64,
}

impl Quadrature {
    /// Assemble a quadrature from explicit nodes and weights.
    ///
    /// `nodes` is flat, p coordinates per node. Total is the weight sum; the
    /// mesh norm is unknown for arbitrary node sets and reported as NaN.
    pub fn from_parts(p: usize, nodes: Vec<f64>, weights: Vec<f64>) -> Self {
        assert!(p >= 1, "node dimension must be >= 1");
        assert_eq!(nodes.len(), weights.len() * p, "node/weight count mismatch");
        let total = crate::reduce::pairwise_sum(&weights);
        Quadrature { p, nodes, weights, total, mesh: f64::NAN }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.p..(i + 1) * self.p]
    }

    pub fn iter_nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.chunks_exact(self.p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_projection_clamps() {
        let dom = DomainDescriptor::cube(2);
        assert_eq!(dom.project(&[1.5, -0.2]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn sphere_projection_normalizes() {
        let dom = DomainDescriptor::sphere(1.0).unwrap();
        assert_eq!(dom.project(&[2.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn torus_projection_wraps() {
        let dom = DomainDescriptor::unit_torus(1);
        let y = dom.project(&[1.3]).unwrap();
        assert!((y[0] - 0.3).abs() < 1e-15);
        let y = dom.project(&[-0.25]).unwrap();
        assert!((y[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn projection_is_idempotent() {
        let domains = [
            DomainDescriptor::cube(3),
            DomainDescriptor::unit_torus(2),
            DomainDescriptor::sphere(2.5).unwrap(),
            DomainDescriptor::implicit("genus2").unwrap(),
            DomainDescriptor::implicit("ring-torus").unwrap(),
        ];
        for dom in &domains {
            let pts = dom.sample_uniform(20, 11).unwrap();
            for i in 0..pts.n() {
                let once = dom.project(pts.point(i)).unwrap();
                let twice = dom.project(&once).unwrap();
                let drift = once
                    .iter()
                    .zip(&twice)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(drift <= 1e-12, "{dom:?} drifted {drift:e}");
            }
        }
    }

    #[test]
    fn torus_distance_wraps_per_axis() {
        let dom = DomainDescriptor::unit_torus(1);
        assert!((dom.dist(&[0.1], &[0.9]) - 0.2).abs() < 1e-15);
        let dom2 = DomainDescriptor::unit_torus(2);
        assert!((dom2.dist(&[0.9, 0.0], &[0.1, 0.0]) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn euclidean_distance_is_plain() {
        let dom = DomainDescriptor::cube(2);
        assert_eq!(dom.dist(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
    }

    #[test]
    fn distance_is_symmetric_and_triangular() {
        let domains = [
            DomainDescriptor::cube(2),
            DomainDescriptor::unit_torus(2),
            DomainDescriptor::sphere(1.0).unwrap(),
        ];
        for dom in &domains {
            let pts = dom.sample_uniform(30, 5).unwrap();
            for i in 0..10 {
                let (a, b, c) = (pts.point(3 * i), pts.point(3 * i + 1), pts.point(3 * i + 2));
                assert_eq!(dom.dist(a, b).to_bits(), dom.dist(b, a).to_bits());
                assert!(dom.dist(a, c) <= dom.dist(a, b) + dom.dist(b, c) + 1e-12);
            }
        }
    }

    #[test]
    fn torus_displacement_matches_distance() {
        let dom = DomainDescriptor::unit_torus(2);
        let x = [0.95, 0.1];
        let y = [0.05, 0.9];
        let mut delta = [0.0; 2];
        dom.displacement_into(&x, &y, &mut delta);
        let norm = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
        assert!((norm - dom.dist(&x, &y)).abs() < 1e-15);
        assert!((delta[0] - (-0.1)).abs() < 1e-12);
        assert!((delta[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_on_domain() {
        let domains = [
            DomainDescriptor::cube(2),
            DomainDescriptor::unit_torus(1),
            DomainDescriptor::sphere(1.0).unwrap(),
            DomainDescriptor::implicit("ring-torus").unwrap(),
        ];
        for dom in &domains {
            let a = dom.sample_uniform(40, 123).unwrap();
            let b = dom.sample_uniform(40, 123).unwrap();
            assert_eq!(a, b, "{dom:?} not reproducible");
            for i in 0..a.n() {
                assert!(dom.contains(a.point(i), 1e-9), "{dom:?} point off domain");
            }
        }
    }

    #[test]
    fn sphere_samples_sit_at_radius() {
        let dom = DomainDescriptor::sphere(1.0).unwrap();
        let pts = dom.sample_uniform(100, 7).unwrap();
        for i in 0..pts.n() {
            let r = pts.point(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn box_midpoint_quadrature_matches_hand_values() {
        let dom = DomainDescriptor::cube(1);
        let q = dom.build_quadrature(4).unwrap();
        let nodes: Vec<f64> = q.iter_nodes().map(|n| n[0]).collect();
        assert_eq!(nodes, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(q.weights.iter().all(|&w| w == 0.25));
        assert_eq!(q.total, 1.0);
    }

    #[test]
    fn unit_square_quadrature_total_is_exact() {
        let q = DomainDescriptor::cube(2).build_quadrature(2).unwrap();
        assert_eq!(q.len(), 4);
        assert_eq!(q.total, 1.0);
        let q3 = DomainDescriptor::cube(3).build_quadrature(5).unwrap();
        assert_eq!(q3.total, 1.0);
    }

    #[test]
    fn sphere_quadrature_total_is_area() {
        let dom = DomainDescriptor::sphere(1.0).unwrap();
        let q = dom.build_quadrature(24).unwrap();
        let summed = q.weights.iter().sum::<f64>();
        assert!((q.total - 4.0 * PI).abs() < 1e-12);
        assert!((summed - q.total).abs() / q.total < 1e-12);
        for i in 0..q.len() {
            assert!(dom.contains(q.node(i), 1e-9));
        }
    }

    #[test]
    fn ring_torus_quadrature_approximates_known_area() {
        // 4π²·R·ρ for the ring torus; the smoothed-delta scan is first order,
        // so only a few percent is expected at this resolution.
        let dom = DomainDescriptor::implicit("ring-torus").unwrap();
        let q = dom.build_quadrature(48).unwrap();
        let exact = 4.0 * PI * PI * RING_R * RING_RHO;
        let rel = (q.total - exact).abs() / exact;
        assert!(rel < 0.03, "area {} vs {exact}, rel {rel}", q.total);
    }

    #[test]
    fn genus2_surface_stays_inside_bbox() {
        // The bounding box must contain the level set: f > 0 on all faces.
        let s = implicit_builtin("genus2").unwrap();
        let m = 40;
        for axis in 0..3 {
            for side in 0..2 {
                for i in 0..=m {
                    for j in 0..=m {
                        let mut x = [0.0; 3];
                        x[axis] = s.bbox[axis][side];
                        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                        x[a] = s.bbox[a][0] + (s.bbox[a][1] - s.bbox[a][0]) * i as f64 / m as f64;
                        x[b] = s.bbox[b][0] + (s.bbox[b][1] - s.bbox[b][0]) * j as f64 / m as f64;
                        assert!((s.f)(&x) > 0.0, "level set touches face at {x:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn implicit_quadrature_nodes_lie_on_surface() {
        let dom = DomainDescriptor::implicit("genus2").unwrap();
        let q = dom.build_quadrature(24).unwrap();
        assert!(q.len() > 100);
        for i in 0..q.len() {
            assert!(dom.contains(q.node(i), 1e-8));
            assert!(q.weights[i] > 0.0);
        }
    }

    #[test]
    fn descriptor_validation_rejects_bad_parameters() {
        assert!(DomainDescriptor::new_box(vec![[1.0, 0.0]]).is_err());
        assert!(DomainDescriptor::new_box(vec![]).is_err());
        assert!(DomainDescriptor::torus(vec![0.0]).is_err());
        assert!(DomainDescriptor::sphere(-1.0).is_err());
        assert!(DomainDescriptor::implicit("nope").is_err());
        assert!(DomainDescriptor::cube(1).sample_uniform(0, 1).is_err());
        assert!(DomainDescriptor::cube(1).build_quadrature(1).is_err());
    }

    #[test]
    fn stratified_grid_includes_box_walls_and_torus_midpoints() {
        let boxy = DomainDescriptor::cube(1);
        let cfg = boxy.sample_stratified(5, 0.0, 1).unwrap();
        let mut xs: Vec<f64> = cfg.coords().to_vec();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);

        let torus = DomainDescriptor::torus(vec![1.0]).unwrap();
        let cfg = torus.sample_stratified(4, 0.0, 1).unwrap();
        let mut xs: Vec<f64> = cfg.coords().to_vec();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);

        let square = DomainDescriptor::cube(2);
        let cfg = square.sample_stratified(9, 0.0, 1).unwrap();
        let corners = cfg
            .iter_points()
            .filter(|pt| pt.iter().all(|&c| c == 0.0 || c == 1.0))
            .count();
        assert_eq!(corners, 4);
    }

    #[test]
    fn stratified_samples_stay_inside_and_reproduce() {
        let square = DomainDescriptor::new_box(vec![[-1.0, 2.0], [0.0, 0.5]]).unwrap();
        // 11 points, 3x3 grid plus two uniform leftovers.
        let a = square.sample_stratified(11, 0.7, 9).unwrap();
        let b = square.sample_stratified(11, 0.7, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 11);
        for pt in a.iter_points() {
            assert!(square.contains(pt, 0.0));
        }
        let c = square.sample_stratified(11, 0.7, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn stratified_sampling_rejects_bad_requests() {
        let cube = DomainDescriptor::cube(2);
        assert!(cube.sample_stratified(0, 0.5, 1).is_err());
        assert!(cube.sample_stratified(8, -0.1, 1).is_err());
        assert!(cube.sample_stratified(8, 1.5, 1).is_err());
        let sphere = DomainDescriptor::sphere(1.0).unwrap();
        assert!(sphere.sample_stratified(8, 0.5, 1).is_err());
    }
}
