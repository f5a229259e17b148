//! Verification instruments: geometric summaries of a configuration and the
//! exactly checkable identities the energy must satisfy.

use rayon::prelude::*;
use serde::Serialize;

use crate::density::DensityTarget;
use crate::energy::{energy, energy_full, EnergyModel, FieldSpec, KSpec, WeightSpec};
use crate::geometry::{DomainDescriptor, Quadrature};
use crate::neighbors::{build_graph, Configuration, KdTree};
use crate::{Error, Result};

/// Minimum pairwise distance, in the domain metric.
pub fn separation(config: &Configuration, domain: &DomainDescriptor) -> Result<f64> {
    if config.n() < 2 {
        return Err(Error::InvalidInput(format!(
            "separation needs at least 2 points, got {}",
            config.n()
        )));
    }
    let graph = build_graph(config, domain, 1)?;
    Ok((0..config.n()).map(|i| graph.row_dist(i)[0]).fold(f64::INFINITY, f64::min))
}

/// Covering radius estimated on quadrature nodes.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CoveringReport {
    /// max over nodes of the distance to the nearest configuration point.
    pub radius: f64,
    /// Mesh norm of the node set: the resolution limit of the estimate
    /// (NaN when the quadrature does not know it).
    pub mesh: f64,
}

/// Estimate the covering radius of `config` in A by sweeping the quadrature
/// nodes. The estimate is a lower bound, sharp up to the reported mesh norm.
pub fn covering_radius(
    config: &Configuration,
    domain: &DomainDescriptor,
    quad: &Quadrature,
) -> Result<CoveringReport> {
    if config.n() == 0 {
        return Err(Error::InvalidInput("covering radius of an empty configuration".into()));
    }
    if quad.is_empty() {
        return Err(Error::InvalidInput("empty quadrature".into()));
    }
    if quad.p != config.p() || config.p() != domain.p() {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    let tree = KdTree::new(config, domain);
    let max_d2 = (0..quad.len())
        .into_par_iter()
        .map(|i| tree.nearest(quad.node(i), None, 1)[0].0)
        .reduce(|| 0.0, f64::max);
    Ok(CoveringReport { radius: max_d2.sqrt(), mesh: quad.mesh })
}

const MAX_CELLS: usize = 1 << 24;

/// A finite partition of a domain into cells, for histogram comparisons.
#[derive(Clone, Copy, Debug)]
pub enum Partition {
    /// `per_axis`^p congruent boxes over the domain's coordinate ranges
    /// (box bounds, torus periods, or the enclosing box otherwise).
    TensorGrid { per_axis: usize },
    /// Bands of equal spherical area between parallels; spheres only.
    LatitudeBands { bands: usize },
}

impl Partition {
    pub fn cell_count(&self, domain: &DomainDescriptor) -> Result<usize> {
        match *self {
            Partition::TensorGrid { per_axis } => {
                if per_axis == 0 {
                    return Err(Error::InvalidInput("per_axis must be >= 1".into()));
                }
                let mut cells = 1usize;
                for _ in 0..domain.p() {
                    cells = cells
                        .checked_mul(per_axis)
                        .filter(|&c| c <= MAX_CELLS)
                        .ok_or_else(|| Error::InvalidInput("partition too fine".into()))?;
                }
                Ok(cells)
            }
            Partition::LatitudeBands { bands } => {
                if bands == 0 {
                    return Err(Error::InvalidInput("bands must be >= 1".into()));
                }
                if !matches!(domain, DomainDescriptor::Sphere { .. }) {
                    return Err(Error::InvalidInput(
                        "latitude bands only partition spheres".into(),
                    ));
                }
                Ok(bands)
            }
        }
    }

    /// Cell index of a point, or None when it lies outside the partition
    /// (beyond a small relative tolerance at the boundary).
    pub fn cell_of(&self, domain: &DomainDescriptor, x: &[f64]) -> Option<usize> {
        match *self {
            Partition::TensorGrid { per_axis } => {
                let ranges = axis_ranges(domain);
                let mut index = 0usize;
                let mut stride = 1usize;
                for (c, r) in ranges.iter().enumerate() {
                    let t = (x[c] - r[0]) / (r[1] - r[0]);
                    if !(-1e-9..=1.0 + 1e-9).contains(&t) {
                        return None;
                    }
                    let cell = ((t * per_axis as f64).floor() as isize)
                        .clamp(0, per_axis as isize - 1) as usize;
                    index += cell * stride;
                    stride *= per_axis;
                }
                Some(index)
            }
            Partition::LatitudeBands { bands } => {
                let DomainDescriptor::Sphere { center, radius } = domain else {
                    return None;
                };
                let cz = ((x[2] - center[2]) / radius).clamp(-1.0, 1.0);
                // Equal steps in cos(theta) give equal-area bands.
                let t = (1.0 - cz) / 2.0;
                Some(((t * bands as f64).floor() as isize).clamp(0, bands as isize - 1) as usize)
            }
        }
    }
}

fn axis_ranges(domain: &DomainDescriptor) -> Vec<[f64; 2]> {
    match domain {
        DomainDescriptor::Box { bounds } => bounds.clone(),
        DomainDescriptor::Torus { period } => period.iter().map(|&p| [0.0, p]).collect(),
        DomainDescriptor::Sphere { center, radius } => {
            center.iter().map(|&c| [c - radius, c + radius]).collect()
        }
        DomainDescriptor::Implicit { surface } => surface.bbox.to_vec(),
    }
}

/// How closely a configuration's cell histogram matches a target density.
#[derive(Clone, Debug, Serialize)]
pub struct DistributionReport {
    pub cell_counts: Vec<usize>,
    /// Target mass per cell, renormalized to sum to 1.
    pub target_masses: Vec<f64>,
    /// Half the L1 distance between the two histograms, in [0, 1].
    pub tv_distance: f64,
    /// Max of |count/N - mass|/mass over cells with mass >= 1/(2·cells).
    pub max_rel_dev: f64,
}

/// Bin the configuration and the target density over a common partition and
/// compare. Cell masses come from the quadrature, so their resolution is
/// bounded by its mesh.
pub fn empirical_density(
    config: &Configuration,
    domain: &DomainDescriptor,
    partition: &Partition,
    target: &DensityTarget,
    quad: &Quadrature,
) -> Result<DistributionReport> {
    let n = config.n();
    if n == 0 {
        return Err(Error::InvalidInput("empty configuration".into()));
    }
    if quad.is_empty() {
        return Err(Error::InvalidInput("empty quadrature".into()));
    }
    let cells = partition.cell_count(domain)?;
    let mut masses = vec![0.0; cells];
    for (node, &w) in quad.iter_nodes().zip(&quad.weights) {
        let cell = partition.cell_of(domain, node).ok_or_else(|| {
            Error::InvalidInput("quadrature node outside the partition".into())
        })?;
        masses[cell] += w * (target.rho)(node);
    }
    let total: f64 = masses.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::InvalidInput(format!("target mass must be positive, got {total}")));
    }
    for m in &mut masses {
        *m /= total;
    }
    let mut counts = vec![0usize; cells];
    for x in config.iter_points() {
        let cell = partition
            .cell_of(domain, x)
            .ok_or_else(|| Error::InvalidInput("point outside the partition".into()))?;
        counts[cell] += 1;
    }
    let nf = n as f64;
    let tv = 0.5
        * counts
            .iter()
            .zip(&masses)
            .map(|(&c, &m)| (c as f64 / nf - m).abs())
            .sum::<f64>();
    let floor = 1.0 / (2.0 * cells as f64);
    let max_rel_dev = counts
        .iter()
        .zip(&masses)
        .filter(|(_, &m)| m >= floor)
        .map(|(&c, &m)| (c as f64 / nf - m).abs() / m)
        .fold(0.0, f64::max);
    Ok(DistributionReport { cell_counts: counts, target_masses: masses, tv_distance: tv, max_rel_dev })
}

/// Least-squares fit of rescaled energies against the finite-size model
/// E/N^{1+s/d} = C + b·N^{-1/d}.
#[derive(Clone, Debug, Serialize)]
pub struct AsymptoticsFit {
    pub c_hat: f64,
    pub b_hat: f64,
    /// Max relative residual of the fit.
    pub residual: f64,
    /// The rescaled inputs (N, E/N^{1+s/d}).
    pub pairs: Vec<(usize, f64)>,
}

/// Fit raw (N, E) pairs to the asymptotic law. Needs at least three strictly
/// increasing N.
pub fn asymptotics_fit(pairs: &[(usize, f64)], s: f64, d: usize) -> Result<AsymptoticsFit> {
    if pairs.len() < 3 {
        return Err(Error::InvalidInput("fit needs >= 3 points".into()));
    }
    if pairs.windows(2).any(|w| w[0].0 >= w[1].0) || pairs[0].0 == 0 {
        return Err(Error::InvalidInput("fit needs strictly increasing positive N".into()));
    }
    if !(s > 0.0) || d == 0 {
        return Err(Error::InvalidInput("need s > 0 and d >= 1".into()));
    }
    let df = d as f64;
    let rescaled: Vec<(usize, f64)> = pairs
        .iter()
        .map(|&(n, e)| (n, e / (n as f64).powf(1.0 + s / df)))
        .collect();
    let m = rescaled.len() as f64;
    let (mut su, mut suu, mut sy, mut suy) = (0.0, 0.0, 0.0, 0.0);
    for &(n, y) in &rescaled {
        let u = (n as f64).powf(-1.0 / df);
        su += u;
        suu += u * u;
        sy += y;
        suy += u * y;
    }
    let det = m * suu - su * su;
    if det.abs() < 1e-300 {
        return Err(Error::SolverFailed("degenerate fit".into()));
    }
    let b_hat = (m * suy - su * sy) / det;
    let c_hat = (sy - b_hat * su) / m;
    let residual = rescaled
        .iter()
        .map(|&(n, y)| {
            let u = (n as f64).powf(-1.0 / df);
            (c_hat + b_hat * u - y).abs() / y.abs().max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);
    Ok(AsymptoticsFit { c_hat, b_hat, residual, pairs: rescaled })
}

/// The two-sided locality identity for a configuration split across two
/// separated boxes.
#[derive(Clone, Debug, Serialize)]
pub struct ShortRangeReport {
    pub whole: f64,
    pub part1: f64,
    pub part2: f64,
    /// Distance between the two boxes.
    pub h: f64,
    /// N·k·h^{-s}: the maximum possible cross-part contribution.
    pub bound: f64,
    /// whole - (part1 + part2).
    pub slack: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub ok: bool,
}

fn box_bounds(domain: &DomainDescriptor) -> Result<&[[f64; 2]]> {
    match domain {
        DomainDescriptor::Box { bounds } => Ok(bounds),
        _ => Err(Error::InvalidInput("short-range parts must be boxes".into())),
    }
}

/// Check that truncated energies localize: for a configuration split across
/// two boxes at distance h > 0, the whole-configuration energy exceeds the
/// sum of the parts by at most N·k·h^{-s} (unweighted, no field).
pub fn short_range_check(
    config: &Configuration,
    a1: &DomainDescriptor,
    a2: &DomainDescriptor,
    model: &EnergyModel,
) -> Result<ShortRangeReport> {
    let KSpec::Knn(k) = model.k else {
        return Err(Error::InvalidInput("short-range check needs a truncated model".into()));
    };
    if !matches!(model.weight, WeightSpec::Constant(c) if c == 1.0)
        || !matches!(model.field, FieldSpec::None)
    {
        return Err(Error::InvalidInput(
            "short-range check is for the unweighted, field-free energy".into(),
        ));
    }
    let b1 = box_bounds(a1)?;
    let b2 = box_bounds(a2)?;
    let p = config.p();
    if b1.len() != p || b2.len() != p {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    let mut h2 = 0.0;
    for c in 0..p {
        let gap = (b2[c][0] - b1[c][1]).max(b1[c][0] - b2[c][1]).max(0.0);
        h2 += gap * gap;
    }
    let h = h2.sqrt();
    if h <= 0.0 {
        return Err(Error::InvalidInput(
            "parts must be disjoint at positive distance".into(),
        ));
    }
    let mut pts1 = Vec::new();
    let mut pts2 = Vec::new();
    for x in config.iter_points() {
        if a1.contains(x, 1e-12) {
            pts1.extend_from_slice(x);
        } else if a2.contains(x, 1e-12) {
            pts2.extend_from_slice(x);
        } else {
            return Err(Error::InvalidInput(format!("point outside both parts: {x:?}")));
        }
    }
    let enclosing = DomainDescriptor::new_box(
        (0..p)
            .map(|c| [b1[c][0].min(b2[c][0]), b1[c][1].max(b2[c][1])])
            .collect(),
    )?;
    let part_energy = |coords: Vec<f64>, domain: &DomainDescriptor| -> Result<f64> {
        if coords.is_empty() {
            return Ok(0.0);
        }
        let cfg = Configuration::new(coords, p);
        let graph = build_graph(&cfg, domain, k)?;
        Ok(energy(&cfg, model, &graph)?.interaction)
    };
    let whole = part_energy(config.coords().to_vec(), &enclosing)?;
    let part1 = part_energy(pts1, a1)?;
    let part2 = part_energy(pts2, a2)?;
    let bound = config.n() as f64 * k as f64 * h.powf(-model.s);
    let slack = whole - (part1 + part2);
    // Parts and whole are summed in different orders, so the exact subset
    // identity holds only up to a relative rounding budget.
    let tol = 1e-12 * whole.abs().max(bound).max(1.0);
    let lower_ok = slack >= -tol;
    let upper_ok = slack <= bound + tol;
    Ok(ShortRangeReport {
        whole,
        part1,
        part2,
        h,
        bound,
        slack,
        lower_ok,
        upper_ok,
        ok: lower_ok && upper_ok,
    })
}

/// Interaction energies for k = 1..k_max against the untruncated energy.
#[derive(Clone, Debug, Serialize)]
pub struct KMonotonicityReport {
    pub interactions: Vec<f64>,
    pub full: f64,
    pub violations: usize,
    pub ok: bool,
}

/// The truncated interaction must grow with k and stay below the full
/// energy: each increment adds nonnegative terms.
pub fn k_monotonicity_check(
    config: &Configuration,
    domain: &DomainDescriptor,
    s: f64,
    k_max: usize,
) -> Result<KMonotonicityReport> {
    if config.n() < 2 {
        return Err(Error::InvalidInput("need at least 2 points".into()));
    }
    if k_max == 0 {
        return Err(Error::InvalidInput("k_max must be >= 1".into()));
    }
    let d = domain.d();
    let mut interactions = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let model = EnergyModel::unweighted(s, KSpec::Knn(k), d);
        let graph = build_graph(config, domain, k)?;
        interactions.push(energy(config, &model, &graph)?.interaction);
    }
    let full_model = EnergyModel::unweighted(s, KSpec::Full, d);
    let full = energy_full(config, &full_model, domain)?.interaction;
    let mut violations = 0;
    for w in interactions.windows(2) {
        if w[1] < w[0] {
            violations += 1;
        }
    }
    // The full sum uses a different grouping, so allow rounding there.
    if *interactions.last().unwrap() > full * (1.0 + 1e-12) {
        violations += 1;
    }
    Ok(KMonotonicityReport { interactions, full, violations, ok: violations == 0 })
}
