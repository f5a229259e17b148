//! The k-nearest-neighbor truncated Riesz s-energy, its full all-pairs
//! counterpart, and exact gradients over the adjacency graph.
//!
//! The truncated energy of N points is
//! Σ_i Σ_{j ∈ row(i)} w(x_i, x_j)·‖x_i − x_j‖^{−s}  +  N^{s/d}·Σ_i V(x_i),
//! where row(i) is the neighbor graph row. Duplicate points make the
//! interaction +∞ (an explicit value, never a crash). Gradients account for
//! both outgoing and incoming edges (the graph is directed and genuinely
//! asymmetric) and are accumulated in a fixed order, so results are
//! bit-identical at any thread count.

use std::sync::Arc;

use rayon::prelude::*;

use crate::geometry::DomainDescriptor;
use crate::neighbors::{build_graph, Configuration, NeighborGraph};
use crate::reduce;
use crate::{Error, Result};

/// Neighbor truncation: k nearest, or every other point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KSpec {
    Knn(usize),
    Full,
}

/// Multiplicative interaction weight w(x, y). All built-in kinds depend on y
/// only through r = ‖x−y‖, which keeps the energy insensitive to which of
/// several tied neighbors the graph picked.
#[derive(Clone)]
pub enum WeightSpec {
    /// w ≡ c with c > 0.
    Constant(f64),
    /// w(x, y) = W(x, r). The caller promises W(x,·)·r^{−s} nonincreasing in
    /// r (spot-checked by `validate_weight`); derivatives are needed only for
    /// gradient evaluation.
    MarginallyRadial {
        w: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
        dw_dx: Option<Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>>,
        dw_dr: Option<Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>>,
    },
    /// w(x, y) = (ρ(x) + r)^{−e} with e = s/d baked in at construction;
    /// minimizing with this weight and no field drives the points to the
    /// density ρ. Built by `density::weight_from_density`.
    DensityDerived {
        rho: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        grad_rho: Option<Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
        exponent: f64,
    },
}

impl std::fmt::Debug for WeightSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightSpec::Constant(c) => write!(f, "Constant({c})"),
            WeightSpec::MarginallyRadial { .. } => write!(f, "MarginallyRadial"),
            WeightSpec::DensityDerived { exponent, .. } => {
                write!(f, "DensityDerived(exponent={exponent})")
            }
        }
    }
}

impl WeightSpec {
    pub fn constant(c: f64) -> Self {
        WeightSpec::Constant(c)
    }

    /// Evaluate w at left point x and distance r.
    pub fn eval(&self, x: &[f64], r: f64) -> f64 {
        match self {
            WeightSpec::Constant(c) => *c,
            WeightSpec::MarginallyRadial { w, .. } => w(x, r),
            WeightSpec::DensityDerived { rho, exponent, .. } => (rho(x) + r).powf(-exponent),
        }
    }

    fn require_derivatives(&self) -> Result<()> {
        match self {
            WeightSpec::Constant(_) => Ok(()),
            WeightSpec::MarginallyRadial { dw_dx, dw_dr, .. } => {
                if dw_dx.is_none() {
                    Err(Error::MissingDerivative("weight dw_dx"))
                } else if dw_dr.is_none() {
                    Err(Error::MissingDerivative("weight dw_dr"))
                } else {
                    Ok(())
                }
            }
            WeightSpec::DensityDerived { grad_rho, .. } => {
                if grad_rho.is_none() {
                    Err(Error::MissingDerivative("weight grad_rho"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// External field V, scaled by N^{s/d} in the energy.
#[derive(Clone)]
pub enum FieldSpec {
    None,
    Potential {
        v: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        grad_v: Option<Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
    },
}

impl std::fmt::Debug for FieldSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldSpec::None => write!(f, "None"),
            FieldSpec::Potential { .. } => write!(f, "Potential"),
        }
    }
}

impl FieldSpec {
    pub fn potential(
        v: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad_v: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        FieldSpec::Potential { v: Arc::new(v), grad_v: Some(Arc::new(grad_v)) }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            FieldSpec::None => 0.0,
            FieldSpec::Potential { v, .. } => v(x),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, FieldSpec::None)
    }
}

/// Everything defining the energy besides the configuration itself.
#[derive(Clone, Debug)]
pub struct EnergyModel {
    pub s: f64,
    pub k: KSpec,
    /// Intrinsic dimension entering the N^{s/d} field scaling.
    pub d: usize,
    pub weight: WeightSpec,
    pub field: FieldSpec,
}

impl EnergyModel {
    pub fn new(s: f64, k: KSpec, d: usize, weight: WeightSpec, field: FieldSpec) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidInput(format!("Riesz exponent s must be > 0, got {s}")));
        }
        if d == 0 {
            return Err(Error::InvalidInput("intrinsic dimension d must be >= 1".into()));
        }
        if let KSpec::Knn(0) = k {
            return Err(Error::InvalidInput("neighbor count k must be >= 1".into()));
        }
        if let WeightSpec::Constant(c) = weight {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "constant weight must be positive, got {c}"
                )));
            }
        }
        Ok(EnergyModel { s, k, d, weight, field })
    }

    /// w ≡ 1, V ≡ 0. Panics on invalid s/k/d (programmer error).
    pub fn unweighted(s: f64, k: KSpec, d: usize) -> Self {
        EnergyModel::new(s, k, d, WeightSpec::Constant(1.0), FieldSpec::None).unwrap()
    }

    /// The graph size this model needs for n points.
    pub fn graph_k(&self, n: usize) -> usize {
        match self.k {
            KSpec::Knn(k) => k,
            KSpec::Full => n.saturating_sub(1).max(1),
        }
    }

    /// The N^{s/d} prefactor of the field term.
    pub fn field_scale(&self, n: usize) -> f64 {
        (n as f64).powf(self.s / self.d as f64)
    }

    /// Advisory note when the model is outside its intended regime.
    pub fn regime_note(&self) -> Option<String> {
        if self.k == KSpec::Full && self.s <= self.d as f64 {
            Some(format!(
                "full energy with s = {} <= d = {} is outside the hypersingular regime",
                self.s, self.d
            ))
        } else {
            None
        }
    }
}

/// Energy split into its defining parts.
#[derive(Clone, Debug)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub interaction: f64,
    pub field: f64,
    /// Outgoing interaction terms of each point plus its scaled field term.
    pub per_point: Vec<f64>,
}

/// Ambient gradient vectors, flat n×p.
#[derive(Clone, Debug)]
pub struct GradientEval {
    grad: Vec<f64>,
    p: usize,
    /// True when the configuration sits at a graph tie (a zero distance, or
    /// the (k+1)-st candidate exactly as far as the k-th). The value is then
    /// the one-sided derivative induced by the current graph.
    pub at_tie: bool,
}

impl GradientEval {
    pub fn vec(&self, i: usize) -> &[f64] {
        &self.grad[i * self.p..(i + 1) * self.p]
    }

    pub fn flat(&self) -> &[f64] {
        &self.grad
    }

    pub fn inf_norm(&self) -> f64 {
        self.grad.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_pair(config: &Configuration, model: &EnergyModel, graph: &NeighborGraph) -> Result<()> {
    if graph.n() != config.n() {
        return Err(Error::InvalidInput(format!(
            "graph has {} rows but configuration {} points",
            graph.n(),
            config.n()
        )));
    }
    let expected = model.graph_k(config.n());
    let ok = match model.k {
        KSpec::Knn(_) => graph.k() == expected,
        // Any graph that already holds every other point serves as "full".
        KSpec::Full => graph.row_len() == config.n().saturating_sub(1),
    };
    if !ok {
        return Err(Error::InvalidInput(format!(
            "graph built with k = {} but model wants k = {expected}",
            graph.k()
        )));
    }
    Ok(())
}

/// Truncated energy over the rows of `graph`.
pub fn energy(
    config: &Configuration,
    model: &EnergyModel,
    graph: &NeighborGraph,
) -> Result<EnergyBreakdown> {
    check_pair(config, model, graph)?;
    let n = config.n();
    let s = model.s;
    let interaction_parts: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = config.point(i);
            let mut acc = 0.0;
            for &r in graph.row_dist(i) {
                acc += model.weight.eval(x, r) * r.powf(-s);
            }
            acc
        })
        .collect();
    finish_breakdown(config, model, interaction_parts)
}

/// All-pairs energy (the untruncated double sum), O(N²). The domain supplies
/// the metric.
pub fn energy_full(
    config: &Configuration,
    model: &EnergyModel,
    domain: &DomainDescriptor,
) -> Result<EnergyBreakdown> {
    let n = config.n();
    let s = model.s;
    let interaction_parts: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = config.point(i);
            let mut acc = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let r = domain.dist(x, config.point(j));
                acc += model.weight.eval(x, r) * r.powf(-s);
            }
            acc
        })
        .collect();
    finish_breakdown(config, model, interaction_parts)
}

fn finish_breakdown(
    config: &Configuration,
    model: &EnergyModel,
    interaction_parts: Vec<f64>,
) -> Result<EnergyBreakdown> {
    let n = config.n();
    let interaction = reduce::par_pairwise_sum(&interaction_parts);
    let scale = model.field_scale(n);
    let (field, per_point) = if model.field.is_none() {
        (0.0, interaction_parts)
    } else {
        let field_vals: Vec<f64> =
            (0..n).into_par_iter().map(|i| model.field.eval(config.point(i))).collect();
        let field = scale * reduce::par_pairwise_sum(&field_vals);
        let per_point = interaction_parts
            .iter()
            .zip(&field_vals)
            .map(|(a, v)| a + scale * v)
            .collect();
        (field, per_point)
    };
    Ok(EnergyBreakdown { total: interaction + field, interaction, field, per_point })
}

/// Gradient of the truncated energy at `config` under the current graph.
///
/// Each edge (i, j) contributes to both ∂/∂x_i and ∂/∂x_j; incoming
/// contributions are gathered by a transpose pass in fixed index order, so
/// the result is bit-identical at any worker count. Zero-distance edges
/// contribute nothing (the energy is +∞ there) and set `at_tie`.
pub fn gradient(
    config: &Configuration,
    model: &EnergyModel,
    graph: &NeighborGraph,
    domain: &DomainDescriptor,
) -> Result<GradientEval> {
    check_pair(config, model, graph)?;
    model.weight.require_derivatives()?;
    if let FieldSpec::Potential { grad_v: None, .. } = &model.field {
        return Err(Error::MissingDerivative("field grad_v"));
    }
    let n = config.n();
    let p = config.p();
    let rl = graph.row_len();
    let s = model.s;
    let scale = model.field_scale(n);

    // Per-point density cache for the density-derived weight.
    let rho_cache: Option<(Vec<f64>, Vec<f64>)> = match &model.weight {
        WeightSpec::DensityDerived { rho, grad_rho, .. } => {
            let grad_rho = grad_rho.as_ref().unwrap();
            let vals: Vec<f64> =
                (0..n).into_par_iter().map(|i| rho(config.point(i))).collect();
            let mut grads = vec![0.0; n * p];
            grads
                .par_chunks_mut(p)
                .enumerate()
                .for_each(|(i, out)| grad_rho(config.point(i), out));
            Some((vals, grads))
        }
        _ => None,
    };

    let mut grad = vec![0.0; n * p];
    // One chunk per point even when rows are empty (rl = 0).
    let back_chunk = (rl * p).max(1);
    let mut edge_back = vec![0.0; n * back_chunk];
    let at_tie = grad
        .par_chunks_mut(p)
        .zip(edge_back.par_chunks_mut(back_chunk))
        .enumerate()
        .map(|(i, (g, back))| {
            let x = config.point(i);
            let mut tie = false;
            let mut delta = vec![0.0; p];
            let mut wx = vec![0.0; p];
            for (slot, (&j, &r)) in
                graph.row_idx(i).iter().zip(graph.row_dist(i)).enumerate()
            {
                if r == 0.0 {
                    tie = true;
                    continue;
                }
                domain.displacement_into(x, config.point(j as usize), &mut delta);
                let kr = r.powf(-s);
                let kd = -s * r.powf(-s - 1.0);
                let (wv, wr, has_wx) = match &model.weight {
                    WeightSpec::Constant(c) => (*c, 0.0, false),
                    WeightSpec::MarginallyRadial { w, dw_dx, dw_dr } => {
                        let wv = w(x, r);
                        dw_dx.as_ref().unwrap()(x, r, &mut wx);
                        (wv, dw_dr.as_ref().unwrap()(x, r), true)
                    }
                    WeightSpec::DensityDerived { exponent, .. } => {
                        let (vals, grads) = rho_cache.as_ref().unwrap();
                        let base = vals[i] + r;
                        let wv = base.powf(-exponent);
                        let wcommon = -exponent * base.powf(-exponent - 1.0);
                        for (o, &gr) in wx.iter_mut().zip(&grads[i * p..(i + 1) * p]) {
                            *o = wcommon * gr;
                        }
                        (wv, wcommon, true)
                    }
                };
                let coef = (wr * kr + wv * kd) / r;
                let back_slot = &mut back[slot * p..(slot + 1) * p];
                for a in 0..p {
                    let radial = coef * delta[a];
                    g[a] += radial;
                    back_slot[a] = -radial;
                    if has_wx {
                        g[a] += wx[a] * kr;
                    }
                }
            }
            if rl > 0 && graph.next_dist(i) == graph.row_dist(i)[rl - 1] {
                tie = true;
            }
            if let FieldSpec::Potential { grad_v, .. } = &model.field {
                grad_v.as_ref().unwrap()(x, &mut wx);
                for a in 0..p {
                    g[a] += scale * wx[a];
                }
            }
            tie
        })
        .reduce(|| false, |a, b| a || b);

    // Transpose pass: per target j, incoming edges in ascending source order.
    if rl > 0 {
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            for &j in graph.row_idx(i) {
                offsets[j as usize + 1] += 1;
            }
        }
        for j in 0..n {
            offsets[j + 1] += offsets[j];
        }
        let mut incoming = vec![0u32; n * rl];
        let mut cursor = offsets.clone();
        for i in 0..n {
            for (slot, &j) in graph.row_idx(i).iter().enumerate() {
                incoming[cursor[j as usize]] = (i * rl + slot) as u32;
                cursor[j as usize] += 1;
            }
        }
        grad.par_chunks_mut(p).enumerate().for_each(|(j, g)| {
            for &edge in &incoming[offsets[j]..offsets[j + 1]] {
                let back = &edge_back[edge as usize * p..(edge as usize + 1) * p];
                for a in 0..p {
                    g[a] += back[a];
                }
            }
        });
    }
    Ok(GradientEval { grad, p, at_tie })
}

/// Central-difference oracle for `gradient`. Rebuilds the graph at every
/// displaced configuration (never reuses `gradient`'s machinery), so it
/// measures the true local behavior of the energy; only meaningful at
/// tie-free configurations.
pub fn fd_gradient(
    config: &Configuration,
    model: &EnergyModel,
    domain: &DomainDescriptor,
    h: f64,
) -> Result<Vec<f64>> {
    let n = config.n();
    let p = config.p();
    let eval = |c: &Configuration| -> Result<f64> {
        let bd = match model.k {
            KSpec::Knn(k) => {
                let graph = build_graph(c, domain, k)?;
                energy(c, model, &graph)?
            }
            KSpec::Full => energy_full(c, model, domain)?,
        };
        Ok(bd.total)
    };
    let mut out = vec![0.0; n * p];
    let mut work = config.clone();
    for i in 0..n {
        for a in 0..p {
            let orig = work.point(i)[a];
            work.point_mut(i)[a] = orig + h;
            let plus = eval(&work)?;
            work.point_mut(i)[a] = orig - h;
            let minus = eval(&work)?;
            work.point_mut(i)[a] = orig;
            out[i * p + a] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Result of spot-checking a weight's radial monotonicity.
#[derive(Clone, Debug)]
pub struct WeightReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest observed relative increase of W(x,r)·r^{−s} from r1 to r2.
    pub worst_increase: f64,
}

/// Samples random (x, r1 < r2) pairs and reports violations of the defining
/// monotonicity of marginally radial weights: W(x,r)·r^{−s} nonincreasing in
/// r. Advisory only.
pub fn validate_weight(
    spec: &WeightSpec,
    s: f64,
    domain: &DomainDescriptor,
    samples: usize,
    seed: u64,
) -> Result<WeightReport> {
    use rand::{RngExt, SeedableRng};
    let points = domain.sample_uniform(samples.max(1), seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x77ff);
    let diam = domain.diameter_hint();
    let mut violations = 0;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..points.n() {
        let x = points.point(i);
        let mut r1 = rng.random::<f64>() * diam;
        let mut r2 = rng.random::<f64>() * diam;
        if r1 > r2 {
            std::mem::swap(&mut r1, &mut r2);
        }
        if r1 <= 0.0 || r1 == r2 {
            continue;
        }
        checked += 1;
        let f1 = spec.eval(x, r1) * r1.powf(-s);
        let f2 = spec.eval(x, r2) * r2.powf(-s);
        if f2 > f1 * (1.0 + 1e-12) {
            violations += 1;
            worst = worst.max(f2 / f1 - 1.0);
        }
    }
    Ok(WeightReport { checked, violations, worst_increase: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainDescriptor;
    use crate::neighbors::build_graph;

    fn torus_equally_spaced(n: usize) -> (Configuration, DomainDescriptor) {
        let config = Configuration::new((0..n).map(|i| i as f64 / n as f64).collect(), 1);
        (config, DomainDescriptor::unit_torus(1))
    }

    #[test]
    fn two_point_energy_is_two() {
        let config = Configuration::from_points(&[vec![0.0], vec![1.0]]);
        let dom = DomainDescriptor::cube(1);
        let model = EnergyModel::unweighted(2.0, KSpec::Knn(1), 1);
        let graph = build_graph(&config, &dom, 1).unwrap();
        let bd = energy(&config, &model, &graph).unwrap();
        assert_eq!(bd.total, 2.0);
        assert_eq!(bd.interaction, 2.0);
        assert_eq!(bd.field, 0.0);
    }

    #[test]
    fn equally_spaced_torus_matches_closed_form() {
        // N equally spaced, neighbor j at arc distance |j|/N, so the energy
        // is N^{1+s}·Σ_{j∈J_k}|j|^{−s}; N=10, k=2, s=2 gives 10³·2.
        let (config, dom) = torus_equally_spaced(10);
        let model = EnergyModel::unweighted(2.0, KSpec::Knn(2), 1);
        let graph = build_graph(&config, &dom, 2).unwrap();
        let bd = energy(&config, &model, &graph).unwrap();
        assert!((bd.total - 2000.0).abs() / 2000.0 <= 1e-12, "{}", bd.total);
    }

    #[test]
    fn single_point_energy_is_the_field_value() {
        let config = Configuration::from_points(&[vec![0.5]]);
        let dom = DomainDescriptor::cube(1);
        let model = EnergyModel::new(
            2.0,
            KSpec::Knn(1),
            1,
            WeightSpec::Constant(1.0),
            FieldSpec::potential(|x| x[0] * x[0], |_, g| g[0] = 0.0),
        )
        .unwrap();
        let graph = build_graph(&config, &dom, 1).unwrap();
        let bd = energy(&config, &model, &graph).unwrap();
        assert_eq!(bd.total, 0.25);
        assert_eq!(bd.interaction, 0.0);
    }

    #[test]
    fn duplicate_points_give_infinite_energy() {
        let config = Configuration::from_points(&[vec![0.2], vec![0.2]]);
        let dom = DomainDescriptor::cube(1);
        let model = EnergyModel::unweighted(1.0, KSpec::Knn(1), 1);
        let graph = build_graph(&config, &dom, 1).unwrap();
        let bd = energy(&config, &model, &graph).unwrap();
        assert!(bd.total.is_infinite() && bd.total > 0.0);
        assert!(energy_full(&config, &model, &dom).unwrap().total.is_infinite());
    }

    #[test]
    fn full_energy_matches_hand_sum() {
        // Collinear (0,1,2), s=1: ordered pairs 2·(1 + 1 + 1/2) = 5.
        let config = Configuration::from_points(&[vec![0.0], vec![1.0], vec![2.0]]);
        let dom = DomainDescriptor::new_box(vec![[0.0, 2.0]]).unwrap();
        let model = EnergyModel::unweighted(1.0, KSpec::Full, 1);
        let bd = energy_full(&config, &model, &dom).unwrap();
        assert_eq!(bd.total, 5.0);
    }

    #[test]
    fn full_dominates_truncated_and_k_saturates() {
        let dom = DomainDescriptor::cube(2);
        let config = dom.sample_uniform(30, 3).unwrap();
        let model_full = EnergyModel::unweighted(2.5, KSpec::Full, 2);
        let full = energy_full(&config, &model_full, &dom).unwrap().interaction;
        for k in [1, 3, 7] {
            let model = EnergyModel::unweighted(2.5, KSpec::Knn(k), 2);
            let graph = build_graph(&config, &dom, k).unwrap();
            let tr = energy(&config, &model, &graph).unwrap().interaction;
            assert!(tr <= full);
        }
        // k >= N-1 holds exactly the same terms as the full sum.
        let graph = build_graph(&config, &dom, 29).unwrap();
        let model = EnergyModel::unweighted(2.5, KSpec::Knn(29), 2);
        let tr = energy(&config, &model, &graph).unwrap().interaction;
        assert!((tr - full).abs() / full <= 1e-12);
    }

    #[test]
    fn interaction_is_scale_covariant_and_translation_invariant() {
        let dom = DomainDescriptor::cube(2);
        let config = dom.sample_uniform(25, 9).unwrap();
        let wide = DomainDescriptor::new_box(vec![[-10.0, 10.0]; 2]).unwrap();
        let s = 1.5;
        let model = EnergyModel::unweighted(s, KSpec::Knn(3), 2);
        let graph = build_graph(&config, &wide, 3).unwrap();
        let base = energy(&config, &model, &graph).unwrap().interaction;

        let gamma = 2.0;
        let scaled = Configuration::new(config.coords().iter().map(|v| v * gamma).collect(), 2);
        let graph_s = build_graph(&scaled, &wide, 3).unwrap();
        let e_scaled = energy(&scaled, &model, &graph_s).unwrap().interaction;
        assert!((e_scaled - gamma.powf(-s) * base).abs() / base <= 1e-12);

        let shifted =
            Configuration::new(config.coords().iter().map(|v| v + 3.25).collect(), 2);
        let graph_t = build_graph(&shifted, &wide, 3).unwrap();
        let e_shifted = energy(&shifted, &model, &graph_t).unwrap().interaction;
        assert!((e_shifted - base).abs() / base <= 1e-12);
    }

    #[test]
    fn gradient_matches_hand_derivative() {
        // E = 2(x_2-x_1)^{-2} at (0,1): dE/dx_1 = +4, dE/dx_2 = -4, exactly.
        let config = Configuration::from_points(&[vec![0.0], vec![1.0]]);
        let dom = DomainDescriptor::cube(1);
        let model = EnergyModel::unweighted(2.0, KSpec::Knn(1), 1);
        let graph = build_graph(&config, &dom, 1).unwrap();
        let g = gradient(&config, &model, &graph, &dom).unwrap();
        assert_eq!(g.vec(0), &[4.0]);
        assert_eq!(g.vec(1), &[-4.0]);
        assert!(!g.at_tie);
    }

    #[test]
    fn symmetric_torus_gradient_is_exactly_zero() {
        // Dyadic spacing keeps all displacements exact, so left/right terms
        // cancel without rounding.
        let (config, dom) = torus_equally_spaced(16);
        let model = EnergyModel::unweighted(2.0, KSpec::Knn(2), 1);
        let graph = build_graph(&config, &dom, 2).unwrap();
        let g = gradient(&config, &model, &graph, &dom).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
        assert!(!g.at_tie);
    }

    #[test]
    fn zero_distance_edges_set_the_tie_flag() {
        let config = Configuration::from_points(&[vec![0.1], vec![0.1], vec![0.9]]);
        let dom = DomainDescriptor::cube(1);
        let model = EnergyModel::unweighted(2.0, KSpec::Knn(1), 1);
        let graph = build_graph(&config, &dom, 1).unwrap();
        let g = gradient(&config, &model, &graph, &dom).unwrap();
        assert!(g.at_tie);
        assert!(g.flat().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn boundary_tie_sets_the_flag() {
        // Point 1 sees 0 and 2 at exactly the same distance with k=1.
        let config = Configuration::from_points(&[vec![0.0], vec![1.0], vec![2.0]]);
        let dom = DomainDescriptor::new_box(vec![[0.0, 2.0]]).unwrap();
        let model = EnergyModel::unweighted(2.0, KSpec::Knn(1), 1);
        let graph = build_graph(&config, &dom, 1).unwrap();
        let g = gradient(&config, &model, &graph, &dom).unwrap();
        assert!(g.at_tie);
    }

    fn smooth_density_weight() -> WeightSpec {
        WeightSpec::DensityDerived {
            rho: Arc::new(|x: &[f64]| 0.5 + x[0] + 0.3 * x[1]),
            grad_rho: Some(Arc::new(|_: &[f64], g: &mut [f64]| {
                g[0] = 1.0;
                g[1] = 0.3;
            })),
            exponent: 1.25,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let dom = DomainDescriptor::cube(2);
        let config = dom.sample_uniform(12, 21).unwrap();
        let field = FieldSpec::potential(
            |x| (x[0] - 0.5).powi(2) + 0.7 * x[1],
            |x, g| {
                g[0] = 2.0 * (x[0] - 0.5);
                g[1] = 0.7;
            },
        );
        for (weight, s) in [
            (WeightSpec::Constant(1.0), 2.0),
            (smooth_density_weight(), 2.5),
        ] {
            let model = EnergyModel::new(s, KSpec::Knn(3), 2, weight, field.clone()).unwrap();
            let graph = build_graph(&config, &dom, 3).unwrap();
            let g = gradient(&config, &model, &graph, &dom).unwrap();
            assert!(!g.at_tie);
            let fd = fd_gradient(&config, &model, &dom, 1e-6).unwrap();
            for (a, b) in g.flat().iter().zip(&fd) {
                let scale = a.abs().max(b.abs()).max(1.0);
                assert!((a - b).abs() / scale < 1e-6, "grad {a} vs fd {b}");
            }
        }
    }

    #[test]
    fn torus_gradient_matches_finite_differences() {
        let dom = DomainDescriptor::unit_torus(2);
        let config = dom.sample_uniform(10, 5).unwrap();
        let model = EnergyModel::unweighted(3.0, KSpec::Knn(2), 2);
        let graph = build_graph(&config, &dom, 2).unwrap();
        let g = gradient(&config, &model, &graph, &dom).unwrap();
        let fd = fd_gradient(&config, &model, &dom, 1e-6).unwrap();
        for (a, b) in g.flat().iter().zip(&fd) {
            let scale = a.abs().max(b.abs()).max(1.0);
            assert!((a - b).abs() / scale < 1e-6, "grad {a} vs fd {b}");
        }
    }

    #[test]
    fn missing_derivatives_are_reported() {
        let config = Configuration::from_points(&[vec![0.0], vec![1.0]]);
        let dom = DomainDescriptor::cube(1);
        let weight = WeightSpec::MarginallyRadial {
            w: Arc::new(|_, r| 1.0 + r),
            dw_dx: None,
            dw_dr: None,
        };
        let model = EnergyModel::new(2.0, KSpec::Knn(1), 1, weight, FieldSpec::None).unwrap();
        let graph = build_graph(&config, &dom, 1).unwrap();
        assert!(matches!(
            gradient(&config, &model, &graph, &dom),
            Err(Error::MissingDerivative(_))
        ));
    }

    #[test]
    fn breakdown_parts_are_consistent() {
        let dom = DomainDescriptor::cube(2);
        let config = dom.sample_uniform(40, 8).unwrap();
        let model = EnergyModel::new(
            2.0,
            KSpec::Knn(4),
            2,
            WeightSpec::Constant(2.0),
            FieldSpec::potential(|x| x[0] + x[1], |_, g| {
                g[0] = 1.0;
                g[1] = 1.0;
            }),
        )
        .unwrap();
        let graph = build_graph(&config, &dom, 4).unwrap();
        let bd = energy(&config, &model, &graph).unwrap();
        assert!((bd.total - (bd.interaction + bd.field)).abs() / bd.total.abs() < 1e-10);
        let per_sum: f64 = bd.per_point.iter().sum();
        assert!((per_sum - bd.total).abs() / bd.total.abs() < 1e-10);
        assert_eq!(bd.per_point.len(), config.n());
    }

    #[test]
    fn mismatched_graph_is_rejected() {
        let config = Configuration::from_points(&[vec![0.0], vec![0.5], vec![1.0]]);
        let dom = DomainDescriptor::cube(1);
        let graph = build_graph(&config, &dom, 1).unwrap();
        let model = EnergyModel::unweighted(2.0, KSpec::Knn(2), 1);
        assert!(energy(&config, &model, &graph).is_err());
    }

    #[test]
    fn weight_validation_flags_only_bad_weights() {
        let dom = DomainDescriptor::cube(1);
        let ok = validate_weight(&WeightSpec::Constant(1.0), 2.0, &dom, 200, 1).unwrap();
        assert_eq!(ok.violations, 0);
        let density = WeightSpec::DensityDerived {
            rho: Arc::new(|x: &[f64]| 0.2 + x[0]),
            grad_rho: None,
            exponent: 2.0,
        };
        let ok = validate_weight(&density, 2.0, &dom, 200, 2).unwrap();
        assert_eq!(ok.violations, 0);
        // W(x,r) = r^{2s} makes W·r^{-s} = r^{s} increasing: all pairs violate.
        let bad = WeightSpec::MarginallyRadial {
            w: Arc::new(|_, r| r.powf(4.0)),
            dw_dx: None,
            dw_dr: None,
        };
        let rep = validate_weight(&bad, 2.0, &dom, 200, 3).unwrap();
        assert!(rep.violations > 0 && rep.violations == rep.checked);
    }

    #[test]
    fn energy_and_gradient_are_thread_count_invariant() {
        let dom = DomainDescriptor::cube(2);
        let config = dom.sample_uniform(120, 77).unwrap();
        let model = EnergyModel::new(
            2.0,
            KSpec::Knn(4),
            2,
            smooth_density_weight(),
            FieldSpec::potential(|x| x[0], |_, g| {
                g[0] = 1.0;
                g[1] = 0.0;
            }),
        )
        .unwrap();
        let graph = build_graph(&config, &dom, 4).unwrap();
        let run = |threads: usize| {
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let bd = energy(&config, &model, &graph).unwrap();
                let g = gradient(&config, &model, &graph, &dom).unwrap();
                (bd.total.to_bits(), g.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            })
        };
        let (e1, g1) = run(1);
        let (e2, g2) = run(2);
        let (e4, g4) = run(4);
        assert_eq!(e1, e2);
        assert_eq!(e1, e4);
        assert_eq!(g1, g2);
        assert_eq!(g1, g4);
    }

    #[test]
    fn model_validation_rejects_bad_parameters() {
        assert!(EnergyModel::new(0.0, KSpec::Knn(1), 1, WeightSpec::Constant(1.0), FieldSpec::None)
            .is_err());
        assert!(EnergyModel::new(2.0, KSpec::Knn(0), 1, WeightSpec::Constant(1.0), FieldSpec::None)
            .is_err());
        assert!(EnergyModel::new(2.0, KSpec::Knn(1), 0, WeightSpec::Constant(1.0), FieldSpec::None)
            .is_err());
        assert!(EnergyModel::new(2.0, KSpec::Knn(1), 1, WeightSpec::Constant(-1.0), FieldSpec::None)
            .is_err());
        assert!(EnergyModel::unweighted(1.0, KSpec::Full, 2).regime_note().is_some());
        assert!(EnergyModel::unweighted(3.0, KSpec::Full, 2).regime_note().is_none());
    }
}
