//! The limiting-density calculus: which density a given (weight, field,
//! constant) combination drives the points to, and how to pick a weight that
//! targets a prescribed density.
//!
//! The equilibrium density is ρ(x) = ((L1 − V(x))₊ / (C·(1+s/d)·w(x,x)))^{d/s}
//! with L1 the unique constant making ρ dH_d a probability measure. The 1-D
//! constant C is an exact finite sum; for d ≥ 2 it is only known by numerical
//! calibration, and the registry of calibrated values says so.

use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::energy::{FieldSpec, WeightSpec};
use crate::geometry::{DomainDescriptor, Quadrature};
use crate::optimize::{minimize, OptimizerConfig};
use crate::reduce;
use crate::{analysis, Error, Result};

/// Pointwise scalar function of an ambient point.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Gradient function writing into a preallocated ambient vector.
pub type GradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// The 1-D truncated-energy constant: Σ_{j=-⌊k/2⌋, j≠0}^{⌈k/2⌉} |j|^{-s}.
///
/// This is the limit of E/N^{1+s} for minimizers of the k-neighbor energy on
/// the circle (N equally spaced points). Exact finite sum; panics on k = 0 or
/// s ≤ 0.
pub fn constant_cs1k(s: f64, k: usize) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    assert!(s > 0.0, "s must be > 0");
    let half_down = k / 2;
    let half_up = k - half_down;
    let mut sum = 0.0;
    // Small terms first (largest |j| down to 1) for cleaner accumulation.
    for j in (1..=half_up).rev() {
        if j > half_down {
            sum += (j as f64).powf(-s);
        } else {
            sum += 2.0 * (j as f64).powf(-s);
        }
    }
    sum
}

/// The full-energy 1-D constant 2ζ(s), s > 1.
///
/// ζ via Euler–Maclaurin with M = 1000 terms; the first omitted correction is
/// below 1e-15 for every s > 1, far under the 1e-12 contract.
pub fn constant_full_1d(s: f64) -> Result<f64> {
    if !(s.is_finite() && s > 1.0) {
        return Err(Error::InvalidInput(format!("full 1-D constant needs s > 1, got {s}")));
    }
    const M: usize = 1000;
    let m = M as f64;
    let mut zeta = 0.0;
    for n in (1..M).rev() {
        zeta += (n as f64).powf(-s);
    }
    zeta += m.powf(1.0 - s) / (s - 1.0);
    zeta += 0.5 * m.powf(-s);
    zeta += s * m.powf(-s - 1.0) / 12.0;
    zeta -= s * (s + 1.0) * (s + 2.0) * m.powf(-s - 3.0) / 720.0;
    Ok(2.0 * zeta)
}

/// A target limiting density ρ on a domain.
#[derive(Clone)]
pub struct DensityTarget {
    pub rho: ScalarFn,
    pub grad_rho: Option<GradFn>,
    /// Whether ∫ρ dH_d = 1 was established against a quadrature.
    pub normalized: bool,
    /// Minimum of ρ over the nodes of that quadrature (NaN when never
    /// evaluated). Positivity is certified only at nodes.
    pub min_on_nodes: f64,
}

impl std::fmt::Debug for DensityTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityTarget")
            .field("normalized", &self.normalized)
            .field("min_on_nodes", &self.min_on_nodes)
            .finish()
    }
}

impl DensityTarget {
    /// Wrap a raw (not yet normalized) density.
    pub fn raw(rho: ScalarFn, grad_rho: Option<GradFn>) -> Self {
        DensityTarget { rho, grad_rho, normalized: false, min_on_nodes: f64::NAN }
    }

    /// Normalize a raw density against `quad` so it integrates to 1.
    pub fn normalized(rho: ScalarFn, grad_rho: Option<GradFn>, quad: &Quadrature) -> Result<Self> {
        let vals = node_values(&rho, quad)?;
        let z = reduce::pairwise_sum(
            &vals.iter().zip(&quad.weights).map(|(v, w)| v * w).collect::<Vec<_>>(),
        );
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::InvalidInput(format!(
                "density integral must be positive and finite, got {z}"
            )));
        }
        let min = vals.iter().fold(f64::INFINITY, |m, &v| m.min(v)) / z;
        let base = rho.clone();
        let scaled: ScalarFn = Arc::new(move |x| base(x) / z);
        let scaled_grad: Option<GradFn> = grad_rho.map(|g| {
            let g = g.clone();
            Arc::new(move |x: &[f64], out: &mut [f64]| {
                g(x, out);
                for o in out.iter_mut() {
                    *o /= z;
                }
            }) as GradFn
        });
        Ok(DensityTarget {
            rho: scaled,
            grad_rho: scaled_grad,
            normalized: true,
            min_on_nodes: min,
        })
    }

    /// Add a positive floor before normalizing: (ρ + eps) / ∫(ρ + eps).
    ///
    /// The explicit way to make a density with zeros acceptable to
    /// `weight_from_density`; never applied silently.
    pub fn floored(
        rho: ScalarFn,
        grad_rho: Option<GradFn>,
        eps: f64,
        quad: &Quadrature,
    ) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidInput(format!("density floor must be > 0, got {eps}")));
        }
        let base = rho.clone();
        let lifted: ScalarFn = Arc::new(move |x| base(x) + eps);
        DensityTarget::normalized(lifted, grad_rho, quad)
    }

    /// ∫ρ against a quadrature.
    pub fn integral_on(&self, quad: &Quadrature) -> Result<f64> {
        let vals = node_values(&self.rho, quad)?;
        Ok(reduce::pairwise_sum(
            &vals.iter().zip(&quad.weights).map(|(v, w)| v * w).collect::<Vec<_>>(),
        ))
    }
}

/// Draw n points whose empirical distribution matches the target density:
/// systematic inverse-CDF resampling over the quadrature nodes (point j
/// lands at cumulative mass (j+0.5)/n), with mesh-scale jitter, projected
/// back onto the domain.
///
/// Seeds optimizers for non-uniform targets: descent equalizes spacing
/// locally but cannot transport mass across the domain, so an init drawn
/// from the wrong distribution freezes far from the target.
pub fn sample_matching_density(
    domain: &DomainDescriptor,
    quad: &Quadrature,
    target: &DensityTarget,
    n: usize,
    seed: u64,
) -> Result<crate::neighbors::Configuration> {
    if n == 0 {
        return Err(Error::InvalidInput("sample_matching_density needs n >= 1".into()));
    }
    let vals = node_values(&target.rho, quad)?;
    let masses: Vec<f64> = vals.iter().zip(&quad.weights).map(|(v, w)| v * w).collect();
    let total = reduce::pairwise_sum(&masses);
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::InvalidInput(format!(
            "density mass on the quadrature must be positive, got {total}"
        )));
    }
    let p = quad.p;
    let jitter = if quad.mesh.is_finite() { 0.5 * quad.mesh } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n * p);
    let mut acc = 0.0;
    let mut node = 0;
    for j in 0..n {
        let u = (j as f64 + 0.5) / n as f64 * total;
        while node + 1 < quad.len() && acc + masses[node] < u {
            acc += masses[node];
            node += 1;
        }
        let x = quad.node(node);
        let mut y = Vec::with_capacity(p);
        for &c in x {
            y.push(c + jitter * (rng.random::<f64>() - 0.5));
        }
        let projected = domain.project(&y)?;
        coords.extend_from_slice(&projected);
    }
    Ok(crate::neighbors::Configuration::new(coords, p))
}

fn node_values(f: &ScalarFn, quad: &Quadrature) -> Result<Vec<f64>> {
    let mut vals = Vec::with_capacity(quad.len());
    for x in quad.iter_nodes() {
        let v = f(x);
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidInput(format!(
                "density must be finite and nonnegative on nodes, got {v}"
            )));
        }
        vals.push(v);
    }
    Ok(vals)
}

/// Result of solving the normalization constant for an external field.
pub struct FieldSolve {
    pub l1: f64,
    pub c_k: f64,
    /// The induced equilibrium density (normalized on the solving quadrature).
    pub rho: DensityTarget,
    /// Fraction of quadrature mass where V < L1 (where ρ > 0).
    pub support_fraction: f64,
}

/// The equilibrium density at one point, given the solved constant.
///
/// Panics if w(x,x) ≤ 0 (the weight must be positive on the diagonal).
pub fn rho_equilibrium(
    field: &FieldSpec,
    w_diag: &dyn Fn(&[f64]) -> f64,
    c_k: f64,
    l1: f64,
    s: f64,
    d: usize,
    x: &[f64],
) -> f64 {
    let w = w_diag(x);
    assert!(w > 0.0, "diagonal weight must be positive, got {w}");
    let denom = c_k * (1.0 + s / d as f64) * w;
    ((l1 - field.eval(x)).max(0.0) / denom).powf(d as f64 / s)
}

/// Solve for the constant L1 that makes the equilibrium density a probability
/// density on the quadrature: Σ w_q·((L1 − V)₊/(C·(1+s/d)·w(x,x)))^{d/s} = 1.
///
/// The objective is nondecreasing in L1, so a geometric bracket plus
/// bisection converges; tolerance 1e-10 on the normalization residual.
pub fn solve_l1(
    field: &FieldSpec,
    w_diag: ScalarFn,
    c_k: f64,
    s: f64,
    d: usize,
    quad: &Quadrature,
) -> Result<FieldSolve> {
    if !(c_k.is_finite() && c_k > 0.0) {
        return Err(Error::InvalidInput(format!("C constant must be positive, got {c_k}")));
    }
    if !(s.is_finite() && s > 0.0) || d == 0 {
        return Err(Error::InvalidInput("need s > 0 and d >= 1".into()));
    }
    if quad.is_empty() {
        return Err(Error::InvalidInput("empty quadrature".into()));
    }
    let n = quad.len();
    let mut v = Vec::with_capacity(n);
    let mut denom = Vec::with_capacity(n);
    for x in quad.iter_nodes() {
        let vx = field.eval(x);
        if !vx.is_finite() {
            return Err(Error::SolverFailed(format!("field is non-finite on a node: {vx}")));
        }
        let w = w_diag(x);
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidInput(format!(
                "diagonal weight must be positive on nodes, got {w}"
            )));
        }
        v.push(vx);
        denom.push(c_k * (1.0 + s / d as f64) * w);
    }
    let exponent = d as f64 / s;
    let mut terms = vec![0.0; n];
    let mass = |l1: f64, terms: &mut Vec<f64>| -> f64 {
        for i in 0..n {
            terms[i] = quad.weights[i] * (((l1 - v[i]).max(0.0)) / denom[i]).powf(exponent);
        }
        reduce::pairwise_sum(terms)
    };
    let v_min = v.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    let v_max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut lo = v_min;
    let mut step = (v_max - v_min).max(1.0);
    let mut hi = lo + step;
    let mut grow = 0;
    while mass(hi, &mut terms) < 1.0 {
        step *= 2.0;
        hi = lo + step;
        grow += 1;
        if grow > 200 {
            return Err(Error::SolverFailed("normalization bracket failure".into()));
        }
    }
    let mut l1 = hi;
    let mut residual = f64::INFINITY;
    for _ in 0..200 {
        debug_assert!(lo < hi);
        let mid = 0.5 * (lo + hi);
        let f = mass(mid, &mut terms);
        if (f - 1.0).abs() < residual.abs() {
            residual = f - 1.0;
            l1 = mid;
        }
        if (f - 1.0).abs() <= 1e-10 {
            break;
        }
        if f < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    if residual.abs() > 1e-6 {
        return Err(Error::SolverFailed(format!(
            "normalization residual {residual:.3e} after bisection"
        )));
    }
    let field_c = field.clone();
    let w_c = w_diag.clone();
    let rho_fn: ScalarFn =
        Arc::new(move |x| rho_equilibrium(&field_c, &*w_c, c_k, l1, s, d, x));
    let min_on_nodes =
        quad.iter_nodes().map(|x| rho_fn(x)).fold(f64::INFINITY, f64::min);
    let weight_total = reduce::pairwise_sum(&quad.weights);
    let support: f64 = quad
        .weights
        .iter()
        .zip(&v)
        .filter(|(_, &vx)| vx < l1)
        .map(|(w, _)| *w)
        .sum();
    Ok(FieldSolve {
        l1,
        c_k,
        rho: DensityTarget {
            rho: rho_fn,
            grad_rho: None,
            normalized: true,
            min_on_nodes,
        },
        support_fraction: support / weight_total,
    })
}

/// The density-matching weight w(x,y) = (ρ(x) + ‖x−y‖)^{-s/d}.
///
/// Minimizing with this weight and no field targets ρ dH_d itself, with no
/// dependence on the (generally unknown) asymptotic constant: on the diagonal
/// w(x,x) = ρ(x)^{-s/d}, so the constant cancels from the equilibrium
/// formula. Requires a normalized target that is strictly positive at the
/// quadrature nodes it was normalized against.
pub fn weight_from_density(target: &DensityTarget, s: f64, d: usize) -> Result<WeightSpec> {
    if !(s.is_finite() && s > 0.0) || d == 0 {
        return Err(Error::InvalidInput("need s > 0 and d >= 1".into()));
    }
    if !target.normalized {
        return Err(Error::InvalidInput(
            "density-matching weight needs a normalized target".into(),
        ));
    }
    if !(target.min_on_nodes > 0.0) {
        return Err(Error::DensityNotPositive { min: target.min_on_nodes });
    }
    Ok(WeightSpec::DensityDerived {
        rho: target.rho.clone(),
        grad_rho: target.grad_rho.clone(),
        exponent: s / d as f64,
    })
}

/// Outcome of numerically calibrating the cube constant for one (s, d, k).
#[derive(Clone, Debug, Serialize)]
pub struct CsdkEstimate {
    pub s: f64,
    pub d: usize,
    pub k: usize,
    /// Fit intercept: the constant estimate.
    pub c_hat: f64,
    /// Fit slope against N^{-1/d} (finite-size correction).
    pub b_hat: f64,
    /// Max relative fit residual.
    pub residual: f64,
    /// (N, rescaled energy) per run.
    pub pairs: Vec<(usize, f64)>,
    /// The exact value when one exists (d = 1 only).
    pub exact: Option<f64>,
}

/// Estimate the cube constant lim E/N^{1+s/d} by minimizing the unweighted
/// energy on [0,1]^d per N and extrapolating with a first-order fit.
///
/// For d = 1 the exact constant is attached for cross-checking; for d ≥ 2 no
/// oracle exists and the estimate carries only its fit residual.
pub fn calibrate_csdk(
    s: f64,
    d: usize,
    k: usize,
    n_list: &[usize],
    opts: &OptimizerConfig,
    seed: u64,
) -> Result<CsdkEstimate> {
    if n_list.len() < 3 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "calibration needs >= 3 strictly increasing values of N".into(),
        ));
    }
    if n_list[0] <= k {
        return Err(Error::InvalidInput("calibration needs N > k".into()));
    }
    let domain = DomainDescriptor::cube(d);
    let model = crate::energy::EnergyModel::unweighted(s, crate::energy::KSpec::Knn(k), d);
    let mut raw_pairs = Vec::with_capacity(n_list.len());
    for (run, &n) in n_list.iter().enumerate() {
        // A lightly jittered wall-inclusive lattice start seeds the right
        // macrostructure; plain descent cannot rearrange mass across cells
        // for small k, so a rough start would freeze a few percent above
        // the minimum.
        let init = domain.sample_stratified(n, 0.2, seed.wrapping_add(run as u64))?;
        let mut run_opts = opts.clone();
        run_opts.seed = seed.wrapping_add(1000 + run as u64);
        let (best, _) = minimize(&init, &model, &domain, &run_opts)
            .map_err(|e| Error::SolverFailed(format!("calibration run N={n}: {e}")))?;
        let graph = crate::neighbors::build_graph(&best, &domain, model.graph_k(n))?;
        let e = crate::energy::energy(&best, &model, &graph)?.total;
        raw_pairs.push((n, e));
    }
    let fit = analysis::asymptotics_fit(&raw_pairs, s, d)?;
    Ok(CsdkEstimate {
        s,
        d,
        k,
        c_hat: fit.c_hat,
        b_hat: fit.b_hat,
        residual: fit.residual,
        pairs: fit.pairs,
        exact: (d == 1).then(|| constant_cs1k(s, k)),
    })
}
