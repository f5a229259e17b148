//! Projected gradient descent for the truncated energy.
//!
//! The landscape is nonconvex, so the solver only promises a good local
//! minimizer: monotone descent with a backtracking line search, every
//! candidate scored on a freshly built neighbor graph so stale rows can never
//! fake a decrease. Restarts jitter the best iterate and keep whichever round
//! ends lowest. Runs are deterministic for a fixed seed at any thread count.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::energy::{energy, gradient, EnergyModel, GradientEval};
use crate::geometry::DomainDescriptor;
use crate::neighbors::{build_graph, Configuration, NeighborGraph};
use crate::{Error, Result};

/// Solver knobs. `Default` gives the documented defaults; JSON specs may
/// override any subset.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Iteration budget per round (initial run and each restart).
    pub max_iters: usize,
    /// Initial line-search step; when unset, 0.1·N^{-1/d-1/s}.
    pub step0: Option<f64>,
    /// Backtracking factor in (0,1).
    pub shrink: f64,
    /// Trials per line search before the round stalls.
    pub max_halvings: usize,
    /// Upper bound on iterations between graph rebuilds. The line search
    /// rebuilds per candidate and keeps the accepted graph, so the bound
    /// holds trivially; it is config so specs can record the contract.
    pub graph_refresh: usize,
    /// Stop when the relative energy decrease over `window` accepted steps
    /// falls below this.
    pub tol_rel_energy: f64,
    pub window: usize,
    /// Extra rounds started from a jittered copy of the best iterate.
    pub restarts: usize,
    /// Jitter magnitude for restarts; when unset, half the mean spacing.
    /// Halves with each successive restart.
    pub jitter: Option<f64>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 2000,
            step0: None,
            shrink: 0.5,
            max_halvings: 30,
            graph_refresh: 5,
            tol_rel_energy: 1e-9,
            window: 50,
            restarts: 0,
            jitter: None,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    /// Reject nonsensical settings (zero iteration budgets, shrink outside
    /// (0,1), nonpositive step or jitter overrides).
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.window == 0 || self.graph_refresh == 0 {
            return Err(Error::InvalidInput(
                "max_iters, window, graph_refresh must be >= 1".into(),
            ));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidInput(format!(
                "shrink must be in (0,1), got {}",
                self.shrink
            )));
        }
        if !(self.tol_rel_energy >= 0.0) {
            return Err(Error::InvalidInput("tol_rel_energy must be >= 0".into()));
        }
        for (name, v) in [("step0", self.step0), ("jitter", self.jitter)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidInput(format!("{name} must be > 0, got {v}")));
                }
            }
        }
        Ok(())
    }
}

/// Why a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative energy decrease over a window fell below tolerance (or the
    /// gradient vanished exactly).
    Tol,
    MaxIters,
    /// The line search found no strict decrease within its trial budget.
    Stall,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Tol => "tol",
            StopReason::MaxIters => "max_iters",
            StopReason::Stall => "stall",
        })
    }
}

/// Per-accepted-step history of a solve. All columns have equal length;
/// energies are fresh-graph values and decrease strictly within each round.
#[derive(Clone, Debug, Serialize)]
pub struct RunTrace {
    pub energies: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub separations: Vec<f64>,
    /// Global iteration index of each accepted step.
    pub accepted_iters: Vec<usize>,
    /// Index into the columns where each round begins.
    pub round_starts: Vec<usize>,
    /// Total iterations attempted, accepted or not.
    pub iters: usize,
    pub stop_reason: StopReason,
}

/// One projected gradient step: x_i ← Π(x_i − step·g_i).
pub fn step_projected(
    config: &Configuration,
    grad: &GradientEval,
    step: f64,
    domain: &DomainDescriptor,
) -> Result<Configuration> {
    let p = config.p();
    let mut out = config.clone();
    let mut y = vec![0.0; p];
    for i in 0..config.n() {
        let x = config.point(i);
        let g = grad.vec(i);
        for c in 0..p {
            y[c] = x[c] - step * g[c];
        }
        let proj = domain.project(&y)?;
        out.point_mut(i).copy_from_slice(&proj);
    }
    Ok(out)
}

/// Split exactly coincident points apart with deterministic projected noise.
///
/// Points are grouped by bit pattern; every member of a group of size > 1
/// gets a uniform perturbation of at most `magnitude` (in Euclidean norm),
/// drawn in index order. Distinct points are untouched bitwise.
pub fn resolve_duplicates(
    config: &Configuration,
    domain: &DomainDescriptor,
    magnitude: f64,
    seed: u64,
) -> Result<Configuration> {
    if !(magnitude.is_finite() && magnitude > 0.0) {
        return Err(Error::InvalidInput(format!("jitter magnitude must be > 0, got {magnitude}")));
    }
    let p = config.p();
    let mut counts: HashMap<Vec<u64>, usize> = HashMap::new();
    for x in config.iter_points() {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_coord = magnitude / (p as f64).sqrt();
    let mut out = config.clone();
    let mut y = vec![0.0; p];
    for i in 0..config.n() {
        let x = config.point(i);
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if counts[&key] > 1 {
            for c in 0..p {
                y[c] = x[c] + rng.random_range(-per_coord..=per_coord);
            }
            let proj = domain.project(&y)?;
            out.point_mut(i).copy_from_slice(&proj);
        }
    }
    Ok(out)
}

fn jitter_config(
    config: &Configuration,
    domain: &DomainDescriptor,
    sigma: f64,
    seed: u64,
) -> Result<Configuration> {
    let p = config.p();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_coord = sigma / (p as f64).sqrt();
    let mut out = config.clone();
    let mut y = vec![0.0; p];
    for i in 0..config.n() {
        let x = config.point(i);
        for c in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            y[c] = x[c] + per_coord * z;
        }
        let proj = domain.project(&y)?;
        out.point_mut(i).copy_from_slice(&proj);
    }
    Ok(out)
}

fn min_neighbor_dist(graph: &NeighborGraph) -> f64 {
    if graph.row_len() == 0 {
        return f64::INFINITY;
    }
    (0..graph.n()).map(|i| graph.row_dist(i)[0]).fold(f64::INFINITY, f64::min)
}

struct Evaluated {
    config: Configuration,
    graph: NeighborGraph,
    energy: f64,
}

fn evaluate(
    config: Configuration,
    model: &EnergyModel,
    domain: &DomainDescriptor,
    k_graph: usize,
) -> Result<Evaluated> {
    let graph = build_graph(&config, domain, k_graph)?;
    let e = energy(&config, model, &graph)?.total;
    Ok(Evaluated { config, graph, energy: e })
}

/// Evaluate, and if the energy is infinite (coincident points), jitter the
/// duplicates once and retry before giving up.
fn evaluate_recovering(
    config: Configuration,
    model: &EnergyModel,
    domain: &DomainDescriptor,
    k_graph: usize,
    dup_magnitude: f64,
    seed: u64,
) -> Result<Evaluated> {
    let ev = evaluate(config, model, domain, k_graph)?;
    if ev.energy.is_finite() {
        return Ok(ev);
    }
    let fixed = resolve_duplicates(&ev.config, domain, dup_magnitude, seed)?;
    let ev = evaluate(fixed, model, domain, k_graph)?;
    if ev.energy.is_finite() {
        Ok(ev)
    } else {
        Err(Error::OptimizerFailed(
            "energy still infinite after duplicate resolution".into(),
        ))
    }
}

const RESCUE_POINTS: usize = 64;
const RESCUE_TRIALS: usize = 12;

/// Fallback when the full line search fails: move one point at a time along
/// its own gradient component, largest component first. Returns the first
/// strict decrease found, None when the top candidates all fail.
fn rescue_single_point(
    state: &Evaluated,
    g: &GradientEval,
    model: &EnergyModel,
    domain: &DomainDescriptor,
    k_graph: usize,
    cap: f64,
    shrink: f64,
) -> Result<Option<Evaluated>> {
    let n = state.config.n();
    let p = state.config.p();
    let point_norm =
        |i: usize| g.vec(i).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| point_norm(b).total_cmp(&point_norm(a)).then(a.cmp(&b)));
    let mut y = vec![0.0; p];
    for &i in order.iter().take(RESCUE_POINTS) {
        let gi = point_norm(i);
        if gi == 0.0 || !gi.is_finite() {
            continue;
        }
        let mut step = cap / gi;
        for _ in 0..=RESCUE_TRIALS {
            let x = state.config.point(i);
            for c in 0..p {
                y[c] = x[c] - step * g.vec(i)[c];
            }
            let proj = match domain.project(&y) {
                Ok(proj) => proj,
                Err(_) => {
                    step *= shrink;
                    continue;
                }
            };
            let mut cand = state.config.clone();
            cand.point_mut(i).copy_from_slice(&proj);
            let ev = evaluate(cand, model, domain, k_graph)?;
            if ev.energy < state.energy {
                return Ok(Some(ev));
            }
            step *= shrink;
        }
    }
    Ok(None)
}

/// Minimize the energy from `init`. Returns the best iterate ever accepted
/// (energy always measured on a freshly built graph) and the run trace.
pub fn minimize(
    init: &Configuration,
    model: &EnergyModel,
    domain: &DomainDescriptor,
    opts: &OptimizerConfig,
) -> Result<(Configuration, RunTrace)> {
    opts.validate()?;
    let n = init.n();
    if n == 0 {
        return Err(Error::InvalidInput("cannot minimize an empty configuration".into()));
    }
    if init.p() != domain.p() {
        return Err(Error::InvalidInput(format!(
            "configuration dimension {} does not match domain dimension {}",
            init.p(),
            domain.p()
        )));
    }
    let d = model.d as f64;
    let nf = n as f64;
    let spacing = domain.scale_hint() * nf.powf(-1.0 / d);
    let step0 = opts.step0.unwrap_or_else(|| 0.1 * nf.powf(-1.0 / d - 1.0 / model.s));
    let jitter0 = opts.jitter.unwrap_or(0.5 * spacing);
    let dup_magnitude = 1e-3 * spacing;
    // Per-coordinate displacement cap: half the mean spacing per step.
    let cap = 0.5 * spacing;
    let k_graph = model.graph_k(n);

    let mut state = evaluate_recovering(
        init.clone(),
        model,
        domain,
        k_graph,
        dup_magnitude,
        opts.seed.wrapping_add(0x5eed),
    )?;
    let mut best = state.config.clone();
    let mut e_best = state.energy;

    let mut trace = RunTrace {
        energies: Vec::new(),
        grad_norms: Vec::new(),
        separations: Vec::new(),
        accepted_iters: Vec::new(),
        round_starts: Vec::new(),
        iters: 0,
        stop_reason: StopReason::MaxIters,
    };
    let mut iters_total = 0usize;
    let mut stop = StopReason::MaxIters;

    for round in 0..=opts.restarts {
        if round > 0 {
            let sigma = jitter0 * 0.5f64.powi(round as i32 - 1);
            let seed_r = opts.seed ^ (round as u64).wrapping_mul(0x9E3779B97F4A7C15);
            let jittered = jitter_config(&best, domain, sigma, seed_r)?;
            state = evaluate_recovering(
                jittered,
                model,
                domain,
                k_graph,
                dup_magnitude,
                seed_r.wrapping_add(1),
            )?;
        }
        trace.round_starts.push(trace.energies.len());
        let mut window_anchor = state.energy;
        let mut in_window = 0usize;
        let mut warm = step0;
        let mut round_stop = StopReason::MaxIters;

        for _ in 0..opts.max_iters {
            iters_total += 1;
            let g = gradient(&state.config, model, &state.graph, domain)?;
            let gnorm = g.inf_norm();
            if gnorm == 0.0 {
                round_stop = StopReason::Tol;
                break;
            }
            if !gnorm.is_finite() {
                return Err(Error::OptimizerFailed(format!("non-finite gradient norm {gnorm}")));
            }
            let mut step = warm.min(cap / gnorm);
            let mut accepted = false;
            for _ in 0..=opts.max_halvings {
                let cand = match step_projected(&state.config, &g, step, domain) {
                    Ok(c) => c,
                    Err(_) => {
                        step *= opts.shrink;
                        continue;
                    }
                };
                let cand_ev = evaluate(cand, model, domain, k_graph)?;
                if cand_ev.energy < state.energy {
                    state = cand_ev;
                    // Warm-start the next search one notch above what worked.
                    warm = (step / opts.shrink).min(1e12);
                    accepted = true;
                    break;
                }
                step *= opts.shrink;
            }
            if !accepted {
                // The aggregate direction can point into a neighbor-switch
                // kink (a distance tie) and fail even though descent exists:
                // a kink blocks only the tied points. Try single-point moves
                // before giving up; any strict decrease keeps the run alive.
                if let Some(ev) =
                    rescue_single_point(&state, &g, model, domain, k_graph, cap, opts.shrink)?
                {
                    state = ev;
                    accepted = true;
                }
            }
            if !accepted {
                round_stop = StopReason::Stall;
                break;
            }
            if state.energy < e_best {
                e_best = state.energy;
                best = state.config.clone();
            }
            trace.energies.push(state.energy);
            trace.grad_norms.push(gnorm);
            trace.separations.push(min_neighbor_dist(&state.graph));
            trace.accepted_iters.push(iters_total - 1);
            in_window += 1;
            if in_window >= opts.window {
                let scale = window_anchor.abs().max(state.energy.abs()).max(f64::MIN_POSITIVE);
                if (window_anchor - state.energy) / scale < opts.tol_rel_energy {
                    round_stop = StopReason::Tol;
                    break;
                }
                window_anchor = state.energy;
                in_window = 0;
            }
        }
        stop = round_stop;
    }

    trace.iters = iters_total;
    trace.stop_reason = stop;
    Ok((best, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{FieldSpec, KSpec, WeightSpec};
    use crate::density::constant_cs1k;

    fn unweighted(s: f64, k: usize, d: usize) -> EnergyModel {
        EnergyModel::unweighted(s, KSpec::Knn(k), d)
    }

    fn interaction_of(config: &Configuration, model: &EnergyModel, domain: &DomainDescriptor) -> f64 {
        let graph = build_graph(config, domain, model.graph_k(config.n())).unwrap();
        energy(config, model, &graph).unwrap().interaction
    }

    #[test]
    fn single_point_descends_to_the_field_minimum() {
        let domain = DomainDescriptor::cube(1);
        let model = EnergyModel::new(
            2.0,
            KSpec::Knn(1),
            1,
            WeightSpec::Constant(1.0),
            FieldSpec::potential(|x| (x[0] - 0.3).powi(2), |x, g| g[0] = 2.0 * (x[0] - 0.3)),
        )
        .unwrap();
        let init = Configuration::from_points(&[vec![0.9]]);
        let (best, trace) = minimize(&init, &model, &domain, &OptimizerConfig::default()).unwrap();
        assert!((best.point(0)[0] - 0.3).abs() < 1e-6, "{:?}", best.point(0));
        assert!(trace.energies.windows(2).all(|w| w[1] < w[0]));
        assert!(matches!(trace.stop_reason, StopReason::Tol | StopReason::Stall));
    }

    #[test]
    fn two_points_repel_to_the_interval_ends() {
        let domain = DomainDescriptor::cube(1);
        let model = unweighted(2.0, 1, 1);
        let init = Configuration::from_points(&[vec![0.3], vec![0.35]]);
        let opts = OptimizerConfig { max_iters: 3000, ..OptimizerConfig::default() };
        let (best, _) = minimize(&init, &model, &domain, &opts).unwrap();
        let mut xs = vec![best.point(0)[0], best.point(1)[0]];
        xs.sort_by(f64::total_cmp);
        assert!(xs[0].abs() < 1e-9 && (xs[1] - 1.0).abs() < 1e-9, "{xs:?}");
        assert!((interaction_of(&best, &model, &domain) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn equal_spacing_is_recovered_on_the_circle() {
        let n = 8;
        let domain = DomainDescriptor::unit_torus(1);
        let model = unweighted(2.0, 2, 1);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![(i as f64 + 0.5 + 0.08 * ((i * i) as f64).sin()) / n as f64])
            .collect();
        let init = Configuration::from_points(&pts);
        let opts = OptimizerConfig {
            max_iters: 6000,
            tol_rel_energy: 1e-13,
            window: 40,
            ..OptimizerConfig::default()
        };
        let (best, _) = minimize(&init, &model, &domain, &opts).unwrap();
        let mut xs: Vec<f64> = (0..n).map(|i| best.point(i)[0]).collect();
        xs.sort_by(f64::total_cmp);
        for i in 0..n {
            let gap = if i + 1 < n { xs[i + 1] - xs[i] } else { xs[0] + 1.0 - xs[n - 1] };
            assert!((gap - 1.0 / n as f64).abs() < 1e-4, "gap {i} = {gap}");
        }
        let rescaled =
            interaction_of(&best, &model, &domain) / (n as f64).powf(1.0 + model.s);
        assert!((rescaled - constant_cs1k(2.0, 2)).abs() < 1e-6, "{rescaled}");
    }

    #[test]
    fn accepted_energies_decrease_and_iterates_stay_feasible() {
        let domain = DomainDescriptor::cube(2);
        let model = unweighted(2.0, 1, 2);
        let init = domain.sample_uniform(20, 5).unwrap();
        let opts = OptimizerConfig { max_iters: 300, ..OptimizerConfig::default() };
        let (best, trace) = minimize(&init, &model, &domain, &opts).unwrap();
        assert!(!trace.energies.is_empty());
        assert!(trace.energies.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(trace.energies.len(), trace.grad_norms.len());
        assert_eq!(trace.energies.len(), trace.separations.len());
        assert_eq!(trace.energies.len(), trace.accepted_iters.len());
        assert!(trace.separations.iter().all(|&s| s > 0.0));
        assert!(best.coords().iter().all(|&c| (-1e-12..=1.0 + 1e-12).contains(&c)));
        assert!(trace.iters >= trace.energies.len());
    }

    #[test]
    fn identical_seeds_reproduce_identical_runs_at_any_thread_count() {
        let domain = DomainDescriptor::unit_torus(2);
        let model = unweighted(3.0, 2, 2);
        let init = domain.sample_uniform(24, 9).unwrap();
        let opts = OptimizerConfig { max_iters: 120, seed: 42, ..OptimizerConfig::default() };
        let run = || {
            let (best, trace) = minimize(&init, &model, &domain, &opts).unwrap();
            (best.coords().to_vec(), trace.energies, trace.accepted_iters)
        };
        let base = run();
        assert_eq!(base, run());
        for threads in [1usize, 3] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            assert_eq!(base, pool.install(run));
        }
    }

    #[test]
    fn duplicate_initial_points_are_resolved() {
        let domain = DomainDescriptor::cube(2);
        let model = unweighted(2.0, 1, 2);
        let init = Configuration::from_points(&[
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            vec![0.2, 0.8],
        ]);
        let opts = OptimizerConfig { max_iters: 200, ..OptimizerConfig::default() };
        let (best, trace) = minimize(&init, &model, &domain, &opts).unwrap();
        assert!(trace.energies.last().unwrap().is_finite());
        for i in 0..best.n() {
            for j in (i + 1)..best.n() {
                assert_ne!(best.point(i), best.point(j));
            }
        }
    }

    #[test]
    fn restarts_return_the_best_round() {
        let domain = DomainDescriptor::unit_torus(1);
        let model = unweighted(2.0, 1, 1);
        let init = domain.sample_uniform(12, 3).unwrap();
        let opts = OptimizerConfig {
            max_iters: 150,
            restarts: 2,
            seed: 11,
            ..OptimizerConfig::default()
        };
        let (best, trace) = minimize(&init, &model, &domain, &opts).unwrap();
        assert_eq!(trace.round_starts.len(), 3);
        let returned = {
            let graph = build_graph(&best, &domain, 1).unwrap();
            energy(&best, &model, &graph).unwrap().total
        };
        let trace_min = trace.energies.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(returned <= trace_min + 1e-12 * trace_min.abs());
    }

    #[test]
    fn duplicate_resolution_is_deterministic_and_leaves_distinct_points_alone() {
        let domain = DomainDescriptor::cube(2);
        let a = vec![0.25, 0.75];
        let b = vec![0.6, 0.1];
        let config = Configuration::from_points(&[a.clone(), a.clone(), b.clone()]);
        let out1 = resolve_duplicates(&config, &domain, 1e-3, 7).unwrap();
        let out2 = resolve_duplicates(&config, &domain, 1e-3, 7).unwrap();
        assert_eq!(out1.coords(), out2.coords());
        assert_ne!(out1.point(0), out1.point(1));
        assert_eq!(out1.point(2), b.as_slice());
        for i in 0..2 {
            let dx = out1.point(i)[0] - a[0];
            let dy = out1.point(i)[1] - a[1];
            assert!(dx.hypot(dy) <= 1e-3 + 1e-15);
        }
        assert!(resolve_duplicates(&config, &domain, 0.0, 7).is_err());
    }

    #[test]
    fn optimizer_config_is_validated() {
        let domain = DomainDescriptor::cube(1);
        let model = unweighted(2.0, 1, 1);
        let init = Configuration::from_points(&[vec![0.5]]);
        for bad in [
            OptimizerConfig { shrink: 1.0, ..OptimizerConfig::default() },
            OptimizerConfig { shrink: 0.0, ..OptimizerConfig::default() },
            OptimizerConfig { window: 0, ..OptimizerConfig::default() },
            OptimizerConfig { max_iters: 0, ..OptimizerConfig::default() },
            OptimizerConfig { step0: Some(-1.0), ..OptimizerConfig::default() },
        ] {
            assert!(minimize(&init, &model, &domain, &bad).is_err());
        }
        let mismatched = Configuration::from_points(&[vec![0.5, 0.5]]);
        assert!(minimize(&mismatched, &model, &domain, &OptimizerConfig::default()).is_err());
    }
}
