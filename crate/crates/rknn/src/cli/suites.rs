//! Named property suites behind `rknn verify`. Each suite runs a batch of
//! randomized or exhaustive checks and reports machine-readable verdicts;
//! the acceptance tests drive the same functions at larger case counts.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{empirical_density, k_monotonicity_check, separation, short_range_check, Partition};
use crate::density::{constant_cs1k, sample_matching_density, weight_from_density, DensityTarget};
use crate::energy::{energy, fd_gradient, gradient, EnergyModel, FieldSpec, KSpec, WeightSpec};
use crate::geometry::DomainDescriptor;
use crate::neighbors::{build_graph, knn_brute, Configuration};
use crate::optimize::{minimize, OptimizerConfig};
use crate::{Error, Result};

pub const SUITES: [&str; 7] = [
    "neighbors-oracle",
    "gradient-fd",
    "short-range",
    "monotonicity",
    "circle-exact",
    "separation-scaling",
    "density-matching",
];

/// Verdict of one suite run. `failures` holds one line per failing case.
#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub cases: usize,
    pub failures: Vec<String>,
    pub passed: bool,
}

impl SuiteReport {
    fn finish(suite: &str, seed: u64, cases: usize, failures: Vec<String>) -> SuiteReport {
        SuiteReport { suite: suite.into(), seed, cases, passed: failures.is_empty(), failures }
    }
}

/// Run the named suite with its default case count.
pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport> {
    match name {
        "neighbors-oracle" => neighbors_oracle(seed, 300),
        "gradient-fd" => gradient_fd(seed, 50),
        "short-range" => short_range(seed, 60),
        "monotonicity" => monotonicity(seed, 100),
        "circle-exact" => circle_exact(),
        "separation-scaling" => separation_scaling(seed),
        "density-matching" => density_matching(seed),
        _ => Err(Error::UnknownName(format!(
            "suite '{name}' (have: {})",
            SUITES.join(", ")
        ))),
    }
}

fn random_domain(rng: &mut ChaCha8Rng, case: usize) -> DomainDescriptor {
    match case % 4 {
        0 => DomainDescriptor::cube(1 + case / 4 % 3),
        1 => {
            let d = 1 + case / 4 % 2;
            let period: Vec<f64> = (0..d).map(|_| 0.5 + rng.random::<f64>()).collect();
            DomainDescriptor::torus(period).unwrap()
        }
        2 => DomainDescriptor::sphere(0.5 + rng.random::<f64>()).unwrap(),
        _ => {
            let d = 1 + case / 4 % 3;
            let bounds = (0..d)
                .map(|_| {
                    let lo = -1.0 + rng.random::<f64>();
                    [lo, lo + 0.5 + rng.random::<f64>()]
                })
                .collect();
            DomainDescriptor::new_box(bounds).unwrap()
        }
    }
}

/// Tree search against the brute-force oracle: identical neighbor rows
/// (indices and squared distances, bit for bit) on random instances mixed
/// with engineered tie and duplicate cases.
pub fn neighbors_oracle(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for case in 0..cases {
        let domain = random_domain(&mut rng, case);
        let n = 2 + rng.random_range(0..40);
        let mut config = if case % 5 == 0 {
            // Exact lattice: maximal distance ties.
            match &domain {
                DomainDescriptor::Box { .. } | DomainDescriptor::Torus { .. } => {
                    domain.sample_stratified(n, 0.0, seed ^ case as u64)?
                }
                _ => domain.sample_uniform(n, seed ^ case as u64)?,
            }
        } else {
            domain.sample_uniform(n, seed ^ case as u64)?
        };
        if case % 7 == 0 && n >= 2 {
            // Duplicate points: zero distances, index-only tie-breaking.
            let first = config.point(0).to_vec();
            config.point_mut(1).copy_from_slice(&first);
        }
        let k = 1 + rng.random_range(0..(n - 1).min(8));
        let tree = build_graph(&config, &domain, k)?;
        let brute = knn_brute(&config, &domain, k)?;
        for i in 0..config.n() {
            if tree.row_idx(i) != brute.row_idx(i) {
                failures.push(format!(
                    "case {case}: row {i} indices differ: tree {:?} vs brute {:?}",
                    tree.row_idx(i),
                    brute.row_idx(i)
                ));
                break;
            }
            let bits = |ds: &[f64]| ds.iter().map(|d| d.to_bits()).collect::<Vec<_>>();
            if bits(tree.row_dist(i)) != bits(brute.row_dist(i)) {
                failures.push(format!("case {case}: row {i} distances differ"));
                break;
            }
        }
    }
    Ok(SuiteReport::finish("neighbors-oracle", seed, cases, failures))
}

/// Analytic gradient against central finite differences at tie-free
/// configurations, relative error below 1e-6.
pub fn gradient_fd(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut case = 0;
    let mut attempts = 0;
    while case < cases && attempts < 20 * cases {
        attempts += 1;
        let domain = random_domain(&mut rng, attempts);
        let n = 3 + rng.random_range(0..12);
        let k = 1 + rng.random_range(0..(n - 1).min(4));
        let s = 0.5 + 3.0 * rng.random::<f64>();
        let weight = match attempts % 3 {
            0 => WeightSpec::Constant(1.0),
            1 => WeightSpec::Constant(0.25 + rng.random::<f64>()),
            _ => {
                let target = DensityTarget::raw(
                    std::sync::Arc::new(|x: &[f64]| 1.0 + x[0] * x[0]),
                    Some(std::sync::Arc::new(|x: &[f64], g: &mut [f64]| {
                        g.fill(0.0);
                        g[0] = 2.0 * x[0];
                    })),
                );
                weight_from_density(
                    &DensityTarget { normalized: true, min_on_nodes: 1.0, ..target },
                    s,
                    domain.d(),
                )?
            }
        };
        let field = if attempts % 2 == 0 {
            FieldSpec::potential(
                |x: &[f64]| x.iter().map(|c| c * c).sum::<f64>(),
                |x: &[f64], g: &mut [f64]| {
                    for (gi, ci) in g.iter_mut().zip(x) {
                        *gi = 2.0 * ci;
                    }
                },
            )
        } else {
            FieldSpec::None
        };
        let model = EnergyModel::new(s, KSpec::Knn(k), domain.d(), weight, field)?;
        let config = domain.sample_uniform(n, seed ^ (7919 * attempts as u64))?;
        let graph = build_graph(&config, &domain, k)?;
        let g = gradient(&config, &model, &graph, &domain)?;
        if g.at_tie {
            continue;
        }
        case += 1;
        // Central differences on r^-s lose (h/r)^2 in relative accuracy, so
        // the stencil must sit well inside the smallest pair gap; a fixed
        // step goes bad whenever a random draw lands two points close.
        let h = 1e-4 * separation(&config, &domain)?;
        let fd = fd_gradient(&config, &model, &domain, h)?;
        let scale = g.inf_norm().max(1e-9);
        let err = g
            .flat()
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
            / scale;
        if err >= 1e-6 {
            failures.push(format!(
                "case {case}: gradient vs finite differences rel err {err:.2e} (n={n}, k={k}, s={s:.3})"
            ));
        }
    }
    if case < cases {
        failures.push(format!("only {case}/{cases} tie-free cases found"));
    }
    Ok(SuiteReport::finish("gradient-fd", seed, cases, failures))
}

/// Subadditivity sandwich for configurations split across two separated
/// boxes: parts <= whole <= parts + N*k*h^-s, zero violations.
pub fn short_range(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for case in 0..cases {
        let h = [0.25, 0.5, 1.0][case % 3];
        let s = 1.0 + 2.0 * rng.random::<f64>();
        let k = 1 + case % 3;
        let a1 = DomainDescriptor::cube(2);
        let a2 = DomainDescriptor::new_box(vec![[1.0 + h, 2.0 + h], [0.0, 1.0]]).unwrap();
        let n1 = 2 + rng.random_range(0..12);
        let n2 = 2 + rng.random_range(0..12);
        let mut coords = a1.sample_uniform(n1, seed ^ (2 * case as u64))?.coords().to_vec();
        coords.extend_from_slice(a2.sample_uniform(n2, seed ^ (2 * case as u64 + 1))?.coords());
        let config = Configuration::new(coords, 2);
        let model = EnergyModel::unweighted(s, KSpec::Knn(k), 2);
        let report = short_range_check(&config, &a1, &a2, &model)?;
        if !report.ok {
            failures.push(format!(
                "case {case}: whole {} outside [{}, {}] (h={h}, k={k}, s={s:.3})",
                report.whole,
                report.part1 + report.part2,
                report.part1 + report.part2 + report.bound
            ));
        }
    }
    Ok(SuiteReport::finish("short-range", seed, cases, failures))
}

/// Truncated interaction energies are nondecreasing in k and bounded by the
/// full energy.
pub fn monotonicity(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for case in 0..cases {
        let domain = random_domain(&mut rng, case);
        let n = 3 + rng.random_range(0..24);
        let s = 0.5 + 3.0 * rng.random::<f64>();
        let config = domain.sample_uniform(n, seed ^ (31 * case as u64))?;
        let k_max = 8.min(n - 1);
        let report = k_monotonicity_check(&config, &domain, s, k_max)?;
        if !report.ok {
            failures.push(format!(
                "case {case}: {} violations, interactions {:?} vs full {}",
                report.violations, report.interactions, report.full
            ));
        }
    }
    Ok(SuiteReport::finish("monotonicity", seed, cases, failures))
}

/// Equally spaced points on the unit circle: the rescaled truncated energy
/// equals the closed-form 1-D constant to 1e-12 relative error, across a
/// grid of N, k, s.
pub fn circle_exact() -> Result<SuiteReport> {
    let mut failures = Vec::new();
    let mut cases = 0;
    let domain = DomainDescriptor::unit_torus(1);
    for &n in &[10usize, 50, 200] {
        let coords: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let config = Configuration::new(coords, 1);
        for k in 1..=4usize {
            let graph = build_graph(&config, &domain, k)?;
            for &s in &[1.5f64, 2.0, 4.0] {
                cases += 1;
                let model = EnergyModel::unweighted(s, KSpec::Knn(k), 1);
                let e = energy(&config, &model, &graph)?.total;
                let rescaled = e / (n as f64).powf(1.0 + s);
                let exact = constant_cs1k(s, k);
                let rel = (rescaled - exact).abs() / exact;
                if rel > 1e-12 {
                    failures.push(format!(
                        "N={n} k={k} s={s}: rescaled {rescaled:.15} vs exact {exact:.15} (rel {rel:.2e})"
                    ));
                }
            }
        }
    }
    Ok(SuiteReport::finish("circle-exact", 0, cases, failures))
}

/// Separation of optimized square configurations scales like N^-1/2:
/// rescaled separation stays positive with max/min ratio below 2.
pub fn separation_scaling(seed: u64) -> Result<SuiteReport> {
    let domain = DomainDescriptor::cube(2);
    let model = EnergyModel::unweighted(3.0, KSpec::Knn(2), 2);
    let mut failures = Vec::new();
    let mut rescaled = Vec::new();
    let sizes = [100usize, 200, 400];
    for (i, &n) in sizes.iter().enumerate() {
        let init = domain.sample_stratified(n, 0.2, seed ^ (11 * i as u64))?;
        let opts = OptimizerConfig {
            max_iters: 1500,
            tol_rel_energy: 1e-10,
            window: 100,
            seed: seed ^ (13 * i as u64),
            ..OptimizerConfig::default()
        };
        let (best, _) = minimize(&init, &model, &domain, &opts)?;
        let sep = separation(&best, &domain)?;
        let y = sep * (n as f64).sqrt();
        if !(y > 0.0) {
            failures.push(format!("N={n}: rescaled separation {y} not positive"));
        }
        rescaled.push(y);
    }
    let max = rescaled.iter().fold(0.0f64, |a, &b| a.max(b));
    let min = rescaled.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if max / min >= 2.0 {
        failures.push(format!(
            "rescaled separations {rescaled:?}: max/min {} >= 2",
            max / min
        ));
    }
    Ok(SuiteReport::finish("separation-scaling", seed, sizes.len(), failures))
}

/// Density-derived weights reproduce their target: optimize toward
/// rho(x) = (2x+0.2)/1.2 on [0,1] and compare the 10-bin histogram to the
/// target masses in total variation.
pub fn density_matching(seed: u64) -> Result<SuiteReport> {
    let domain = DomainDescriptor::cube(1);
    let quad = domain.build_quadrature(512)?;
    let target = super::spec::density_target("rho=2x-floored", None, &quad)?;
    let weight = weight_from_density(&target, 2.0, 1)?;
    let model = EnergyModel::new(2.0, KSpec::Knn(2), 1, weight, FieldSpec::None)?;
    let n = 500;
    let init = sample_matching_density(&domain, &quad, &target, n, seed)?;
    let opts = OptimizerConfig {
        max_iters: 4000,
        tol_rel_energy: 1e-11,
        window: 150,
        seed: seed ^ 0xd5,
        ..OptimizerConfig::default()
    };
    let (best, _) = minimize(&init, &model, &domain, &opts)?;
    let partition = Partition::TensorGrid { per_axis: 10 };
    let report = empirical_density(&best, &domain, &partition, &target, &quad)?;
    let mut failures = Vec::new();
    if report.tv_distance >= 0.08 {
        failures.push(format!(
            "10-bin total variation {:.4} >= 0.08 (counts {:?})",
            report.tv_distance, report.cell_counts
        ));
    }
    Ok(SuiteReport::finish("density-matching", seed, 1, failures))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_rejected_with_the_catalog() {
        let err = run_suite("does-not-exist", 0).unwrap_err();
        assert!(matches!(err, Error::UnknownName(_)));
        assert!(err.to_string().contains("neighbors-oracle"));
    }

    #[test]
    fn fast_suites_pass_at_small_case_counts() {
        assert!(neighbors_oracle(11, 40).unwrap().passed);
        assert!(gradient_fd(12, 8).unwrap().passed);
        assert!(short_range(13, 9).unwrap().passed);
        assert!(monotonicity(14, 12).unwrap().passed);
        let circle = circle_exact().unwrap();
        assert!(circle.passed, "{:?}", circle.failures);
        assert_eq!(circle.cases, 36);
    }

    #[test]
    fn suite_reports_serialize_with_verdict_fields() {
        let report = circle_exact().unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"suite\":\"circle-exact\""));
        assert!(json.contains("\"passed\":true"));
    }
}
