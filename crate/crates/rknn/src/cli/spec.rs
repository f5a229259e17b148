//! The JSON run specification and its conversion into library objects.
//!
//! Weights, fields, and densities are referenced by registered string keys;
//! arbitrary expressions are out of scope, which keeps every spec
//! reproducible from the file alone.

use std::sync::Arc;

use serde::Deserialize;

use crate::density::{weight_from_density, DensityTarget, GradFn, ScalarFn};
use crate::energy::{EnergyModel, FieldSpec, KSpec, WeightSpec};
use crate::geometry::{DomainDescriptor, Quadrature};
use crate::optimize::OptimizerConfig;
use crate::{Error, Result};

/// One batch run: domain, energy model, point count, optimizer settings,
/// and output paths. Unknown JSON keys are rejected.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub domain: DomainJson,
    pub model: ModelJson,
    #[serde(alias = "N")]
    pub n: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub init: InitJson,
    /// Per-axis quadrature resolution (bands for spheres, scan cells for
    /// implicit surfaces); drives normalization and the covering radius.
    #[serde(default = "default_quadrature")]
    pub quadrature: usize,
    #[serde(default)]
    pub outputs: OutputsJson,
    #[serde(default)]
    pub seed: u64,
}

fn default_quadrature() -> usize {
    64
}

/// Domain descriptor schema: {"kind": "box"|"torus"|"sphere"|"implicit", ...}.
#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainJson {
    Box { bounds: Vec<[f64; 2]> },
    Torus { period: Vec<f64> },
    Sphere { radius: f64, #[serde(default)] center: Option<[f64; 3]> },
    Implicit { expr: String },
}

impl DomainJson {
    pub fn build(&self) -> Result<DomainDescriptor> {
        match self {
            DomainJson::Box { bounds } => DomainDescriptor::new_box(bounds.clone()),
            DomainJson::Torus { period } => DomainDescriptor::torus(period.clone()),
            DomainJson::Sphere { radius, center } => match center {
                Some(c) => DomainDescriptor::sphere_at(*c, *radius),
                None => DomainDescriptor::sphere(*radius),
            },
            DomainJson::Implicit { expr } => DomainDescriptor::implicit(expr),
        }
    }
}

/// Energy model schema: s, k (integer or "full"), weight, field.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    pub s: f64,
    pub k: KJson,
    #[serde(default)]
    pub weight: WeightJson,
    #[serde(default)]
    pub field: FieldJson,
}

/// Neighbor truncation: a count, or "full" for the classical energy.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum KJson {
    Count(usize),
    Name(String),
}

impl KJson {
    fn build(&self) -> Result<KSpec> {
        match self {
            KJson::Count(k) => Ok(KSpec::Knn(*k)),
            KJson::Name(s) if s == "full" => Ok(KSpec::Full),
            KJson::Name(s) => Err(Error::Spec(format!(
                "k must be a positive integer or \"full\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WeightJson {
    #[default]
    #[serde(skip)]
    Unit,
    Constant {
        #[serde(default = "one")]
        c: f64,
    },
    /// Density-matching weight from a named target density; `eps` floors and
    /// renormalizes first (required when the raw density vanishes somewhere).
    Density {
        rho: String,
        #[serde(default)]
        eps: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldJson {
    #[default]
    None,
    Named {
        name: String,
    },
}

/// Initial configuration: stratified lattice with jitter (boxes and tori),
/// uniform random draws, or draws matching the density weight's target
/// (required for non-uniform targets; descent alone cannot transport mass
/// across the domain).
#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitJson {
    Stratified {
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
    Uniform,
    Density,
}

fn default_jitter() -> f64 {
    0.2
}

impl Default for InitJson {
    fn default() -> Self {
        InitJson::Stratified { jitter: default_jitter() }
    }
}

impl InitJson {
    /// Draw the initial configuration. The stratified default falls back to
    /// uniform draws on domains without a lattice (sphere, implicit).
    pub fn sample(
        &self,
        domain: &DomainDescriptor,
        built: &BuiltSpec,
        n: usize,
        seed: u64,
    ) -> Result<crate::neighbors::Configuration> {
        match self {
            InitJson::Stratified { jitter } => match domain {
                DomainDescriptor::Box { .. } | DomainDescriptor::Torus { .. } => {
                    domain.sample_stratified(n, *jitter, seed)
                }
                _ => domain.sample_uniform(n, seed),
            },
            InitJson::Uniform => domain.sample_uniform(n, seed),
            InitJson::Density => {
                let target = built.target.as_ref().ok_or_else(|| {
                    Error::Spec(
                        "init kind \"density\" needs a density-derived weight".into(),
                    )
                })?;
                crate::density::sample_matching_density(domain, &built.quad, target, n, seed)
            }
        }
    }
}

/// Output file names, all relative to the --out directory. Absent entries
/// are skipped; everything is written only after the run has succeeded.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsJson {
    pub points: Option<String>,
    pub trace: Option<String>,
    pub summary: Option<String>,
    /// ASCII point cloud; ambient dimension must be 3.
    pub ply: Option<String>,
}

/// A named external field: value and gradient closures.
pub fn field_builtin(name: &str) -> Result<FieldSpec> {
    match name {
        "V=x" => Ok(FieldSpec::potential(
            |x: &[f64]| x[0],
            |x: &[f64], g: &mut [f64]| {
                g.fill(0.0);
                if !x.is_empty() {
                    g[0] = 1.0;
                }
            },
        )),
        _ => Err(Error::UnknownName(format!("field '{name}'"))),
    }
}

/// A named density shape: value and gradient closures, not yet normalized.
/// "rho=2x-floored" is the pre-floored variant (2x+0.2)/1.2 on [0,1].
pub fn density_builtin(name: &str) -> Result<(ScalarFn, GradFn)> {
    let pair: (ScalarFn, GradFn) = match name {
        "rho=1" => (Arc::new(|_: &[f64]| 1.0), Arc::new(|_: &[f64], g: &mut [f64]| g.fill(0.0))),
        "rho=2x" => (
            Arc::new(|x: &[f64]| 2.0 * x[0]),
            Arc::new(|_: &[f64], g: &mut [f64]| {
                g.fill(0.0);
                g[0] = 2.0;
            }),
        ),
        "rho=2x-floored" => (
            Arc::new(|x: &[f64]| (2.0 * x[0] + 0.2) / 1.2),
            Arc::new(|_: &[f64], g: &mut [f64]| {
                g.fill(0.0);
                g[0] = 2.0 / 1.2;
            }),
        ),
        "rho∝x3sq" => (
            Arc::new(|x: &[f64]| x[2] * x[2]),
            Arc::new(|x: &[f64], g: &mut [f64]| {
                g.fill(0.0);
                g[2] = 2.0 * x[2];
            }),
        ),
        _ => return Err(Error::UnknownName(format!("density '{name}'"))),
    };
    Ok(pair)
}

/// Resolve a named density into a normalized (optionally floored) target on
/// the given quadrature.
pub fn density_target(name: &str, eps: Option<f64>, quad: &Quadrature) -> Result<DensityTarget> {
    let (rho, grad) = density_builtin(name)?;
    match eps {
        Some(e) => DensityTarget::floored(rho, Some(grad), e, quad),
        None => DensityTarget::normalized(rho, Some(grad), quad),
    }
}

/// Everything a run needs, resolved from the JSON: domain, model,
/// quadrature, and the density target when the weight carries one.
pub struct BuiltSpec {
    pub domain: DomainDescriptor,
    pub model: EnergyModel,
    pub quad: Quadrature,
    pub target: Option<DensityTarget>,
}

impl RunSpec {
    pub fn parse(text: &str) -> Result<RunSpec> {
        let spec: RunSpec = serde_json::from_str(text)?;
        if spec.n == 0 {
            return Err(Error::Spec("n must be >= 1".into()));
        }
        if spec.quadrature < 2 {
            return Err(Error::Spec("quadrature resolution must be >= 2".into()));
        }
        spec.optimizer.validate()?;
        Ok(spec)
    }

    /// Resolve the domain, model, quadrature, and density target.
    pub fn build(&self) -> Result<BuiltSpec> {
        let domain = self.domain.build()?;
        let quad = domain.build_quadrature(self.quadrature)?;
        let d = domain.d();
        let mut target = None;
        let weight = match &self.model.weight {
            WeightJson::Unit => WeightSpec::Constant(1.0),
            WeightJson::Constant { c } => WeightSpec::Constant(*c),
            WeightJson::Density { rho, eps } => {
                let t = density_target(rho, *eps, &quad)?;
                let w = weight_from_density(&t, self.model.s, d)?;
                target = Some(t);
                w
            }
        };
        let field = match &self.model.field {
            FieldJson::None => FieldSpec::None,
            FieldJson::Named { name } => field_builtin(name)?,
        };
        let model = EnergyModel::new(self.model.s, self.model.k.build()?, d, weight, field)?;
        Ok(BuiltSpec { domain, model, quad, target })
    }
}
