//! JSON experiment configuration.

use kinetic_core::coefficients::{DampedHamiltonian, Holder, Kolmogorov, Model};
use kinetic_core::montecarlo::{Scheme, SimConfig};
use kinetic_core::parametrix::QuadratureSpec;
use kinetic_core::PhasePoint;
use serde::{Deserialize, Serialize};

use crate::KkError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Simulate,
    Density,
    Parametrix,
    Control,
    AuditBounds,
    AuditRates,
    AuditAssumptions,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Density => "density",
            Task::Parametrix => "parametrix",
            Task::Control => "control",
            Task::AuditBounds => "audit-bounds",
            Task::AuditRates => "audit-rates",
            Task::AuditAssumptions => "audit-assumptions",
        }
    }

    pub fn stochastic(self) -> bool {
        matches!(self, Task::Simulate | Task::AuditBounds | Task::AuditAssumptions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    #[serde(default = "one")]
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anharmonic: Option<f64>,
}

fn one() -> usize {
    1
}

impl ModelConfig {
    pub fn build(&self) -> Result<Box<dyn Model>, KkError> {
        if self.d == 0 {
            return Err(KkError::validation("model.d", "must be at least 1"));
        }
        let allowed: &[&str] = match self.id.as_str() {
            "kolmogorov" => &["sigma"],
            "holder" => &["gamma", "a", "b", "c"],
            "damped-hamiltonian" => &["damping", "stiffness", "anharmonic"],
            other => return Err(KkError::validation("model.id", format!("unknown model `{other}` (kolmogorov, holder, damped-hamiltonian)"))),
        };
        for (name, v) in [
            ("sigma", self.sigma),
            ("gamma", self.gamma),
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("damping", self.damping),
            ("stiffness", self.stiffness),
            ("anharmonic", self.anharmonic),
        ] {
            if let Some(v) = v {
                if !allowed.contains(&name) {
                    return Err(KkError::validation(format!("model.{name}"), format!("not a parameter of `{}`", self.id)));
                }
                if !v.is_finite() {
                    return Err(KkError::validation(format!("model.{name}"), "must be finite"));
                }
            }
        }
        let m: Box<dyn Model> = match self.id.as_str() {
            "kolmogorov" => Box::new(Kolmogorov::with_sigma(self.d, self.sigma.unwrap_or(1.0))),
            "holder" => {
                let g = self.gamma.unwrap_or(0.5);
                if !(g > 0.0 && g <= 1.0) {
                    return Err(KkError::validation("model.gamma", "must lie in (0, 1]"));
                }
                let base = Holder::new(self.d, g);
                Box::new(Holder { a: self.a.unwrap_or(base.a), b: self.b.unwrap_or(base.b), c: self.c.unwrap_or(base.c), ..base })
            }
            _ => Box::new(DampedHamiltonian {
                d: self.d,
                damping: self.damping.unwrap_or(1.0),
                stiffness: self.stiffness.unwrap_or(1.0),
                anharmonic: self.anharmonic.unwrap_or(0.5),
            }),
        };
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    Euler,
    ExactLinearSubstep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub npaths: usize,
    /// Defaults to steps of about `(t−s)/400`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nsteps: Option<usize>,
    #[serde(default = "euler")]
    pub scheme: SchemeName,
}

fn euler() -> SchemeName {
    SchemeName::Euler
}

impl SimSection {
    pub fn build(&self, span: f64, seed: u64) -> Result<SimConfig, KkError> {
        if self.npaths == 0 {
            return Err(KkError::validation("sim.npaths", "must be at least 1"));
        }
        if self.nsteps == Some(0) {
            return Err(KkError::validation("sim.nsteps", "must be at least 1"));
        }
        let scheme = match self.scheme {
            SchemeName::Euler => Scheme::Euler,
            SchemeName::ExactLinearSubstep => Scheme::ExactLinearSubstep,
        };
        Ok(SimConfig { nsteps: self.nsteps.unwrap_or_else(|| SimConfig::default_steps(span)), npaths: self.npaths, seed, scheme })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_times: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_refinements: Option<usize>,
}

impl QuadSection {
    pub fn build(&self) -> Result<QuadratureSpec, KkError> {
        let d = QuadratureSpec::default();
        let q = QuadratureSpec {
            time_nodes: self.time_nodes.unwrap_or(d.time_nodes),
            time_power: self.time_power.or(d.time_power),
            half_width: self.half_width.unwrap_or(d.half_width),
            space_nodes: self.space_nodes.unwrap_or(d.space_nodes),
            master_times: self.master_times.unwrap_or(d.master_times),
            master_nodes: self.master_nodes.unwrap_or(d.master_nodes),
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            max_refinements: self.max_refinements.unwrap_or(d.max_refinements),
        };
        q.validate().map_err(|e| KkError::validation("quadrature", e.to_string()))?;
        Ok(q)
    }
}

/// One transition query `(s, x; t, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    #[serde(default)]
    pub s: f64,
    pub x: Vec<f64>,
    pub t: f64,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum FlowName {
    Tilde,
    Identity,
    Mollified { eps: f64 },
}

/// Grid of the bound audit: every start point and span is combined with
/// every offset `o`, giving `y = θ̃ + T_{t−s} o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default)]
    pub s: f64,
    pub starts: Vec<Vec<f64>>,
    pub spans: Vec<f64>,
    pub offsets: Vec<Vec<f64>>,
    #[serde(default = "tilde")]
    pub flow: FlowName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nsigma: Option<f64>,
}

fn tilde() -> FlowName {
    FlowName::Tilde
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    #[serde(default)]
    pub s: f64,
    pub x: Vec<f64>,
    /// Defaults to `2^{-1}, …, 2^{-6}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub queries: Vec<Query>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kde: Option<KdeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<RatesSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumptions: Option<AssumptionsSection>,
}

impl ExperimentConfig {
    /// Parses a config, or the config echo inside a manifest.
    pub fn from_json(text: &str) -> Result<Self, KkError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| KkError::validation("config", e.to_string()))?;
        let inner = match value.get("config") {
            Some(c) if value.get("version").is_some() => c.clone(),
            _ => value,
        };
        serde_json::from_value(inner).map_err(|e| KkError::validation("config", e.to_string()))
    }

    pub fn require_seed(&self) -> Result<u64, KkError> {
        self.seed.ok_or_else(|| KkError::validation("seed", "required for stochastic tasks"))
    }

    pub fn sim(&self) -> Result<&SimSection, KkError> {
        self.sim.as_ref().ok_or_else(|| KkError::validation("sim", "missing section"))
    }

    pub fn quad(&self) -> Result<QuadratureSpec, KkError> {
        self.quadrature.clone().unwrap_or_default().build()
    }
}

/// Checks and converts a stacked point of length `2d`.
pub fn point(field: &str, v: &[f64], d: usize) -> Result<PhasePoint, KkError> {
    if v.len() != 2 * d {
        return Err(KkError::validation(field, format!("needs {} entries, got {}", 2 * d, v.len())));
    }
    if v.iter().any(|a| !a.is_finite()) {
        return Err(KkError::validation(field, "entries must be finite"));
    }
    Ok(PhasePoint::from_slice(v))
}

/// Checks a query against the model dimension.
pub fn query(i: usize, q: &Query, d: usize) -> Result<(PhasePoint, PhasePoint), KkError> {
    let x = point(&format!("queries[{i}].x"), &q.x, d)?;
    let y = point(&format!("queries[{i}].y"), &q.y, d)?;
    if !(q.t > q.s) || !q.t.is_finite() || !q.s.is_finite() {
        return Err(KkError::validation(format!("queries[{i}].t"), "must exceed s"));
    }
    Ok((x, y))
}
