//! Path simulation, kernel density estimates and empirical audits.

mod audit;
mod kde;
mod rng;
mod sim;

pub use audit::{bound_audit, bound_audit_with, flow_centre, mc_gradient, rate_fit, AuditOptions, AuditPoint, AuditRow, BoundAudit, FlowChoice, RateFit};
pub use kde::{default_bandwidth, kde, kde_difference, kde_samples, DensityEstimate, KdeOptions, Provenance};
pub use rng::PathRng;
pub use sim::{simulate, simulate_with, SampleBatch, Scheme, SimConfig, CHUNK};
