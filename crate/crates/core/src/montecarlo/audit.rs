//! Empirical checks of two-sided Gaussian bounds and derivative decay rates.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use super::kde::{kde_difference, kde_samples, DensityEstimate, KdeOptions};
use super::sim::{simulate_with, SimConfig};
use crate::coefficients::{mollify_drift, Model};
use crate::error::{domain, numeric, Result};
use crate::exec::{Executor, Serial};
use crate::flow::{integrate_flow, tilde_flow};
use crate::geometry::{PhasePoint, ScaleParams};

/// Centre of the comparison kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowChoice {
    /// `θ̃_{t,s}(x)` of the two-scale mollified drift.
    Tilde,
    /// Flow of the drift mollified at a fixed scale.
    Mollified { eps: f64 },
    /// The start point itself; ignores the drift.
    Identity,
}

pub fn flow_centre<M: Model + ?Sized>(model: &M, flow: FlowChoice, s: f64, x: &PhasePoint, t: f64) -> Result<PhasePoint> {
    match flow {
        FlowChoice::Tilde => Ok(tilde_flow(model, s, t, x)?.end()),
        FlowChoice::Mollified { eps } => Ok(integrate_flow(&mollify_drift(model, eps, false)?, s, t, x)?.end()),
        FlowChoice::Identity => Ok(x.clone()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditPoint {
    pub s: f64,
    pub x: PhasePoint,
    pub t: f64,
    pub y: PhasePoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub flow: FlowChoice,
    /// Bandwidth factor; `None` uses the default rule for the path count.
    pub h: Option<f64>,
    pub replicates: usize,
    /// Largest admissible `C0`.
    pub c_cap: f64,
    /// Largest `λ0` on the search ladder `2^{k/4}`.
    pub lambda_cap: f64,
    /// Deviations beyond this many standard errors are significant.
    pub nsigma: f64,
    /// Queries with fewer effective samples are flagged and skipped.
    pub min_effective: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { flow: FlowChoice::Tilde, h: None, replicates: 100, c_cap: 20.0, lambda_cap: 16.0, nsigma: 4.0, min_effective: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub estimate: DensityEstimate,
    /// `|T^{-1}_{t-s}(centre − y)|`
    pub distance: f64,
    /// `p̂ / g_{λ0}`
    pub upper_ratio: f64,
    /// `g_{1/λ0} / p̂`
    pub lower_ratio: f64,
    pub flagged: bool,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundAudit {
    pub c0: f64,
    pub lambda0: f64,
    /// Whether `C0` hit the cap (then violations may be reported).
    pub capped: bool,
    pub violations: usize,
    pub flagged: usize,
    pub rows: Vec<AuditRow>,
}

pub fn bound_audit<M: Model + ?Sized>(model: &M, grid: &[AuditPoint], sim: &SimConfig, opts: &AuditOptions) -> Result<BoundAudit> {
    bound_audit_with(model, grid, sim, opts, &Serial)
}

pub fn bound_audit_with<M: Model + ?Sized>(
    model: &M,
    grid: &[AuditPoint],
    sim: &SimConfig,
    opts: &AuditOptions,
    exec: &dyn Executor,
) -> Result<BoundAudit> {
    if grid.is_empty() {
        return Err(domain("bound audit needs at least one grid point"));
    }
    if !(opts.c_cap >= 1.0 && opts.lambda_cap >= 1.0 && opts.nsigma >= 0.0) {
        return Err(domain("audit caps must be at least 1 and nsigma non-negative"));
    }
    sim.validate()?;
    let d = model.dim();
    // one simulation per distinct (s, x, t)
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, p) in grid.iter().enumerate() {
        if !(p.t > p.s) {
            return Err(domain(format!("grid point {i} needs s < t")));
        }
        let key = |q: &AuditPoint| (q.s.to_bits(), q.t.to_bits(), q.x.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        match groups.iter_mut().find(|(j, _)| key(&grid[*j]) == key(p)) {
            Some((_, members)) => members.push(i),
            None => groups.push((i, alloc::vec![i])),
        }
    }
    let mut estimates: Vec<Option<(DensityEstimate, f64, f64)>> = alloc::vec![None; grid.len()];
    for (g, (lead, members)) in groups.iter().enumerate() {
        let p = &grid[*lead];
        let cfg = SimConfig { seed: sim.seed.wrapping_add((g as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)), ..*sim };
        let batch = simulate_with(model, p.s, &p.x, p.t, &cfg, exec)?;
        if batch.is_empty() {
            return Err(numeric(format!("all paths from grid point {lead} diverged")));
        }
        let kopts = KdeOptions { h: opts.h.unwrap_or_else(|| super::kde::default_bandwidth(batch.len())), replicates: opts.replicates, seed: cfg.seed };
        let ys: Vec<PhasePoint> = members.iter().map(|&i| grid[i].y.clone()).collect();
        let est = kde_samples(&batch.samples, d, batch.span, &kopts, &ys)?;
        let centre = flow_centre(model, opts.flow, p.s, &p.x, p.t)?;
        for (&i, e) in members.iter().zip(est) {
            let span = grid[i].t - grid[i].s;
            let gap = centre.sub(&grid[i].y);
            let dist = ScaleParams::new(span, d)?.inverse_norm(&gap.to_vec());
            estimates[i] = Some((e, dist, span));
        }
    }
    let g = |lambda: f64, span: f64, dist: f64| -> f64 { span.powi(-2 * d as i32) * (-(dist * dist) / (2.0 * lambda)).exp() };
    let flagged: Vec<bool> = estimates.iter().map(|e| e.as_ref().unwrap().0.effective_samples < opts.min_effective).collect();
    // C(λ): smallest C with C^{-1} g_{1/λ} ≤ p̂ ± nσ ≤ C g_λ on unflagged points
    let need = |lambda: f64| -> f64 {
        let mut c: f64 = 1.0;
        for (e, f) in estimates.iter().zip(&flagged) {
            let (est, dist, span) = e.as_ref().unwrap();
            if *f {
                continue;
            }
            let hi = (est.value - opts.nsigma * est.stderr).max(0.0);
            let lo = est.value + opts.nsigma * est.stderr;
            c = c.max(hi / g(lambda, *span, *dist));
            let lower = g(1.0 / lambda, *span, *dist);
            c = c.max(if lo > 0.0 { lower / lo } else { f64::INFINITY });
        }
        c
    };
    let mut best = (f64::INFINITY, 1.0);
    let mut k = 0;
    loop {
        let lambda = 2f64.powf(k as f64 / 4.0);
        if lambda > opts.lambda_cap * (1.0 + 1e-12) {
            break;
        }
        let c = need(lambda);
        if c < best.0 {
            best = (c, lambda);
        }
        k += 1;
    }
    let (c_fit, lambda0) = best;
    let capped = !(c_fit <= opts.c_cap);
    let c0 = if capped { opts.c_cap } else { c_fit };
    let mut rows = Vec::with_capacity(grid.len());
    let mut violations = 0;
    for (e, &f) in estimates.into_iter().zip(&flagged) {
        let (est, dist, span) = e.unwrap();
        let up = g(lambda0, span, dist);
        let down = g(1.0 / lambda0, span, dist);
        let violation = !f
            && (est.value - opts.nsigma * est.stderr > c0 * up * (1.0 + 1e-12)
                || est.value + opts.nsigma * est.stderr < down / c0 * (1.0 - 1e-12));
        violations += violation as usize;
        rows.push(AuditRow {
            estimate: est,
            distance: dist,
            upper_ratio: est.value / up,
            lower_ratio: if est.value > 0.0 { down / est.value } else { f64::INFINITY },
            flagged: f,
            violation,
        });
    }
    Ok(BoundAudit { c0, lambda0, capped, violations, flagged: flagged.iter().filter(|f| **f).count(), rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares line through `(ln span, ln value)`.
pub fn rate_fit(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 4 {
        return Err(domain(format!("rate fit needs at least 4 pairs, got {}", pairs.len())));
    }
    if pairs.iter().any(|(t, v)| !(*t > 0.0) || !(*v > 0.0) || !t.is_finite() || !v.is_finite()) {
        return Err(domain("rate fit needs positive finite spans and values"));
    }
    let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    if hi / lo < 8.0 * (1.0 - 1e-12) {
        return Err(domain(format!("spans must cover 3 dyadic levels, got ratio {}", hi / lo)));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(numeric("degenerate spread in rate fit"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(RateFit { slope, intercept, r2 })
}

/// Derivative of the density in the start point along stacked component
/// `component`, by central differences over paired batches sharing their
/// random numbers. The step is `step·√(t−s)` for `x1` components and
/// `step·(t−s)^{3/2}` for `x2` components.
#[allow(clippy::too_many_arguments)]
pub fn mc_gradient<M: Model + ?Sized>(
    model: &M,
    s: f64,
    x: &PhasePoint,
    t: f64,
    ys: &[PhasePoint],
    component: usize,
    step: f64,
    sim: &SimConfig,
    kde: &KdeOptions,
    exec: &dyn Executor,
) -> Result<Vec<DensityEstimate>> {
    let d = model.dim();
    if component >= 2 * d {
        return Err(domain(format!("component {component} out of range for d={d}")));
    }
    if !(step > 0.0) || !(t > s) {
        return Err(domain("gradient needs a positive step and s < t"));
    }
    let span = t - s;
    let delta = if component < d { step * span.sqrt() } else { step * span * span.sqrt() };
    let mut up = x.to_vec();
    let mut dn = x.to_vec();
    up[component] += delta;
    dn[component] -= delta;
    let plus = simulate_with(model, s, &PhasePoint::from_slice(&up), t, sim, exec)?;
    let minus = simulate_with(model, s, &PhasePoint::from_slice(&dn), t, sim, exec)?;
    kde_difference(&plus, &minus, delta, kde, ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{Holder, Kolmogorov};
    use crate::montecarlo::sim::Scheme;

    #[test]
    fn exact_rates() {
        let pairs: Vec<(f64, f64)> = (1..=6).map(|k| {
            let t = 0.5f64.powi(k);
            (t, 3.0 * t.powf(-2.5))
        }).collect();
        let f = rate_fit(&pairs).unwrap();
        assert!((f.slope + 2.5).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-10 && (f.r2 - 1.0).abs() < 1e-12);
        assert!(rate_fit(&pairs[..3]).is_err());
        assert!(rate_fit(&[(1.0, 1.0), (0.9, 1.0), (0.8, 1.0), (0.7, 1.0)]).is_err());
        assert!(rate_fit(&[(1.0, 1.0), (0.5, -1.0), (0.25, 1.0), (0.125, 1.0)]).is_err());
    }

    fn grid_around<M: Model>(m: &M, xs: &[f64], span: f64, offsets: &[f64]) -> Vec<AuditPoint> {
        let mut g = Vec::new();
        for &x1 in xs {
            let x = PhasePoint::scalar(x1, 0.0);
            let c = tilde_flow(m, 0.0, span, &x).unwrap().end();
            for &o in offsets {
                let y = PhasePoint::scalar(c.x1[0] + o * span.sqrt(), c.x2[0] + 0.5 * o * span.powf(1.5));
                g.push(AuditPoint { s: 0.0, x: x.clone(), t: span, y });
            }
        }
        g
    }

    #[test]
    fn kolmogorov_has_no_violations() {
        let m = Kolmogorov::new(1);
        let grid = grid_around(&m, &[-0.5, 0.5], 0.5, &[-1.5, 0.0, 1.5]);
        let sim = SimConfig { nsteps: 1, npaths: 40_000, seed: 1, scheme: Scheme::ExactLinearSubstep };
        let a = bound_audit(&m, &grid, &sim, &AuditOptions::default()).unwrap();
        assert_eq!(a.violations, 0);
        assert!(!a.capped && a.c0.is_finite() && a.lambda0 >= 1.0);
        assert!(a.rows.iter().all(|r| !r.flagged));
        // enlarging the grid cannot lower C0
        let mut more = grid.clone();
        more.extend(grid_around(&m, &[0.0], 0.5, &[2.5]));
        let b = bound_audit(&m, &more, &sim, &AuditOptions::default()).unwrap();
        assert!(b.c0 >= a.c0);
    }

    #[test]
    fn ignoring_the_drift_is_caught() {
        let m = Holder::new(1, 0.5);
        let span = 0.125;
        let grid = grid_around(&m, &[4.0], span, &[0.0, 1.0]);
        let sim = SimConfig { nsteps: 50, npaths: 20_000, seed: 3, scheme: Scheme::Euler };
        let good = bound_audit(&m, &grid, &sim, &AuditOptions::default()).unwrap();
        assert_eq!(good.violations, 0);
        let bad = bound_audit(&m, &grid, &sim, &AuditOptions { flow: FlowChoice::Identity, ..AuditOptions::default() }).unwrap();
        assert!(bad.capped && bad.violations >= 1);
    }

    #[test]
    fn paired_gradient_matches_closed_form() {
        let m = Kolmogorov::new(1);
        let x = PhasePoint::scalar(0.0, 0.0);
        let y = PhasePoint::scalar(0.5, 0.0);
        let sim = SimConfig { nsteps: 1, npaths: 100_000, seed: 8, scheme: Scheme::ExactLinearSubstep };
        let kopts = KdeOptions { h: 0.1, replicates: 50, seed: 1 };
        let g = mc_gradient(&m, 0.0, &x, 1.0, core::slice::from_ref(&y), 0, 0.05, &sim, &kopts, &Serial).unwrap()[0];
        let exact = crate::frozen::frozen_density(&m, 0.0, &x, 0.0, &x, 1.0, &y, crate::frozen::Deriv::X1).unwrap()[0];
        assert!((g.value - exact).abs() < 4.0 * g.stderr + 0.05 * exact.abs(), "{} {} {exact}", g.value, g.stderr);
        assert!(mc_gradient(&m, 0.0, &x, 1.0, &[y], 2, 0.05, &sim, &kopts, &Serial).is_err());
    }
}
