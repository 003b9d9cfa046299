//! Deterministic flows of the drift, the two-scale mollified flow and
//! flow-equivalence diagnostics.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::coefficients::{mollify_drift, tilde_drift, Model, Mollifier};
use crate::error::{domain, Result};
use crate::geometry::{PhasePoint, ScaleParams};
use crate::ode::{integrate, OdeOptions, Trajectory};

/// Solution of `θ' = F(r, θ)` started at `(s, x)`, with cubic Hermite dense
/// output between the accepted nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub s: f64,
    pub x: PhasePoint,
    traj: Trajectory,
}

impl FlowTrajectory {
    pub fn end_time(&self) -> f64 {
        self.traj.t_end()
    }

    pub fn end(&self) -> PhasePoint {
        PhasePoint::from_slice(self.traj.last())
    }

    /// Dense-output evaluation; reproduces node values exactly.
    pub fn at(&self, t: f64) -> PhasePoint {
        PhasePoint::from_slice(&self.traj.eval(t))
    }

    pub fn len(&self) -> usize {
        self.traj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traj.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, PhasePoint)> + '_ {
        (0..self.traj.len()).map(move |i| (self.traj.times[i], PhasePoint::from_slice(self.traj.state(i))))
    }

    pub fn interpolation_order(&self) -> usize {
        3
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }
}

fn check_point<M: Model + ?Sized>(model: &M, x: &PhasePoint) -> Result<()> {
    if x.dim() != model.dim() {
        return Err(domain(format!("point has dimension {} but model has d={}", x.dim(), model.dim())));
    }
    x.check_finite()
}

/// `θ_{t,s}(x)` for `t` on either side of `s`.
pub fn integrate_flow<M: Model + ?Sized>(model: &M, s: f64, t: f64, x: &PhasePoint) -> Result<FlowTrajectory> {
    integrate_flow_with(model, s, t, x, &[], &OdeOptions::default())
}

pub fn integrate_flow_with<M: Model + ?Sized>(model: &M, s: f64, t: f64, x: &PhasePoint, stops: &[f64], opts: &OdeOptions) -> Result<FlowTrajectory> {
    check_point(model, x)?;
    let traj = integrate(|r, z, out| model.drift(r, z, out), s, &x.to_vec(), t, stops, opts)?;
    Ok(FlowTrajectory { s, x: x.clone(), traj })
}

/// End point of the flow on stacked slices.
pub fn flow_point<M: Model + ?Sized>(model: &M, s: f64, t: f64, x: &[f64], opts: &OdeOptions) -> Result<Vec<f64>> {
    let traj = integrate(|r, z, out| model.drift(r, z, out), s, x, t, &[], opts)?;
    Ok(traj.last().to_vec())
}

/// Flow `θ̃_{t,s}(x)` of the two-scale mollified drift anchored at `s`.
pub fn tilde_flow<M: Model + ?Sized>(model: &M, s: f64, t: f64, x: &PhasePoint) -> Result<FlowTrajectory> {
    tilde_flow_with(model, s, t, x, None, &OdeOptions::default())
}

pub fn tilde_flow_with<M: Model + ?Sized>(
    model: &M,
    s: f64,
    t: f64,
    x: &PhasePoint,
    rule: Option<Arc<Mollifier>>,
    opts: &OdeOptions,
) -> Result<FlowTrajectory> {
    if t < s {
        return Err(domain(format!("tilde flow needs t >= s, got s={s}, t={t}")));
    }
    let mut drift = tilde_drift(model, s)?;
    if let Some(r) = rule {
        drift = drift.with_rule(r);
    }
    integrate_flow_with(&drift, s, t, x, &[], opts)
}

/// `|T_{t-s}^{-1}(θ^{(ε)}_{t,s}(x) - θ̃_{t,s}(x))|` where `θ^{(ε)}` is the flow of
/// the drift mollified at scale `ε`.
pub fn flow_gap<M: Model + ?Sized>(model: &M, s: f64, t: f64, x: &PhasePoint, eps: f64) -> Result<f64> {
    flow_gap_with(model, s, t, x, eps, None, &OdeOptions::default())
}

pub fn flow_gap_with<M: Model + ?Sized>(
    model: &M,
    s: f64,
    t: f64,
    x: &PhasePoint,
    eps: f64,
    rule: Option<Arc<Mollifier>>,
    opts: &OdeOptions,
) -> Result<f64> {
    if !(t > s) {
        return Err(domain(format!("flow gap needs s < t, got s={s}, t={t}")));
    }
    if eps > (t - s).powf(1.5) * (1.0 + 1e-12) {
        return Err(domain(format!("epsilon {eps} exceeds (t-s)^(3/2)")));
    }
    let rule = match rule {
        Some(r) => r,
        None => Arc::new(Mollifier::new(model.dim(), 8)?),
    };
    let moll = mollify_drift(model, eps, false)?.with_rule(rule.clone());
    let a = integrate_flow_with(&moll, s, t, x, &[], opts)?.end();
    let b = tilde_flow_with(model, s, t, x, Some(rule), opts)?.end();
    let sp = ScaleParams::new(t - s, model.dim())?;
    Ok(sp.inverse_norm(&a.sub(&b).to_vec()))
}

/// The three members of the flow equivalence
/// `κ3^{-1}(A - 1) ≤ B ≤ κ3(A + 1)` with `A = |T^{-1}_{t-s}(x - θ_{r,t}(y))|`
/// and `B = |T^{-1}_{t-s}(θ_{t,r}(x) - y)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowEquivalence {
    /// `A`
    pub lhs: f64,
    /// `B`
    pub mid: f64,
    /// `A - 1`
    pub lower: f64,
    /// `A + 1`
    pub upper: f64,
}

impl FlowEquivalence {
    /// Smallest `κ3 ≥ 1` compatible with this sample.
    pub fn kappa3(&self) -> f64 {
        let mut k = 1.0f64.max(self.mid / self.upper);
        if self.lower > 0.0 {
            k = k.max(if self.mid > 0.0 { self.lower / self.mid } else { f64::INFINITY });
        }
        k
    }
}

pub fn flow_equivalence_ratio<M: Model + ?Sized>(model: &M, s: f64, r: f64, t: f64, x: &PhasePoint, y: &PhasePoint) -> Result<FlowEquivalence> {
    if !(s <= r && r < t) {
        return Err(domain(format!("need s <= r < t, got s={s}, r={r}, t={t}")));
    }
    check_point(model, y)?;
    let sp = ScaleParams::new(t - s, model.dim())?;
    let back = integrate_flow(model, t, r, y)?.end();
    let fwd = integrate_flow(model, r, t, x)?.end();
    let lhs = sp.inverse_norm(&x.sub(&back).to_vec());
    let mid = sp.inverse_norm(&fwd.sub(y).to_vec());
    Ok(FlowEquivalence { lhs, mid, lower: lhs - 1.0, upper: lhs + 1.0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GronwallCheck {
    /// Numerical solution of `f' = c1 f^α + c2 f` at `t`.
    pub value: f64,
    /// `e^{c2 t} f(0) + (c1 e^{c2 t} (1-α) t)^{1/(1-α)}`.
    pub bound: f64,
    /// `e^{c2 t} (f(0)^{1-α} + c1 (1-α) t)^{1/(1-α)}`, which also covers
    /// `f(0) > 0`.
    pub sharp_bound: f64,
}

pub fn gronwall_check(c1: f64, c2: f64, alpha: f64, f0: f64, t: f64) -> Result<GronwallCheck> {
    if !(alpha > 0.0 && alpha < 1.0) || c1 < 0.0 || c2 < 0.0 || f0 < 0.0 || t < 0.0 {
        return Err(domain("need alpha in (0,1) and nonnegative c1, c2, f(0), t"));
    }
    let traj = integrate(|_, f, out| out[0] = c1 * f[0].max(0.0).powf(alpha) + c2 * f[0], 0.0, &[f0], t, &[], &OdeOptions::default())?;
    let e = (c2 * t).exp();
    let q = 1.0 / (1.0 - alpha);
    let bound = e * f0 + (c1 * e * (1.0 - alpha) * t).powf(q);
    let sharp_bound = e * (f0.powf(1.0 - alpha) + c1 * (1.0 - alpha) * t).powf(q);
    Ok(GronwallCheck { value: traj.last()[0], bound, sharp_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CustomModel, Holder, Kolmogorov};

    #[test]
    fn kolmogorov_flow_closed_form() {
        let k = Kolmogorov::new(1);
        let f = integrate_flow(&k, 0.0, 1.0, &PhasePoint::scalar(1.0, 0.0)).unwrap();
        let e = f.end();
        assert!((e.x1[0] - 1.0).abs() < 1e-12 && (e.x2[0] - 1.0).abs() < 1e-12);
        let b = integrate_flow(&k, 1.0, 0.0, &PhasePoint::scalar(1.0, 1.0)).unwrap().end();
        assert!((b.x1[0] - 1.0).abs() < 1e-12 && b.x2[0].abs() < 1e-12);
        let z = integrate_flow(&k, 0.3, 0.3, &PhasePoint::scalar(0.2, -0.1)).unwrap();
        assert_eq!(z.end(), PhasePoint::scalar(0.2, -0.1));
        assert_eq!(z.len(), 1);
    }

    #[test]
    fn dense_output_hits_nodes() {
        let h = Holder::new(1, 0.5);
        let f = integrate_flow(&h, 0.0, 1.0, &PhasePoint::scalar(0.3, -0.2)).unwrap();
        let (t0, p0) = f.samples().next().unwrap();
        assert_eq!((t0, p0), (0.0, PhasePoint::scalar(0.3, -0.2)));
        for (t, p) in f.samples() {
            assert_eq!(f.at(t), p);
        }
    }

    #[test]
    fn tilde_flow_matches_plain_flow_for_linear_drift() {
        let k = Kolmogorov::new(1);
        let x = PhasePoint::scalar(0.4, 0.1);
        let a = integrate_flow(&k, 0.0, 0.7, &x).unwrap().end();
        let b = tilde_flow(&k, 0.0, 0.7, &x).unwrap().end();
        assert!(a.sub(&b).norm() < 1e-10);
        assert_eq!(tilde_flow(&k, 0.5, 0.5, &x).unwrap().end(), x);
        assert!(flow_gap(&k, 0.0, 0.5, &x, 0.5f64.powf(1.5)).unwrap() < 1e-9);
    }

    #[test]
    fn constant_drift_has_zero_gap() {
        let m = CustomModel::new(1).with_f1(|_, _, o| o[0] = 0.5).with_f2(|_, _, o| o[0] = -1.0);
        let g = flow_gap(&m, 0.0, 0.25, &PhasePoint::scalar(0.1, 0.2), 0.1).unwrap();
        assert!(g < 1e-12, "{g}");
    }

    #[test]
    fn equivalence_examples() {
        let k = Kolmogorov::new(1);
        let e = flow_equivalence_ratio(&k, 0.0, 0.0, 1.0, &PhasePoint::zeros(1), &PhasePoint::scalar(1.0, 1.0)).unwrap();
        assert!((e.mid - 2f64.sqrt()).abs() < 1e-10);
        let y = PhasePoint::scalar(0.5, 0.2);
        let x = integrate_flow(&k, 1.0, 0.25, &y).unwrap().end();
        let e = flow_equivalence_ratio(&k, 0.0, 0.25, 1.0, &x, &y).unwrap();
        assert!(e.lhs < 1e-10 && e.mid < 1e-10);
        assert!(e.kappa3() >= 1.0);
    }

    #[test]
    fn gronwall_bounds() {
        for t in [0.5, 1.0] {
            let g = gronwall_check(1.0, 0.5, 0.5, 1e-12, t).unwrap();
            assert!(g.value <= g.bound && g.value <= g.sharp_bound, "{g:?}");
            let g = gronwall_check(1.0, 0.5, 0.5, 0.2, t).unwrap();
            assert!(g.value <= g.sharp_bound * (1.0 + 1e-9), "{g:?}");
        }
        // the additive form misses the cross term once f(0) > 0:
        // with c2 = 0 the exact solution is (√f0 + t/2)²
        let g = gronwall_check(1.0, 0.0, 0.5, 0.2, 1.0).unwrap();
        let exact = (0.2f64.sqrt() + 0.5).powi(2);
        assert!((g.value - exact).abs() < 1e-9 && (g.sharp_bound - exact).abs() < 1e-12);
        assert!(g.value > g.bound);
    }
}
