//! Model coefficients `(F1, F2, σ)`, regularity metadata, mollification and
//! the empirical assumption audit.
//!
//! States are passed as stacked slices `(x1, x2)` of length `2d`; matrices
//! are row-major `d × d` slices.

mod audit;
mod builtin;
mod mollifier;

#[allow(unused_imports)]
use num_traits::Float;
use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{domain, Error, Result};
use crate::geometry::{Direction, PhasePoint, ScaleParams};

pub use audit::{audit_assumptions, AuditPlan, AuditReport};
pub use builtin::{DampedHamiltonian, Holder, Kolmogorov};
pub use mollifier::{mollify_drift, tilde_drift, Mollified, Mollifier, TildeDrift};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityBudget {
    pub gamma: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    /// Floor on the smallest singular value of `∇_{x1}F2`.
    pub c0: f64,
    pub horizon: f64,
}

impl RegularityBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(domain(format!("gamma must lie in (0,1], got {}", self.gamma)));
        }
        for (name, v) in [("kappa0", self.kappa0), ("kappa1", self.kappa1), ("kappa2", self.kappa2), ("c0", self.c0), ("horizon", self.horizon)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for RegularityBudget {
    fn default() -> Self {
        RegularityBudget { gamma: 1.0, kappa0: 1.0, kappa1: 1.0, kappa2: 1.0, c0: 1.0, horizon: 1.0 }
    }
}

/// Coefficients of `dX1 = F1 dt + σ dW`, `dX2 = F2 dt`.
pub trait Model: Send + Sync {
    fn dim(&self) -> usize;
    fn budget(&self) -> RegularityBudget;
    fn f1(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn f2(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn sigma(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// `∇_{x1}F2` as a row-major `d × d` matrix (row = component of F2).
    fn grad_x1_f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        fd_grad_x1_f2(self, t, x, out);
    }

    /// Stacked drift `(F1, F2)`.
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let (a, b) = out.split_at_mut(d);
        self.f1(t, x, a);
        self.f2(t, x, b);
    }

    /// Whether σ is constant, `F1` is constant and `F2` is affine in `x1`
    /// with a constant gradient (the parametrix kernel then vanishes).
    fn is_frozen_exact(&self) -> bool {
        false
    }
}

impl<M: Model + ?Sized> Model for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn budget(&self) -> RegularityBudget {
        (**self).budget()
    }
    fn f1(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).f1(t, x, out)
    }
    fn f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).f2(t, x, out)
    }
    fn sigma(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).sigma(t, x, out)
    }
    fn grad_x1_f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).grad_x1_f2(t, x, out)
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).drift(t, x, out)
    }
    fn is_frozen_exact(&self) -> bool {
        (**self).is_frozen_exact()
    }
}

impl<M: Model + ?Sized> Model for Box<M> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn budget(&self) -> RegularityBudget {
        (**self).budget()
    }
    fn f1(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).f1(t, x, out)
    }
    fn f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).f2(t, x, out)
    }
    fn sigma(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).sigma(t, x, out)
    }
    fn grad_x1_f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).grad_x1_f2(t, x, out)
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).drift(t, x, out)
    }
    fn is_frozen_exact(&self) -> bool {
        (**self).is_frozen_exact()
    }
}

/// Central differences in `x1` with step `1e-5 (1 + |x1|)`.
pub fn fd_grad_x1_f2<M: Model + ?Sized>(model: &M, t: f64, x: &[f64], out: &mut [f64]) {
    let d = model.dim();
    let x1n = x[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = 1e-5 * (1.0 + x1n);
    let mut xp = x.to_vec();
    let mut fp = alloc::vec![0.0; d];
    let mut fm = alloc::vec![0.0; d];
    for j in 0..d {
        xp[j] = x[j] + h;
        model.f2(t, &xp, &mut fp);
        xp[j] = x[j] - h;
        model.f2(t, &xp, &mut fm);
        xp[j] = x[j];
        for i in 0..d {
            out[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

type VecFn = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// A model assembled from closures; unspecified parts default to zero drift
/// and identity diffusion.
pub struct CustomModel {
    d: usize,
    budget: RegularityBudget,
    f1: Option<VecFn>,
    f2: Option<VecFn>,
    sigma: Option<VecFn>,
    grad: Option<VecFn>,
    frozen_exact: bool,
}

impl CustomModel {
    pub fn new(d: usize) -> Self {
        CustomModel { d, budget: RegularityBudget::default(), f1: None, f2: None, sigma: None, grad: None, frozen_exact: false }
    }

    pub fn with_f1(mut self, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.f1 = Some(Box::new(f));
        self
    }

    pub fn with_f2(mut self, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.f2 = Some(Box::new(f));
        self
    }

    pub fn with_sigma(mut self, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.sigma = Some(Box::new(f));
        self
    }

    pub fn with_grad_x1_f2(mut self, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.grad = Some(Box::new(f));
        self
    }

    pub fn with_budget(mut self, budget: RegularityBudget) -> Self {
        self.budget = budget;
        self
    }

    pub fn frozen_exact(mut self, yes: bool) -> Self {
        self.frozen_exact = yes;
        self
    }
}

impl Model for CustomModel {
    fn dim(&self) -> usize {
        self.d
    }
    fn budget(&self) -> RegularityBudget {
        self.budget
    }
    fn f1(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.f1 {
            Some(f) => f(t, x, out),
            None => out.fill(0.0),
        }
    }
    fn f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.f2 {
            Some(f) => f(t, x, out),
            None => out.fill(0.0),
        }
    }
    fn sigma(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.sigma {
            Some(f) => f(t, x, out),
            None => identity_into(self.d, out),
        }
    }
    fn grad_x1_f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.grad {
            Some(f) => f(t, x, out),
            None => fd_grad_x1_f2(self, t, x, out),
        }
    }
    fn is_frozen_exact(&self) -> bool {
        self.frozen_exact
    }
}

pub(crate) fn identity_into(d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..d {
        out[i * d + i] = 1.0;
    }
}

/// All four coefficient evaluations at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSample {
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub sigma: Vec<f64>,
    pub grad_x1_f2: Vec<f64>,
}

pub fn evaluate_model<M: Model + ?Sized>(model: &M, t: f64, x: &PhasePoint) -> Result<CoefficientSample> {
    let d = model.dim();
    if x.dim() != d {
        return Err(domain(format!("point has dimension {} but model has d={d}", x.dim())));
    }
    x.check_finite()?;
    let horizon = model.budget().horizon;
    if !(0.0..=horizon).contains(&t) {
        return Err(domain(format!("time {t} outside [0, {horizon}]")));
    }
    let z = x.to_vec();
    let mut s = CoefficientSample { f1: alloc::vec![0.0; d], f2: alloc::vec![0.0; d], sigma: alloc::vec![0.0; d * d], grad_x1_f2: alloc::vec![0.0; d * d] };
    model.f1(t, &z, &mut s.f1);
    model.f2(t, &z, &mut s.f2);
    model.sigma(t, &z, &mut s.sigma);
    model.grad_x1_f2(t, &z, &mut s.grad_x1_f2);
    for (name, v) in [("F1", &s.f1), ("F2", &s.f2), ("sigma", &s.sigma), ("grad_x1_F2", &s.grad_x1_f2)] {
        if !v.iter().all(|a| a.is_finite()) {
            return Err(Error::Model { t, x: z, what: format!("{name} is not finite") });
        }
    }
    Ok(s)
}

/// Intrinsic rescaling at `(λ, s)`:
/// `F^{λ,s}(t,x) = λ T_λ^{-1} F(s+λt, T_λ x)`, `σ^{λ,s}(t,x) = σ(s+λt, T_λ x)`.
pub struct Rescaled<M> {
    inner: M,
    lambda: f64,
    s: f64,
    sp: ScaleParams,
}

pub fn rescale_model<M: Model>(model: M, lambda: f64, s: f64) -> Result<Rescaled<M>> {
    let sp = ScaleParams::new(lambda, model.dim())?;
    Ok(Rescaled { inner: model, lambda, s, sp })
}

impl<M: Model> Rescaled<M> {
    fn lift(&self, x: &[f64]) -> Vec<f64> {
        let mut z = x.to_vec();
        self.sp.apply_slice(&mut z, Direction::Forward);
        z
    }
}

impl<M: Model> Model for Rescaled<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn budget(&self) -> RegularityBudget {
        let mut b = self.inner.budget();
        b.horizon = ((b.horizon - self.s) / self.lambda).max(0.0);
        b
    }
    fn f1(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.inner.f1(self.s + self.lambda * t, &self.lift(x), out);
        let (a, _) = self.sp.factors(Direction::Inverse);
        out.iter_mut().for_each(|v| *v *= self.lambda * a);
    }
    fn f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.inner.f2(self.s + self.lambda * t, &self.lift(x), out);
        let (_, b) = self.sp.factors(Direction::Inverse);
        out.iter_mut().for_each(|v| *v *= self.lambda * b);
    }
    fn sigma(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.inner.sigma(self.s + self.lambda * t, &self.lift(x), out)
    }
    fn grad_x1_f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        // chain rule: λ λ^{-3/2} (∇_{x1}F2) λ^{1/2}
        self.inner.grad_x1_f2(self.s + self.lambda * t, &self.lift(x), out);
    }
    fn is_frozen_exact(&self) -> bool {
        self.inner.is_frozen_exact()
    }
}

/// Registry of built-in model identifiers.
pub fn builtin_names() -> &'static [&'static str] {
    &["kolmogorov", "holder", "damped-hamiltonian"]
}

/// Builds a built-in model from its identifier and numeric parameters.
pub fn builtin(name: &str, d: usize, params: &[(String, f64)]) -> Result<Box<dyn Model>> {
    let get = |key: &str, default: f64| params.iter().find(|(k, _)| k == key).map(|(_, v)| *v).unwrap_or(default);
    let known: &[&str] = match name {
        "kolmogorov" => &["sigma"],
        "holder" => &["gamma", "a", "b", "c"],
        "damped-hamiltonian" => &["damping", "stiffness", "anharmonic"],
        _ => return Err(domain(format!("unknown model `{name}`"))),
    };
    if let Some((k, _)) = params.iter().find(|(k, _)| !known.contains(&k.as_str())) {
        return Err(domain(format!("unknown parameter `{k}` for model `{name}`")));
    }
    if d == 0 {
        return Err(domain("dimension d must be at least 1"));
    }
    Ok(match name {
        "kolmogorov" => Box::new(Kolmogorov::with_sigma(d, get("sigma", 1.0))),
        "holder" => {
            let h = Holder { d, gamma: get("gamma", 0.5), a: get("a", 0.5), b: get("b", 0.5), c: get("c", 0.1) };
            h.budget().validate()?;
            Box::new(h)
        }
        _ => Box::new(DampedHamiltonian { d, damping: get("damping", 1.0), stiffness: get("stiffness", 1.0), anharmonic: get("anharmonic", 0.5) }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_evaluation() {
        let m = Kolmogorov::new(1);
        for (t, x) in [(0.0, PhasePoint::scalar(0.3, -2.0)), (0.7, PhasePoint::scalar(-1.5, 4.0))] {
            let s = evaluate_model(&m, t, &x).unwrap();
            assert_eq!(s.f1, [0.0]);
            assert_eq!(s.f2, x.x1);
            assert_eq!(s.sigma, [1.0]);
            assert_eq!(s.grad_x1_f2, [1.0]);
        }
    }

    #[test]
    fn zero_model_has_zero_drift() {
        let m = CustomModel::new(2);
        let s = evaluate_model(&m, 0.5, &PhasePoint::new(alloc::vec![1.0, 2.0], alloc::vec![3.0, 4.0]).unwrap()).unwrap();
        assert!(s.f1.iter().chain(&s.f2).all(|v| *v == 0.0));
        assert_eq!(s.sigma, [1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn holder_formula() {
        let m = Holder { d: 1, gamma: 0.5, a: 0.5, b: 0.5, c: 0.1 };
        let x = PhasePoint::scalar(1.0, 0.0);
        let s = evaluate_model(&m, 0.0, &x).unwrap();
        assert!((s.f2[0] - 1.0).abs() < 1e-15);
        assert!((s.f1[0] - 1.0).abs() < 1e-15);
        let x = PhasePoint::scalar(0.25, -0.064);
        let s = evaluate_model(&m, 0.0, &x).unwrap();
        let oracle_f1 = 0.5 * 0.5 + 0.5 * 0.25;
        let oracle_f2 = 0.25 + 0.1 * libm::pow(0.064, 0.5);
        let norm_d = 0.25 + libm::cbrt(0.064);
        let oracle_sigma = 1.0 + 0.25 * libm::sin(libm::pow(norm_d, 0.5));
        assert!((s.f1[0] - oracle_f1).abs() < 1e-15);
        assert!((s.f2[0] - oracle_f2).abs() < 1e-15);
        assert!((s.sigma[0] - oracle_sigma).abs() < 1e-15);
    }

    #[test]
    fn non_finite_coefficient_is_reported() {
        let m = CustomModel::new(1).with_f1(|_, _, out| out[0] = f64::NAN);
        match evaluate_model(&m, 0.0, &PhasePoint::scalar(0.0, 0.0)) {
            Err(Error::Model { what, .. }) => assert!(what.contains("F1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn finite_difference_gradient() {
        let m = CustomModel::new(1).with_f2(|_, x, out| out[0] = 2.0 * x[0] + libm::sin(x[0]));
        let mut g = [0.0];
        m.grad_x1_f2(0.0, &[0.4, 0.0], &mut g);
        assert!((g[0] - (2.0 + libm::cos(0.4))).abs() < 1e-9);
    }

    #[test]
    fn rescaling_identity_and_kolmogorov_invariance() {
        let k = Kolmogorov::new(1);
        let r = rescale_model(&k, 1.0, 0.0).unwrap();
        let r4 = rescale_model(&k, 4.0, 0.3).unwrap();
        for &(a, b) in &[(0.1, 0.2), (-1.3, 2.0), (3.0, -0.5)] {
            let x = [a, b];
            let (mut u, mut v) = ([0.0], [0.0]);
            for m in [&r as &dyn Model, &r4] {
                m.f1(0.2, &x, &mut u);
                m.f2(0.2, &x, &mut v);
                assert!(u[0].abs() < 1e-15 && (v[0] - a).abs() < 1e-14);
            }
        }
        let one = CustomModel::new(1).with_f1(|_, _, out| out[0] = 1.0);
        let r = rescale_model(one, 4.0, 0.0).unwrap();
        let mut u = [0.0];
        r.f1(0.1, &[0.3, 0.3], &mut u);
        assert!((u[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn builtin_registry() {
        assert!(builtin("holder", 1, &[("gamma".into(), 0.5)]).is_ok());
        assert!(builtin("nope", 1, &[]).is_err());
        assert!(builtin("holder", 1, &[("gamma".into(), 1.5)]).is_err());
        assert!(builtin("kolmogorov", 1, &[("bogus".into(), 1.0)]).is_err());
    }
}
