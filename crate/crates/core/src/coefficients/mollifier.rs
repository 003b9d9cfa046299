#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::{Model, RegularityBudget};
use crate::error::{domain, Result};
use crate::quadrature::{composite_rule, gauss_legendre};

/// Radial bump `ρ(z) = c exp(-1/(1-|z|²))` on the unit ball of `R^{2d}`,
/// discretized by a tensor Gauss–Legendre rule on the enclosing cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Mollifier {
    pub d: usize,
    /// Stacked offsets of length `2d` per node.
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Normalizing constant `c` of the continuous profile.
    pub normalization: f64,
    raw_mass: f64,
}

pub(crate) fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

/// `∫_{|z|<1} exp(-1/(1-|z|²)) dz` in dimension `n` via the radial integral.
pub fn bump_integral(n: usize, nodes_per_unit: usize) -> f64 {
    let (r, w) = composite_rule(8, nodes_per_unit, 0.0, 1.0);
    let radial: f64 = r.iter().zip(&w).map(|(r, w)| w * bump(r * r) * r.powi(n as i32 - 1)).sum();
    // surface area of the unit sphere in R^n, n even
    let half = n / 2;
    let gamma_half: f64 = (1..half).map(|k| k as f64).product();
    let area = 2.0 * PI.powi(half as i32) / gamma_half;
    area * radial
}

impl Mollifier {
    pub fn new(d: usize, nodes_per_dim: usize) -> Result<Self> {
        if d == 0 || nodes_per_dim < 2 {
            return Err(domain("mollifier needs d >= 1 and at least 2 nodes per dimension"));
        }
        let n = 2 * d;
        let (x, w) = gauss_legendre(nodes_per_dim);
        let normalization = 1.0 / bump_integral(n, 4096);
        let total = nodes_per_dim.pow(n as u32);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut raw_mass = 0.0;
        let mut idx = alloc::vec![0usize; n];
        for _ in 0..total {
            let mut r2 = 0.0;
            let mut wt = 1.0;
            for &i in idx.iter() {
                r2 += x[i] * x[i];
                wt *= w[i];
            }
            let v = wt * bump(r2);
            if v > 0.0 {
                nodes.extend(idx.iter().map(|&i| x[i]));
                weights.push(v);
                raw_mass += v;
            }
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < nodes_per_dim {
                    break;
                }
                *slot = 0;
            }
        }
        let raw_mass = raw_mass * normalization;
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|v| *v /= sum);
        Ok(Mollifier { d, nodes, weights, normalization, raw_mass })
    }

    /// Mass of the continuous profile under the tensor rule before the
    /// discrete weights are renormalized.
    pub fn quadrature_mass(&self) -> f64 {
        self.raw_mass
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Density of `ρ_ε` at a stacked point.
    pub fn density(&self, eps: f64, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().map(|v| (v / eps) * (v / eps)).sum();
        self.normalization * bump(r2) / eps.powi(z.len() as i32)
    }

    /// `(f * ρ_ε)(x)` for a vector-valued `f` of output length `out.len()`.
    pub fn average<F>(&self, eps: f64, x: &[f64], out: &mut [f64], mut f: F)
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let n = 2 * self.d;
        let mut z = alloc::vec![0.0; n];
        let mut buf = alloc::vec![0.0; out.len()];
        out.fill(0.0);
        for (k, w) in self.weights.iter().enumerate() {
            let off = &self.nodes[k * n..(k + 1) * n];
            for i in 0..n {
                z[i] = x[i] - eps * off[i];
            }
            f(&z, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += w * b;
            }
        }
    }
}

/// A model whose drift (and optionally diffusion) is convolved with `ρ_ε`.
pub struct Mollified<M> {
    pub inner: M,
    pub eps: f64,
    pub mollify_sigma: bool,
    rule: Arc<Mollifier>,
}

pub fn mollify_drift<M: Model>(model: M, eps: f64, mollify_sigma: bool) -> Result<Mollified<M>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(domain(format!("mollification scale must lie in (0,1), got {eps}")));
    }
    let rule = Arc::new(Mollifier::new(model.dim(), 8)?);
    Ok(Mollified { inner: model, eps, mollify_sigma, rule })
}

impl<M: Model> Mollified<M> {
    pub fn with_rule(mut self, rule: Arc<Mollifier>) -> Self {
        self.rule = rule;
        self
    }
}

impl<M: Model> Model for Mollified<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn budget(&self) -> RegularityBudget {
        self.inner.budget()
    }
    fn f1(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.rule.average(self.eps, x, out, |z, o| self.inner.f1(t, z, o))
    }
    fn f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.rule.average(self.eps, x, out, |z, o| self.inner.f2(t, z, o))
    }
    fn sigma(&self, t: f64, x: &[f64], out: &mut [f64]) {
        if self.mollify_sigma {
            self.rule.average(self.eps, x, out, |z, o| self.inner.sigma(t, z, o))
        } else {
            self.inner.sigma(t, x, out)
        }
    }
    fn grad_x1_f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.rule.average(self.eps, x, out, |z, o| self.inner.grad_x1_f2(t, z, o))
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.rule.average(self.eps, x, out, |z, o| self.inner.drift(t, z, o))
    }
    fn is_frozen_exact(&self) -> bool {
        self.inner.is_frozen_exact() && !self.mollify_sigma
    }
}

/// Two-scale regularized drift anchored at `s`: `F1` mollified at the macro
/// scale, `F2` at `|t-s|^{3/2}` (raw `F2` at `t = s`).
pub struct TildeDrift<M> {
    pub inner: M,
    pub s: f64,
    pub macro_scale: f64,
    /// When false only `F1` is regularized.
    pub mollify_f2: bool,
    rule: Arc<Mollifier>,
}

pub fn tilde_drift<M: Model>(model: M, s: f64) -> Result<TildeDrift<M>> {
    let rule = Arc::new(Mollifier::new(model.dim(), 8)?);
    Ok(TildeDrift { inner: model, s, macro_scale: 1.0, mollify_f2: true, rule })
}

impl<M: Model> TildeDrift<M> {
    pub fn with_rule(mut self, rule: Arc<Mollifier>) -> Self {
        self.rule = rule;
        self
    }

    pub fn f2_only_raw(mut self) -> Self {
        self.mollify_f2 = false;
        self
    }

    /// Scale applied to `F2` at time `t`.
    pub fn f2_scale(&self, t: f64) -> f64 {
        if self.mollify_f2 {
            (t - self.s).abs().powf(1.5)
        } else {
            0.0
        }
    }
}

impl<M: Model> Model for TildeDrift<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn budget(&self) -> RegularityBudget {
        self.inner.budget()
    }
    fn f1(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.rule.average(self.macro_scale, x, out, |z, o| self.inner.f1(t, z, o))
    }
    fn f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let eps = self.f2_scale(t);
        if eps == 0.0 {
            self.inner.f2(t, x, out)
        } else {
            self.rule.average(eps, x, out, |z, o| self.inner.f2(t, z, o))
        }
    }
    fn sigma(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.inner.sigma(t, x, out)
    }
    fn grad_x1_f2(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let eps = self.f2_scale(t);
        if eps == 0.0 {
            self.inner.grad_x1_f2(t, x, out)
        } else {
            self.rule.average(eps, x, out, |z, o| self.inner.grad_x1_f2(t, z, o))
        }
    }
    fn is_frozen_exact(&self) -> bool {
        self.inner.is_frozen_exact()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CustomModel, Kolmogorov};

    #[test]
    fn profile_properties() {
        let m = Mollifier::new(1, 8).unwrap();
        let sum: f64 = m.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-14);
        assert!(m.weights.iter().all(|w| *w > 0.0));
        for k in 0..m.len() {
            let z = &m.nodes[2 * k..2 * k + 2];
            assert!(z[0] * z[0] + z[1] * z[1] < 1.0);
        }
        // symmetry under z -> -z
        let mut first = [0.0; 2];
        m.average(1.0, &[0.0, 0.0], &mut first, |z, o| o.copy_from_slice(z));
        assert!(first.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn radial_normalization_two_rules_agree() {
        for n in [2usize, 4] {
            let a = bump_integral(n, 4096);
            let b = bump_integral(n, 1024);
            assert!((a - b).abs() < 1e-12 * a, "n={n}: {a} vs {b}");
        }
    }

    #[test]
    fn affine_and_constant_drifts_unchanged() {
        let k = mollify_drift(Kolmogorov::new(1), 0.3, false).unwrap();
        let mut out = [0.0; 2];
        k.drift(0.0, &[0.7, -0.2], &mut out);
        assert!(out[0].abs() < 1e-15 && (out[1] - 0.7).abs() < 1e-14);
        let c = mollify_drift(CustomModel::new(1).with_f1(|_, _, o| o[0] = 2.5), 0.5, false).unwrap();
        let mut v = [0.0];
        c.f1(0.0, &[0.1, 0.1], &mut v);
        assert!((v[0] - 2.5).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn abs_drift_at_origin() {
        let m = mollify_drift(CustomModel::new(1).with_f1(|_, x, o| o[0] = x[0].abs()), 0.1, false).unwrap();
        let mut v = [0.0];
        m.f1(0.0, &[0.0, 0.0], &mut v);
        // marginal oracle: ∫|z1| ρ_ε(z) dz by a fine polar rule
        let (r, w) = crate::quadrature::composite_rule(8, 2048, 0.0, 1.0);
        let (th, wt) = crate::quadrature::composite_rule(8, 256, 0.0, 2.0 * PI);
        let c = 1.0 / bump_integral(2, 4096);
        let mut oracle = 0.0;
        for (ri, wi) in r.iter().zip(&w) {
            for (ti, wj) in th.iter().zip(&wt) {
                oracle += wi * wj * ri * c * bump(ri * ri) * (0.1 * ri * ti.cos()).abs();
            }
        }
        assert!(v[0] > 0.0 && v[0] <= 0.1);
        // the kink of |z1| limits the tensor rule; a finer rule closes the gap
        assert!((v[0] - oracle).abs() < 5e-2 * oracle, "{} vs {}", v[0], oracle);
        let fine = mollify_drift(CustomModel::new(1).with_f1(|_, x, o| o[0] = x[0].abs()), 0.1, false)
            .unwrap()
            .with_rule(Arc::new(Mollifier::new(1, 48).unwrap()));
        fine.f1(0.0, &[0.0, 0.0], &mut v);
        assert!((v[0] - oracle).abs() < 2e-3 * oracle, "{} vs {}", v[0], oracle);
    }

    #[test]
    fn tilde_drift_scales() {
        let t = tilde_drift(Kolmogorov::new(1), 0.0).unwrap();
        assert_eq!(t.f2_scale(0.0), 0.0);
        assert!((t.f2_scale(0.25) - 0.125).abs() < 1e-15);
        let mut a = [0.0; 2];
        t.drift(0.3, &[1.2, -0.4], &mut a);
        assert!(a[0].abs() < 1e-15 && (a[1] - 1.2).abs() < 1e-14);
    }
}
