
#[allow(unused_imports)]
use num_traits::Float;
use super::{identity_into, Model, RegularityBudget};
use crate::geometry::aniso_norm_slice;

/// `F = (0, x1)`, `σ = sigma · I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kolmogorov {
    pub d: usize,
    pub sigma: f64,
}

impl Kolmogorov {
    pub fn new(d: usize) -> Self {
        Kolmogorov { d, sigma: 1.0 }
    }

    pub fn with_sigma(d: usize, sigma: f64) -> Self {
        Kolmogorov { d, sigma }
    }
}

impl Model for Kolmogorov {
    fn dim(&self) -> usize {
        self.d
    }
    fn budget(&self) -> RegularityBudget {
        let s2 = self.sigma * self.sigma;
        RegularityBudget { gamma: 1.0, kappa0: s2.max(1.0 / s2), kappa1: 1.0, kappa2: 1.0, c0: 1.0, horizon: 1.0 }
    }
    fn f1(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn f2(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&x[..self.d]);
    }
    fn sigma(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        identity_into(self.d, out);
        out.iter_mut().for_each(|v| *v *= self.sigma);
    }
    fn grad_x1_f2(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        identity_into(self.d, out);
    }
    fn is_frozen_exact(&self) -> bool {
        true
    }
}

/// Minimal-regularity test model:
/// `F1 = a sign(x1) min(|x1|^γ, 1) + b x1`,
/// `F2 = x1 + c min(|x2|^{(1+γ)/3}, 1)`,
/// `σ = (1 + sin(|x|_d^γ) / 4) I`, all nonlinearities componentwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Holder {
    pub d: usize,
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Holder {
    pub fn new(d: usize, gamma: f64) -> Self {
        Holder { d, gamma, a: 0.5, b: 0.5, c: 0.1 }
    }
}

impl Model for Holder {
    fn dim(&self) -> usize {
        self.d
    }
    fn budget(&self) -> RegularityBudget {
        let rd = (self.d as f64).sqrt();
        RegularityBudget {
            gamma: self.gamma,
            kappa0: (0.25 * rd).max(1.0 / 0.5625),
            kappa1: (2.0 * self.a.abs() + self.b.abs()) * rd,
            kappa2: 1.0 + self.c.abs() * rd,
            c0: 1.0,
            horizon: 1.0,
        }
    }
    fn f1(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for i in 0..self.d {
            let v = x[i];
            let rough = if v == 0.0 { 0.0 } else { v.signum() * v.abs().powf(self.gamma).min(1.0) };
            out[i] = self.a * rough + self.b * v;
        }
    }
    fn f2(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let q = (1.0 + self.gamma) / 3.0;
        for i in 0..self.d {
            out[i] = x[i] + self.c * x[self.d + i].abs().powf(q).min(1.0);
        }
    }
    fn sigma(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let s = 1.0 + 0.25 * aniso_norm_slice(x).powf(self.gamma).sin();
        identity_into(self.d, out);
        out.iter_mut().for_each(|v| *v *= s);
    }
    fn grad_x1_f2(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        identity_into(self.d, out);
    }
}

/// Damped Hamiltonian dynamics `F = (-∇V(x2) - damping x1, x1)` with
/// `V(x2) = stiffness |x2|²/2 + anharmonic Σ (1 - cos x2_i)`, `σ = I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampedHamiltonian {
    pub d: usize,
    pub damping: f64,
    pub stiffness: f64,
    pub anharmonic: f64,
}

impl Model for DampedHamiltonian {
    fn dim(&self) -> usize {
        self.d
    }
    fn budget(&self) -> RegularityBudget {
        let k1 = (self.stiffness.abs() + self.anharmonic.abs() + self.damping.abs()) * (self.d as f64).sqrt();
        RegularityBudget { gamma: 1.0, kappa0: 1.0, kappa1: k1.max(1e-12), kappa2: 1.0, c0: 1.0, horizon: 1.0 }
    }
    fn f1(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for i in 0..self.d {
            let q = x[self.d + i];
            out[i] = -(self.stiffness * q + self.anharmonic * q.sin()) - self.damping * x[i];
        }
    }
    fn f2(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&x[..self.d]);
    }
    fn sigma(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        identity_into(self.d, out);
    }
    fn grad_x1_f2(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        identity_into(self.d, out);
    }
}
