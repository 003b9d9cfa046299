//! Empirical check of the standing assumptions on sampled point pairs.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::Model;
use crate::geometry::{aniso_norm_slice, norm2};
use crate::linalg::{from_row_major, min_singular_value, sym_eigen_range};
use crate::montecarlo::PathRng;

#[derive(Debug, Clone, PartialEq)]
pub struct AuditPlan {
    /// Number of sampled pairs per time on the grid.
    pub samples: usize,
    /// Points are drawn uniformly in `[-half_width, half_width]^{2d}`.
    pub half_width: f64,
    pub times: Vec<f64>,
    pub seed: u64,
}

impl Default for AuditPlan {
    fn default() -> Self {
        AuditPlan { samples: 10_000, half_width: 2.0, times: alloc::vec![0.0, 0.5, 1.0], seed: 0 }
    }
}

/// Worst observed value of one audited quantity, with the point(s) where it
/// occurred.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub value: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Witness {
    fn new(value: f64) -> Self {
        Witness { value, t: 0.0, x: Vec::new(), y: Vec::new() }
    }

    fn offer(&mut self, v: f64, t: f64, x: &[f64], y: &[f64], larger: bool) {
        if (larger && v > self.value) || (!larger && v < self.value) {
            *self = Witness { value: v, t, x: x.to_vec(), y: y.to_vec() };
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub pairs: usize,
    /// `sup |σ(t,x) - σ(t,y)| / |x-y|_d^γ` (Frobenius norm).
    pub sigma_holder: Witness,
    /// `sup |F1(t,x) - F1(t,y)|` over pairs with `|x-y|_d ≤ 1`.
    pub f1_oscillation: Witness,
    /// `sup |F2(t,x) - F2(t,y) - ∇_{x1}F2(t,y)(x1-y1)| / |x-y|_d^{1+γ}`.
    pub f2_taylor: Witness,
    pub eig_min: Witness,
    pub eig_max: Witness,
    pub grad_sv_min: Witness,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Samples pairs with `|x-y|_d ≤ 1` and compares the worst quotients
/// against the model's regularity budget.
pub fn audit_assumptions<M: Model + ?Sized>(model: &M, plan: &AuditPlan) -> AuditReport {
    let d = model.dim();
    let n = 2 * d;
    let b = model.budget();
    let mut rep = AuditReport {
        pairs: 0,
        sigma_holder: Witness::new(0.0),
        f1_oscillation: Witness::new(0.0),
        f2_taylor: Witness::new(0.0),
        eig_min: Witness::new(f64::INFINITY),
        eig_max: Witness::new(f64::NEG_INFINITY),
        grad_sv_min: Witness::new(f64::INFINITY),
        passed: true,
        failures: Vec::new(),
    };
    let mut u = alloc::vec![0.0; 2 * n + 2];
    let (mut x, mut y, mut z) = (alloc::vec![0.0; n], alloc::vec![0.0; n], alloc::vec![0.0; n]);
    let (mut sx, mut sy, mut sd) = (alloc::vec![0.0; d * d], alloc::vec![0.0; d * d], alloc::vec![0.0; d * d]);
    let (mut fx, mut fy, mut gy) = (alloc::vec![0.0; d], alloc::vec![0.0; d], alloc::vec![0.0; d * d]);
    for (ti, &t) in plan.times.iter().enumerate() {
        let mut rng = PathRng::new(plan.seed, ti as u64, u.len());
        for k in 0..plan.samples {
            for (i, v) in u.iter_mut().enumerate() {
                *v = rng.uniform_at((k * (2 * n + 2) + i) as u64);
            }
            for i in 0..n {
                x[i] = plan.half_width * (2.0 * u[i] - 1.0);
                z[i] = 2.0 * u[n + i] - 1.0;
            }
            // y = x + T_δ z with |T_δ z|_d = ρ ∈ (0, 1]
            let rho = u[2 * n];
            let zn = aniso_norm_slice(&z);
            if zn == 0.0 {
                continue;
            }
            let delta = (rho / zn) * (rho / zn);
            for i in 0..n {
                let f = if i < d { delta.sqrt() } else { delta * delta.sqrt() };
                y[i] = x[i] + f * z[i];
            }
            let dist = rho;
            rep.pairs += 1;

            model.sigma(t, &x, &mut sx);
            model.sigma(t, &y, &mut sy);
            for i in 0..d * d {
                sd[i] = sx[i] - sy[i];
            }
            rep.sigma_holder.offer(norm2(&sd) / dist.powf(b.gamma), t, &x, &y, true);

            model.f1(t, &x, &mut fx);
            model.f1(t, &y, &mut fy);
            let osc = fx.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            rep.f1_oscillation.offer(osc, t, &x, &y, true);

            model.f2(t, &x, &mut fx);
            model.f2(t, &y, &mut fy);
            model.grad_x1_f2(t, &y, &mut gy);
            let mut rem = 0.0;
            for i in 0..d {
                let mut r = fx[i] - fy[i];
                for j in 0..d {
                    r -= gy[i * d + j] * (x[j] - y[j]);
                }
                rem += r * r;
            }
            rep.f2_taylor.offer(rem.sqrt() / dist.powf(1.0 + b.gamma), t, &x, &y, true);

            let s = from_row_major(d, &sx);
            let (lo, hi) = sym_eigen_range(&(&s * s.transpose()));
            rep.eig_min.offer(lo, t, &x, &x, false);
            rep.eig_max.offer(hi, t, &x, &x, true);
            model.grad_x1_f2(t, &x, &mut gy);
            rep.grad_sv_min.offer(min_singular_value(&from_row_major(d, &gy)), t, &x, &x, false);
        }
    }
    let tol = 1e-9;
    let mut fail = |ok: bool, msg: String| {
        if !ok {
            rep.passed = false;
            rep.failures.push(msg);
        }
    };
    fail(rep.sigma_holder.value <= b.kappa0 * (1.0 + tol), format!("sigma Holder quotient {} exceeds kappa0 {}", rep.sigma_holder.value, b.kappa0));
    fail(rep.f1_oscillation.value <= b.kappa1 * (1.0 + tol), format!("F1 oscillation {} exceeds kappa1 {}", rep.f1_oscillation.value, b.kappa1));
    fail(rep.f2_taylor.value <= b.kappa2 * (1.0 + tol), format!("F2 Taylor quotient {} exceeds kappa2 {}", rep.f2_taylor.value, b.kappa2));
    fail(rep.eig_min.value >= (1.0 - tol) / b.kappa0, format!("smallest eigenvalue of sigma sigma* {} below 1/kappa0", rep.eig_min.value));
    fail(rep.eig_max.value <= b.kappa0 * (1.0 + tol), format!("largest eigenvalue of sigma sigma* {} above kappa0", rep.eig_max.value));
    fail(rep.grad_sv_min.value >= b.c0 * (1.0 - tol), format!("smallest singular value of grad_x1 F2 {} below c0 {}", rep.grad_sv_min.value, b.c0));
    rep
}
