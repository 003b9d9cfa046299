//! Minimal-energy steering of `ẋ1 = F1 + φ`, `ẋ2 = F2` between two points.
//!
//! The control is built by a fixed point on the deviation `ψ = φ_{r,s} − θ_{r,s}(x)`
//! from the free flow: along the current `ψ` the `x1`-dependence of `F2` is
//! linearized by a mean-value integral, the rest of the drift is treated as a
//! forcing, and the Gramian control of the resulting linear system is applied
//! to the full nonlinear ODE.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::coefficients::Model;
use crate::error::{domain, numeric, Error, Result};
use crate::geometry::{PhasePoint, ScaleParams};
use crate::linalg::{cholesky, from_row_major, Vector};
use crate::quadrature::gauss_legendre_on;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOptions {
    /// Stop when successive trajectories and the terminal miss are below
    /// this, measured in `|T^{-1}_{t-s} ·|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Uniform RK4 steps per solved interval.
    pub steps: usize,
    /// Maximal number of dyadic interval splits.
    pub max_depth: usize,
}

impl Default for ControlOptions {
    fn default() -> Self {
        ControlOptions { tol: 1e-9, max_iter: 100, steps: 1024, max_depth: 6 }
    }
}

impl ControlOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(domain(format!("control tolerance must be positive, got {}", self.tol)));
        }
        if self.steps < 2 || self.max_iter == 0 {
            return Err(domain("control needs at least 2 steps and 1 iteration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    pub times: Vec<f64>,
    /// `φ_r` at each time, piecewise linear in between.
    pub control: Vec<Vec<f64>>,
    /// Controlled state at each time.
    pub state: Vec<Vec<f64>>,
    pub energy: f64,
    pub terminal_error: f64,
    pub iterations: usize,
    /// Number of subintervals the horizon was split into.
    pub pieces: usize,
    pub warnings: Vec<String>,
}

impl ControlSolution {
    pub fn sup_control(&self) -> f64 {
        self.control.iter().map(|c| norm(c)).fold(0.0, f64::max)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn solve_control<M: Model + ?Sized>(model: &M, s: f64, x: &PhasePoint, t: f64, y: &PhasePoint, tol: f64) -> Result<ControlSolution> {
    solve_control_with(model, s, x, t, y, &ControlOptions { tol, ..ControlOptions::default() })
}

pub fn solve_control_with<M: Model + ?Sized>(
    model: &M,
    s: f64,
    x: &PhasePoint,
    t: f64,
    y: &PhasePoint,
    opts: &ControlOptions,
) -> Result<ControlSolution> {
    opts.validate()?;
    if !(t > s) {
        return Err(domain(format!("control needs s < t, got s={s}, t={t}")));
    }
    let d = model.dim();
    if x.dim() != d || y.dim() != d {
        return Err(domain(format!("points must have dimension {d}")));
    }
    x.check_finite()?;
    y.check_finite()?;
    let mut sol = solve_split(model, s, &x.to_vec(), t, &y.to_vec(), opts, 0)?;
    let end = sol.state.last().unwrap();
    let miss: Vec<f64> = y.to_vec().iter().zip(end).map(|(a, b)| a - b).collect();
    sol.terminal_error = ScaleParams::new(t - s, d)?.inverse_norm(&miss);
    if sol.terminal_error > opts.tol {
        return Err(Error::Tolerance { estimate: sol.energy, achieved: sol.terminal_error, tolerance: opts.tol });
    }
    if !model.is_frozen_exact() {
        sol.warnings.push("fixed-point energy is an upper bound for the minimal energy".into());
    }
    Ok(sol)
}

fn solve_split<M: Model + ?Sized>(model: &M, s: f64, x: &[f64], t: f64, y: &[f64], opts: &ControlOptions, depth: usize) -> Result<ControlSolution> {
    match fixed_point(model, s, x, t, y, opts) {
        Ok(sol) => Ok(sol),
        Err(fail) if depth < opts.max_depth => {
            let m = 0.5 * (s + t);
            let mut left = solve_split(model, s, x, m, &fail.waypoint, opts, depth + 1)?;
            let start = left.state.last().unwrap().clone();
            let right = solve_split(model, m, &start, t, y, opts, depth + 1)?;
            left.times.pop();
            left.control.pop();
            left.state.pop();
            left.times.extend(right.times);
            left.control.extend(right.control);
            left.state.extend(right.state);
            left.energy = left.energy.hypot(right.energy);
            left.iterations += right.iterations;
            left.pieces += right.pieces;
            left.warnings.extend(right.warnings);
            left.warnings.push(format!("split [{s}, {t}] at {m} (contraction {:.3})", fail.contraction));
            Ok(left)
        }
        Err(fail) => Err(Error::NoConvergence { iterations: fail.iterations, contraction: fail.contraction }),
    }
}

struct Failure {
    iterations: usize,
    contraction: f64,
    /// Last iterate's state at the midpoint.
    waypoint: Vec<f64>,
}

/// Classical RK4 on the uniform mesh with `φ` linear on each step.
fn rk4<M: Model + ?Sized>(model: &M, times: &[f64], x: &[f64], control: Option<&[Vec<f64>]>) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    let d = n / 2;
    let mut out = Vec::with_capacity(times.len());
    out.push(x.to_vec());
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut tmp = vec![0.0; n];
    let f = |r: f64, z: &[f64], u: Option<(&[f64], &[f64], f64)>, o: &mut [f64]| {
        model.drift(r, z, o);
        if let Some((a, b, w)) = u {
            for i in 0..d {
                o[i] += (1.0 - w) * a[i] + w * b[i];
            }
        }
    };
    for i in 0..times.len() - 1 {
        let (r, h) = (times[i], times[i + 1] - times[i]);
        let z = out[i].clone();
        let u = |w: f64| control.map(|c| (&c[i][..], &c[i + 1][..], w));
        f(r, &z, u(0.0), &mut k[0]);
        for j in 0..n {
            tmp[j] = z[j] + 0.5 * h * k[0][j];
        }
        f(r + 0.5 * h, &tmp, u(0.5), &mut k[1]);
        for j in 0..n {
            tmp[j] = z[j] + 0.5 * h * k[1][j];
        }
        f(r + 0.5 * h, &tmp, u(0.5), &mut k[2]);
        for j in 0..n {
            tmp[j] = z[j] + h * k[2][j];
        }
        f(r + h, &tmp, u(1.0), &mut k[3]);
        let next: Vec<f64> = (0..n).map(|j| z[j] + h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j])).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { t: r + h, state: next, reason: "non-finite controlled state".into() });
        }
        out.push(next);
    }
    Ok(out)
}

fn fixed_point<M: Model + ?Sized>(model: &M, s: f64, x: &[f64], t: f64, y: &[f64], opts: &ControlOptions) -> core::result::Result<ControlSolution, Failure> {
    let d = model.dim();
    let n = opts.steps;
    let times: Vec<f64> = (0..=n).map(|i| if i == n { t } else { s + (t - s) * i as f64 / n as f64 }).collect();
    let scale = ScaleParams { t: t - s, d };
    let fail = |iterations, contraction, waypoint: Vec<f64>| Failure { iterations, contraction, waypoint };
    let mid_guess: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
    let theta = rk4(model, &times, x, None).map_err(|_| fail(0, f64::INFINITY, mid_guess.clone()))?;
    let (un, uw) = gauss_legendre_on(6, 0.0, 1.0);

    let mut psi = vec![vec![0.0; 2 * d]; n + 1];
    let mut target_shift = vec![0.0; 2 * d];
    let mut prev_change = f64::INFINITY;
    let mut damped = false;
    let mut shifted = false;
    let mut ratios: Vec<f64> = Vec::new();
    let mut a = vec![0.0; d * d];
    let mut z = vec![0.0; 2 * d];
    let mut f_psi = vec![0.0; 2 * d];
    let mut f_theta = vec![0.0; 2 * d];
    let mut f_mixed = vec![0.0; d];
    let mut last_state: Option<Vec<Vec<f64>>> = None;

    for iter in 1..=opts.max_iter {
        // linearization A(r) and forcing F̃(r) along the current ψ
        let mut big_a = vec![vec![0.0; d * d]; n + 1];
        let mut forcing = vec![vec![0.0; 2 * d]; n + 1];
        for i in 0..=n {
            let (r, th, ps) = (times[i], &theta[i], &psi[i]);
            let acc = &mut big_a[i];
            for (u, w) in un.iter().zip(&uw) {
                for j in 0..d {
                    z[j] = th[j] + u * ps[j];
                    z[d + j] = th[d + j] + ps[d + j];
                }
                model.grad_x1_f2(r, &z, &mut a);
                for (q, v) in acc.iter_mut().zip(&a) {
                    *q += w * v;
                }
            }
            for j in 0..2 * d {
                z[j] = th[j] + ps[j];
            }
            model.drift(r, &z, &mut f_psi);
            model.drift(r, th, &mut f_theta);
            z[..d].copy_from_slice(&th[..d]);
            model.f2(r, &z, &mut f_mixed);
            let fi = &mut forcing[i];
            for j in 0..d {
                fi[j] = f_psi[j] - f_theta[j];
                fi[d + j] = f_mixed[j] - f_theta[d + j];
            }
        }
        // G(r) = ∫_r^t A, so that R_{t,r} B = (I, G(r))
        let mut g = vec![vec![0.0; d * d]; n + 1];
        for i in (0..n).rev() {
            let h = times[i + 1] - times[i];
            for q in 0..d * d {
                g[i][q] = g[i + 1][q] + 0.5 * h * (big_a[i][q] + big_a[i + 1][q]);
            }
        }
        // Gramian (exact for piecewise-linear G) and Duhamel forcing integral
        let m = 2 * d;
        let mut k = vec![0.0; m * m];
        let mut v = vec![0.0; m];
        let mut col = vec![0.0; m * d];
        let rb = |gi: &[f64], col: &mut [f64]| {
            for r in 0..d {
                for c in 0..d {
                    col[r * d + c] = if r == c { 1.0 } else { 0.0 };
                    col[(d + r) * d + c] = gi[r * d + c];
                }
            }
        };
        let mut gm = vec![0.0; d * d];
        for i in 0..n {
            let h = times[i + 1] - times[i];
            for q in 0..d * d {
                gm[q] = 0.5 * (g[i][q] + g[i + 1][q]);
            }
            for (gi, w) in [(&g[i][..], h / 6.0), (&gm[..], 4.0 * h / 6.0), (&g[i + 1][..], h / 6.0)] {
                rb(gi, &mut col);
                for r in 0..m {
                    for c in 0..m {
                        let mut acc = 0.0;
                        for l in 0..d {
                            acc += col[r * d + l] * col[c * d + l];
                        }
                        k[r * m + c] += w * acc;
                    }
                }
            }
            for (j, w) in [(i, 0.5 * h), (i + 1, 0.5 * h)] {
                let fj = &forcing[j];
                for r in 0..d {
                    v[r] += w * fj[r];
                    let mut acc = fj[d + r];
                    for c in 0..d {
                        acc += g[j][r * d + c] * fj[c];
                    }
                    v[d + r] += w * acc;
                }
            }
        }
        let rhs: Vec<f64> = (0..m).map(|j| y[j] - theta[n][j] - v[j] + target_shift[j]).collect();
        let waypoint = last_state.as_ref().map(|st| st[n / 2].clone()).unwrap_or_else(|| mid_guess.clone());
        let lambda = match cholesky(&from_row_major(m, &k)) {
            Ok(l) => l.solve(&Vector::from_vec(rhs)),
            Err(_) => return Err(fail(iter, f64::INFINITY, waypoint)),
        };
        let control: Vec<Vec<f64>> = g
            .iter()
            .map(|gi| (0..d).map(|c| lambda[c] + (0..d).map(|r| gi[r * d + c] * lambda[d + r]).sum::<f64>()).collect())
            .collect();
        let state = match rk4(model, &times, x, Some(&control)) {
            Ok(st) => st,
            Err(_) => return Err(fail(iter, f64::INFINITY, waypoint)),
        };
        let mut change: f64 = 0.0;
        let mut diff = vec![0.0; m];
        for i in 0..=n {
            for j in 0..m {
                diff[j] = state[i][j] - theta[i][j] - psi[i][j];
            }
            change = change.max(scale.inverse_norm(&diff));
        }
        let miss: Vec<f64> = (0..m).map(|j| y[j] - state[n][j]).collect();
        let terminal = scale.inverse_norm(&miss);
        if change < opts.tol && terminal < opts.tol {
            let energy = energy_of(&times, &control);
            return Ok(ControlSolution { times, control, state, energy, terminal_error: terminal, iterations: iter, pieces: 1, warnings: Vec::new() });
        }
        // once the trajectory has settled the miss is discretization error; fold it into the target
        let shift = change < 0.1 * terminal;
        if shift {
            for j in 0..m {
                target_shift[j] += miss[j];
            }
        }
        if !shifted && change.is_finite() && prev_change.is_finite() && prev_change > 0.0 {
            let rho = change / prev_change;
            if rho > 1.0 {
                damped = true;
            }
            ratios.push(rho);
        }
        shifted = shift;
        let relax = if damped { 0.5 } else { 1.0 };
        for i in 0..=n {
            for j in 0..m {
                let new = state[i][j] - theta[i][j];
                psi[i][j] += relax * (new - psi[i][j]);
            }
        }
        let contraction = contraction_estimate(&ratios);
        let mid = state[n / 2].clone();
        if !change.is_finite() {
            return Err(fail(iter, f64::INFINITY, waypoint));
        }
        if ratios.len() >= 6 && contraction > 0.9 {
            return Err(fail(iter, contraction, mid));
        }
        if iter == opts.max_iter {
            return Err(fail(iter, contraction, mid));
        }
        prev_change = change;
        last_state = Some(state);
    }
    Err(fail(opts.max_iter, f64::NAN, mid_guess))
}

/// Geometric mean of the last three change ratios.
fn contraction_estimate(ratios: &[f64]) -> f64 {
    let tail = &ratios[ratios.len().saturating_sub(3)..];
    if tail.is_empty() {
        return 0.0;
    }
    let logs: f64 = tail.iter().map(|r| r.max(1e-300).ln()).sum();
    (logs / tail.len() as f64).exp()
}

/// `(∫|φ|²)^{1/2}` for piecewise-linear samples (Simpson is exact per step).
fn energy_of(times: &[f64], control: &[Vec<f64>]) -> f64 {
    let mut e = 0.0;
    for i in 0..times.len() - 1 {
        let h = times[i + 1] - times[i];
        for (a, b) in control[i].iter().zip(&control[i + 1]) {
            e += h / 3.0 * (a * a + a * b + b * b);
        }
    }
    e.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEquivalence {
    /// Achieved energy `I`.
    pub energy: f64,
    /// `D = |T^{-1}_{t-s}(θ_{t,s}(x) − y)|`.
    pub distance: f64,
    /// `I / (D + 1)`.
    pub ratio: f64,
    /// `sup_r |φ_r| √(t−s) / (D + 1)`.
    pub control_ratio: f64,
    pub terminal_error: f64,
}

pub fn energy_equivalence<M: Model + ?Sized>(model: &M, s: f64, x: &PhasePoint, t: f64, y: &PhasePoint) -> Result<EnergyEquivalence> {
    energy_equivalence_with(model, s, x, t, y, &ControlOptions::default())
}

pub fn energy_equivalence_with<M: Model + ?Sized>(
    model: &M,
    s: f64,
    x: &PhasePoint,
    t: f64,
    y: &PhasePoint,
    opts: &ControlOptions,
) -> Result<EnergyEquivalence> {
    let sol = solve_control_with(model, s, x, t, y, opts)?;
    let d = model.dim();
    let times: Vec<f64> = (0..=opts.steps).map(|i| s + (t - s) * i as f64 / opts.steps as f64).collect();
    let theta = rk4(model, &times, &x.to_vec(), None)?;
    let gap: Vec<f64> = theta[opts.steps].iter().zip(y.to_vec()).map(|(a, b)| a - b).collect();
    let distance = ScaleParams::new(t - s, d)?.inverse_norm(&gap);
    Ok(EnergyEquivalence {
        energy: sol.energy,
        distance,
        ratio: sol.energy / (distance + 1.0),
        control_ratio: sol.sup_control() * (t - s).sqrt() / (distance + 1.0),
        terminal_error: sol.terminal_error,
    })
}

/// Empirical constants of the energy/distance equivalence over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceBatch {
    /// Smallest `κ5` with `κ5^{-1}(D−1) ≤ I ≤ κ5(D+1)` on every case.
    pub kappa5: f64,
    /// Smallest `κ6` with `sup|φ| ≤ κ6 (D+1)/√(t−s)` on every case.
    pub kappa6: f64,
    /// Cases that failed or missed the terminal tolerance.
    pub violations: usize,
    pub cases: Vec<core::result::Result<EnergyEquivalence, Error>>,
}

pub fn equivalence_batch<M: Model + ?Sized>(
    model: &M,
    cases: &[(f64, PhasePoint, f64, PhasePoint)],
    opts: &ControlOptions,
) -> Result<EquivalenceBatch> {
    if cases.is_empty() {
        return Err(domain("empty equivalence batch"));
    }
    let mut kappa5: f64 = 1.0;
    let mut kappa6: f64 = 1.0;
    let mut violations = 0;
    let mut out = Vec::with_capacity(cases.len());
    for (s, x, t, y) in cases {
        let r = energy_equivalence_with(model, *s, x, *t, y, opts);
        match &r {
            Ok(e) if e.terminal_error <= opts.tol && e.energy.is_finite() => {
                kappa5 = kappa5.max(e.ratio);
                if e.distance > 1.0 {
                    kappa5 = kappa5.max((e.distance - 1.0) / e.energy);
                }
                kappa6 = kappa6.max(e.control_ratio);
            }
            _ => violations += 1,
        }
        out.push(r);
    }
    if !kappa5.is_finite() || !kappa6.is_finite() {
        return Err(numeric("non-finite equivalence constant"));
    }
    Ok(EquivalenceBatch { kappa5, kappa6, violations, cases: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CustomModel, Holder, Kolmogorov};

    fn pt(v: &[f64]) -> PhasePoint {
        PhasePoint::from_slice(v)
    }

    #[test]
    fn kolmogorov_energies() {
        let m = Kolmogorov::new(1);
        let o = pt(&[0.0, 0.0]);
        let a = solve_control(&m, 0.0, &o, 1.0, &pt(&[1.0, 0.0]), 1e-9).unwrap();
        assert!((a.energy - 2.0).abs() < 1e-8, "{}", a.energy);
        assert!(a.terminal_error < 1e-9);
        let b = solve_control(&m, 0.0, &o, 1.0, &pt(&[0.0, 1.0]), 1e-9).unwrap();
        assert!((b.energy - 12f64.sqrt()).abs() < 1e-8, "{}", b.energy);
        // φ_r = (1, 1 − r) K⁻¹ w
        for (r, c) in a.times.iter().zip(&a.control).step_by(97) {
            assert!((c[0] - (6.0 * r - 2.0)).abs() < 1e-8);
        }
        for (r, c) in b.times.iter().zip(&b.control).step_by(97) {
            assert!((c[0] - (6.0 - 12.0 * r)).abs() < 1e-8);
        }
        let z = solve_control(&m, 0.0, &o, 1.0, &o, 1e-9).unwrap();
        assert_eq!(z.energy, 0.0);
        let e = energy_equivalence(&m, 0.0, &o, 1.0, &pt(&[1.0, 0.0])).unwrap();
        assert!((e.distance - 1.0).abs() < 1e-12 && (e.ratio - 1.0).abs() < 1e-8);
    }

    /// Minimal energy by least squares over piecewise-constant controls.
    fn least_squares_energy(f1: impl Fn(f64) -> f64, c: impl Fn(f64) -> f64, w: [f64; 2], n: usize) -> f64 {
        // with F1 = f1(t), F2 = c(t) x1 the endpoint is affine in the control:
        // x1(1) = ∫φ + ∫f1,  x2(1) = ∫ c(r) x1(r) dr
        let h = 1.0 / n as f64;
        let sub = 64;
        // columns: response of (x1(1), x2(1)) to a unit pulse on step j
        let mut cols = vec![[0.0; 2]; n];
        let mut drift = [0.0; 2];
        for j in 0..n {
            let mut x1 = 0.0;
            let mut x2 = 0.0;
            let mut d1 = 0.0;
            let mut d2 = 0.0;
            for i in 0..n * sub {
                let r = (i as f64 + 0.5) * h / sub as f64;
                let dt = h / sub as f64;
                let on = if i / sub == j { 1.0 } else { 0.0 };
                x2 += c(r) * (x1 + 0.5 * dt * on) * dt;
                x1 += on * dt;
                if j == 0 {
                    d2 += c(r) * (d1 + 0.5 * dt * f1(r)) * dt;
                    d1 += f1(r) * dt;
                }
            }
            cols[j] = [x1, x2];
            if j == 0 {
                drift = [d1, d2];
            }
        }
        // minimal norm solution of C u = w − drift, energy² = h Σ u²; with the
        // discrete Gramian G = Σ c_j c_jᵀ / h this is (w−drift)ᵀ G⁻¹ (w−drift)
        let mut g = [0.0; 4];
        for col in &cols {
            g[0] += col[0] * col[0] / h;
            g[1] += col[0] * col[1] / h;
            g[3] += col[1] * col[1] / h;
        }
        g[2] = g[1];
        let (e1, e2) = (w[0] - drift[0], w[1] - drift[1]);
        let det = g[0] * g[3] - g[1] * g[2];
        ((g[3] * e1 * e1 - 2.0 * g[1] * e1 * e2 + g[0] * e2 * e2) / det).sqrt()
    }

    #[test]
    fn linear_time_varying_matches_least_squares() {
        let m = CustomModel::new(1)
            .with_f1(|t, _x, o| o[0] = t.sin())
            .with_f2(|t, x, o| o[0] = (1.0 + t) * x[0])
            .with_sigma(|_t, _x, o| o[0] = 1.0)
            .with_grad_x1_f2(|t, _x, o| o[0] = 1.0 + t);
        let y = [0.7, -0.4];
        let sol = solve_control(&m, 0.0, &pt(&[0.0, 0.0]), 1.0, &pt(&y), 1e-9).unwrap();
        let oracle = least_squares_energy(|t| t.sin(), |t| 1.0 + t, y, 400);
        assert!((sol.energy - oracle).abs() < 1e-5 * oracle, "{} {}", sol.energy, oracle);
        assert!(sol.terminal_error < 1e-9);
    }

    #[test]
    fn holder_controls_reach_the_target() {
        let m = Holder::new(1, 0.5);
        let x = pt(&[0.3, -0.2]);
        let y = pt(&[-0.5, 0.4]);
        let sol = solve_control(&m, 0.0, &x, 0.5, &y, 1e-9).unwrap();
        assert!(sol.terminal_error < 1e-9);
        assert!(sol.energy > 0.0 && sol.energy.is_finite());
        let end = sol.state.last().unwrap();
        assert!((end[0] - y.x1[0]).abs() < 1e-9 && (end[1] - y.x2[0]).abs() < 1e-9);
    }

    #[test]
    fn split_intervals_still_hit() {
        let m = Holder::new(1, 0.5);
        let x = pt(&[1.0, 0.5]);
        let y = pt(&[-1.0, 2.0]);
        let direct = solve_control(&m, 0.0, &x, 1.0, &y, 1e-9).unwrap();
        assert_eq!(direct.pieces, 1);
        let opts = ControlOptions { max_iter: 10, ..ControlOptions::default() };
        let split = solve_control_with(&m, 0.0, &x, 1.0, &y, &opts).unwrap();
        assert!(split.pieces > 1);
        assert!(split.terminal_error < 1e-9);
        // each piece is the Gramian control of its own interval, so splitting
        // cannot beat the unsplit energy by much
        assert!(split.energy > 0.9 * direct.energy);
        let o = ControlOptions { max_iter: 1, max_depth: 0, ..ControlOptions::default() };
        assert!(matches!(solve_control_with(&m, 0.0, &x, 1.0, &y, &o), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn batch_constants() {
        let m = Holder::new(1, 0.5);
        let mut cases = Vec::new();
        for i in 0..8 {
            let a = i as f64 * 0.7;
            cases.push((0.0, pt(&[a.sin(), a.cos() - 0.5]), 0.25 + 0.1 * i as f64, pt(&[(2.0 * a).cos(), 0.3 * a.sin()])));
        }
        let b = equivalence_batch(&m, &cases, &ControlOptions::default()).unwrap();
        assert_eq!(b.violations, 0);
        assert!(b.kappa5.is_finite() && b.kappa5 >= 1.0);
        assert!(b.kappa6.is_finite() && b.kappa6 >= 1.0);
        for c in &b.cases {
            let e = c.as_ref().unwrap();
            assert!(e.ratio <= b.kappa5 && e.control_ratio <= b.kappa6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = Kolmogorov::new(1);
        let o = pt(&[0.0, 0.0]);
        assert!(solve_control(&m, 1.0, &o, 1.0, &o, 1e-9).is_err());
        assert!(solve_control(&m, 0.0, &o, 1.0, &o, 0.0).is_err());
        assert!(solve_control(&m, 0.0, &pt(&[0.0, 0.0, 0.0, 0.0]), 1.0, &o, 1e-9).is_err());
    }
}
