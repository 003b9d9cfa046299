//! Linearized dynamics frozen along a flow: resolvent `R`, mean `ϑ`, Gram
//! matrix `K` and the Gaussian density `p̃` with its derivatives.
//!
//! All quantities are obtained by integrating one augmented linear system
//! together with the freezing flow, either anchored at the start of the
//! interval (quantities over `[s, r]`, `r` moving) or at its end (quantities
//! over `[u, t]`, `u` moving backwards).

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::coefficients::Model;
use crate::error::{domain, numeric, Result};
use crate::geometry::{gauss_g_slice, PhasePoint, ScaleParams};
use crate::linalg::{block_lower, symmetrize, Mat, Vector};
use crate::ode::{integrate, OdeOptions, Trajectory};

pub(crate) fn sweep_options() -> OdeOptions {
    OdeOptions::default()
}

/// Which end of the interval the augmented system is anchored at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    /// Quantities over `[anchor, r]`.
    Start,
    /// Quantities over `[u, anchor]`.
    End,
}

/// Augmented state layout: `θ (2d) | M (d²) | c (2d) | K (4d²)`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
}

impl Layout {
    fn m(&self) -> usize {
        2 * self.d
    }
    fn c(&self) -> usize {
        self.m() + self.d * self.d
    }
    fn k(&self) -> usize {
        self.c() + 2 * self.d
    }
    fn len(&self) -> usize {
        self.k() + 4 * self.d * self.d
    }
}

/// A solved augmented system; every requested stop is an exact node.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub d: usize,
    pub anchor: Anchor,
    pub anchor_time: f64,
    traj: Trajectory,
}

/// Integrates the frozen system from `anchor_time` (where the freezing flow
/// passes through `theta0`) towards `other_end`.
pub fn sweep<M: Model + ?Sized>(
    model: &M,
    anchor: Anchor,
    anchor_time: f64,
    theta0: &[f64],
    other_end: f64,
    stops: &[f64],
    opts: &OdeOptions,
) -> Result<Sweep> {
    let d = model.dim();
    let lay = Layout { d };
    let n = 2 * d;
    let mut y0 = alloc::vec![0.0; lay.len()];
    y0[..n].copy_from_slice(theta0);
    let mut f = alloc::vec![0.0; n];
    let mut a = alloc::vec![0.0; d * d];
    let mut sg = alloc::vec![0.0; d * d];
    let mut ss = alloc::vec![0.0; d * d];
    let mut g = alloc::vec![0.0; n];
    let rhs = |r: f64, y: &[f64], out: &mut [f64]| {
        let th = &y[..n];
        model.drift(r, th, &mut f);
        model.grad_x1_f2(r, th, &mut a);
        model.sigma(r, th, &mut sg);
        for i in 0..d {
            for j in 0..d {
                ss[i * d + j] = (0..d).map(|k| sg[i * d + k] * sg[j * d + k]).sum();
            }
        }
        g[..d].copy_from_slice(&f[..d]);
        for i in 0..d {
            g[d + i] = f[d + i] - (0..d).map(|j| a[i * d + j] * th[j]).sum::<f64>();
        }
        out[..n].copy_from_slice(&f);
        let m = &y[lay.m()..lay.c()];
        let c = &y[lay.c()..lay.k()];
        let k = &y[lay.k()..];
        let (om, rest) = out[lay.m()..].split_at_mut(d * d);
        let (oc, ok) = rest.split_at_mut(n);
        let kk = |i: usize, j: usize| k[i * n + j];
        match anchor {
            Anchor::Start => {
                om.copy_from_slice(&a);
                for i in 0..d {
                    oc[i] = g[i];
                    oc[d + i] = g[d + i] + (0..d).map(|j| a[i * d + j] * c[j]).sum::<f64>();
                }
                // K' = 𝔸K + K𝔸ᵀ + ΣΣᵀ
                for i in 0..d {
                    for j in 0..d {
                        let ak11: f64 = (0..d).map(|l| a[i * d + l] * kk(l, j)).sum();
                        let ak12: f64 = (0..d).map(|l| a[i * d + l] * kk(l, d + j)).sum();
                        let k11a: f64 = (0..d).map(|l| kk(i, l) * a[j * d + l]).sum();
                        let k21a: f64 = (0..d).map(|l| kk(d + i, l) * a[j * d + l]).sum();
                        ok[i * n + j] = ss[i * d + j];
                        ok[i * n + d + j] = k11a;
                        ok[(d + i) * n + j] = ak11;
                        ok[(d + i) * n + d + j] = ak12 + k21a;
                    }
                }
            }
            Anchor::End => {
                om.iter_mut().zip(&a).for_each(|(o, v)| *o = -v);
                for i in 0..d {
                    oc[i] = -g[i];
                    oc[d + i] = -(g[d + i] + (0..d).map(|j| m[i * d + j] * g[j]).sum::<f64>());
                }
                // K' = -R S̃ Rᵀ with R S̃ Rᵀ = [[S, S Mᵀ], [M S, M S Mᵀ]]
                for i in 0..d {
                    for j in 0..d {
                        let smt: f64 = (0..d).map(|l| ss[i * d + l] * m[j * d + l]).sum();
                        let ms: f64 = (0..d).map(|l| m[i * d + l] * ss[l * d + j]).sum();
                        let msm: f64 = (0..d)
                            .map(|l| m[i * d + l] * (0..d).map(|q| ss[l * d + q] * m[j * d + q]).sum::<f64>())
                            .sum();
                        ok[i * n + j] = -ss[i * d + j];
                        ok[i * n + d + j] = -smt;
                        ok[(d + i) * n + j] = -ms;
                        ok[(d + i) * n + d + j] = -msm;
                    }
                }
            }
        }
    };
    let traj = integrate(rhs, anchor_time, &y0, other_end, stops, opts)?;
    Ok(Sweep { d, anchor, anchor_time, traj })
}

/// Raw frozen data over an interval `[s, t]` (or `[t, s]` for resolvents).
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenParts {
    pub s: f64,
    pub t: f64,
    /// `R_{t,s}`
    pub r: Mat,
    /// `ϑ_{t,s}(x) = R x + c`
    pub c: Vector,
    /// `K_{t,s}`
    pub k: Mat,
    /// Freezing flow at `s` and at `t`.
    pub theta_s: Vec<f64>,
    pub theta_t: Vec<f64>,
}

impl Sweep {
    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    /// Frozen data for the interval between the anchor and `time`.
    pub fn parts_at(&self, time: f64) -> FrozenParts {
        let y = match self.traj.node_at(time) {
            Some(i) => self.traj.state(i).to_vec(),
            None => self.traj.eval(time),
        };
        let d = self.d;
        let n = 2 * d;
        let lay = Layout { d };
        let m = Mat::from_row_slice(d, d, &y[lay.m()..lay.c()]);
        let mut k = Mat::from_row_slice(n, n, &y[lay.k()..]);
        symmetrize(&mut k);
        let c = Vector::from_column_slice(&y[lay.c()..lay.k()]);
        let theta_here = y[..n].to_vec();
        let theta_anchor = self.traj.first()[..n].to_vec();
        match self.anchor {
            Anchor::Start => FrozenParts { s: self.anchor_time, t: time, r: block_lower(d, &m), c, k, theta_s: theta_anchor, theta_t: theta_here },
            Anchor::End => FrozenParts { s: time, t: self.anchor_time, r: block_lower(d, &m), c, k, theta_s: theta_here, theta_t: theta_anchor },
        }
    }
}

fn check_freezing<M: Model + ?Sized>(model: &M, xi: &PhasePoint) -> Result<()> {
    if xi.dim() != model.dim() {
        return Err(domain(format!("point has dimension {} but model has d={}", xi.dim(), model.dim())));
    }
    xi.check_finite()
}

/// Frozen data for freezing `(τ, ξ)` over `[s, t]`; `t < s` is allowed
/// (then `K` is not a covariance).
pub fn frozen_parts<M: Model + ?Sized>(model: &M, tau: f64, xi: &PhasePoint, s: f64, t: f64) -> Result<FrozenParts> {
    check_freezing(model, xi)?;
    let opts = sweep_options();
    let x = xi.to_vec();
    if tau == t && tau != s {
        return Ok(sweep(model, Anchor::End, t, &x, s, &[], &opts)?.parts_at(s));
    }
    let theta_s = if tau == s {
        x
    } else {
        integrate(|r, z, o| model.drift(r, z, o), tau, &x, s, &[], &crate::ode::OdeOptions::default())?.last().to_vec()
    };
    Ok(sweep(model, Anchor::Start, s, &theta_s, t, &[], &opts)?.parts_at(t))
}

/// `R^{(τ,ξ)}_{t,s}`.
pub fn resolvent<M: Model + ?Sized>(model: &M, tau: f64, xi: &PhasePoint, s: f64, t: f64) -> Result<Mat> {
    Ok(frozen_parts(model, tau, xi, s, t)?.r)
}

/// `ϑ^{(τ,ξ)}_{t,s}(x)`.
pub fn frozen_mean<M: Model + ?Sized>(model: &M, tau: f64, xi: &PhasePoint, s: f64, t: f64, x: &PhasePoint) -> Result<PhasePoint> {
    check_freezing(model, x)?;
    let p = frozen_parts(model, tau, xi, s, t)?;
    let m = &p.r * Vector::from_column_slice(&x.to_vec()) + &p.c;
    Ok(PhasePoint::from_slice(m.as_slice()))
}

/// `K^{(τ,ξ)}_{t,s}`.
pub fn gram<M: Model + ?Sized>(model: &M, tau: f64, xi: &PhasePoint, s: f64, t: f64) -> Result<Mat> {
    if !(t > s) {
        return Err(domain(format!("gram needs s < t, got s={s}, t={t}")));
    }
    let k = frozen_parts(model, tau, xi, s, t)?.k;
    if k.clone().cholesky().is_none() {
        return Err(numeric("Gram matrix lost positive definiteness"));
    }
    Ok(k)
}

/// Derivative order `(j1, j2)` in `(x1, x2)`, with `j1 ≤ 2`, `j2 ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Deriv {
    pub j1: usize,
    pub j2: usize,
}

impl Deriv {
    pub const VALUE: Deriv = Deriv { j1: 0, j2: 0 };
    pub const X1: Deriv = Deriv { j1: 1, j2: 0 };
    pub const X1X1: Deriv = Deriv { j1: 2, j2: 0 };
    pub const X2: Deriv = Deriv { j1: 0, j2: 1 };
    pub const X1X2: Deriv = Deriv { j1: 1, j2: 1 };

    pub fn new(j1: usize, j2: usize) -> Result<Self> {
        if j1 > 2 || j2 > 1 {
            return Err(domain(format!("derivative order ({j1},{j2}) not supported; need j1 <= 2, j2 <= 1")));
        }
        Ok(Deriv { j1, j2 })
    }

    pub fn order(&self) -> usize {
        self.j1 + self.j2
    }

    /// Time-singularity exponent `(j1 + 3 j2) / 2`.
    pub fn scaling(&self) -> f64 {
        (self.j1 + 3 * self.j2) as f64 / 2.0
    }

    /// Number of entries of the derivative tensor for dimension `d`.
    pub fn len(&self, d: usize) -> usize {
        d.pow(self.order() as u32)
    }
}

/// Frozen Gaussian over `[s, t]` with its covariance factorized once.
#[derive(Debug, Clone)]
pub struct FrozenGaussian {
    pub d: usize,
    pub parts: FrozenParts,
    chol_l: Mat,
    log_norm: f64,
}

impl FrozenGaussian {
    pub fn from_parts(d: usize, parts: FrozenParts) -> Result<Self> {
        if !(parts.t > parts.s) {
            return Err(domain(format!("frozen density needs s < t, got s={}, t={}", parts.s, parts.t)));
        }
        let ch = parts.k.clone().cholesky().ok_or_else(|| numeric(format!("Gram matrix on [{}, {}] is not positive definite", parts.s, parts.t)))?;
        let l = ch.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -(d as f64) * (2.0 * PI).ln() - 0.5 * log_det;
        Ok(FrozenGaussian { d, parts, chol_l: l, log_norm })
    }

    pub fn new<M: Model + ?Sized>(model: &M, tau: f64, xi: &PhasePoint, s: f64, t: f64) -> Result<Self> {
        if !(t > s) {
            return Err(domain(format!("frozen density needs s < t, got s={s}, t={t}")));
        }
        FrozenGaussian::from_parts(model.dim(), frozen_parts(model, tau, xi, s, t)?)
    }

    pub fn mean(&self, x: &[f64]) -> Vector {
        &self.parts.r * Vector::from_column_slice(x) + &self.parts.c
    }

    /// `(2π)^{-d} det K^{-1/2}`.
    pub fn peak(&self) -> f64 {
        self.log_norm.exp()
    }

    pub fn log_normalization(&self) -> f64 {
        self.log_norm
    }

    pub fn chol_factor(&self) -> &Mat {
        &self.chol_l
    }

    /// `K^{-1} v`.
    pub fn solve(&self, v: &Vector) -> Vector {
        let z = self.chol_l.solve_lower_triangular(v).expect("triangular factor is invertible");
        self.chol_l.transpose().solve_upper_triangular(&z).expect("triangular factor is invertible")
    }

    /// `|K^{-1/2} v|²`.
    pub fn quad_form(&self, v: &Vector) -> f64 {
        self.chol_l.solve_lower_triangular(v).expect("triangular factor is invertible").norm_squared()
    }

    pub fn density(&self, x: &[f64], y: &[f64]) -> f64 {
        let w = self.mean(x) - Vector::from_column_slice(y);
        (self.log_norm - 0.5 * self.quad_form(&w)).exp()
    }

    /// Gaussian as a function of the mean offset `w = ϑ(x) - y`.
    pub fn density_offset(&self, w: &Vector) -> f64 {
        (self.log_norm - 0.5 * self.quad_form(w)).exp()
    }

    /// Derivative tensor in `x`. Indices run over `x1` (first `j1` slots)
    /// then `x2`, row-major, each of size `d`.
    pub fn eval(&self, x: &[f64], y: &[f64], deriv: Deriv) -> Vec<f64> {
        let w = self.mean(x) - Vector::from_column_slice(y);
        self.eval_offset(&w, deriv)
    }

    pub fn eval_offset(&self, w: &Vector, deriv: Deriv) -> Vec<f64> {
        let d = self.d;
        let p = self.density_offset(w);
        if deriv.order() == 0 {
            return alloc::vec![p];
        }
        let r = &self.parts.r;
        // x-space Hermite data: ũ = Rᵀ K^{-1} w, P̃ = Rᵀ K^{-1} R
        let u = r.transpose() * self.solve(w);
        let kinv_r = {
            let mut m = Mat::zeros(2 * d, 2 * d);
            for j in 0..2 * d {
                let col = self.solve(&r.column(j).into_owned());
                m.set_column(j, &col);
            }
            m
        };
        let pm = r.transpose() * kinv_r;
        let mut idx: Vec<usize> = Vec::new();
        let mut out = Vec::with_capacity(deriv.len(d));
        let total = deriv.len(d);
        for flat in 0..total {
            idx.clear();
            let mut rem = flat;
            let mut digits = alloc::vec![0usize; deriv.order()];
            for slot in (0..deriv.order()).rev() {
                digits[slot] = rem % d;
                rem /= d;
            }
            for (slot, v) in digits.iter().enumerate() {
                idx.push(if slot < deriv.j1 { *v } else { d + *v });
            }
            let val = match idx.len() {
                1 => -u[idx[0]],
                2 => u[idx[0]] * u[idx[1]] - pm[(idx[0], idx[1])],
                _ => {
                    let (a, b, c) = (idx[0], idx[1], idx[2]);
                    -u[a] * u[b] * u[c] + pm[(a, b)] * u[c] + pm[(a, c)] * u[b] + pm[(b, c)] * u[a]
                }
            };
            out.push(val * p);
        }
        out
    }

    /// `sup_y |∇^{j1}_{x1}∇^{j2}_{x2} p̃(s,x;t,y)|` (Euclidean / spectral norm),
    /// in closed form for `(0,0)`, `(1,0)`, `(2,0)`, `(0,1)`.
    pub fn sup_abs(&self, deriv: Deriv) -> Result<f64> {
        let d = self.d;
        let peak = self.peak();
        let half = (-0.5f64).exp();
        // B = K^{-1/2} R E with E selecting the differentiated block
        let block = |first: bool| {
            let mut e = Mat::zeros(2 * d, d);
            for i in 0..d {
                e[(if first { i } else { d + i }, i)] = 1.0;
            }
            let re = &self.parts.r * e;
            let mut b = Mat::zeros(2 * d, d);
            for j in 0..d {
                let col = self.chol_l.solve_lower_triangular(&re.column(j).into_owned()).expect("triangular factor is invertible");
                b.set_column(j, &col);
            }
            b.singular_values().max()
        };
        match (deriv.j1, deriv.j2) {
            (0, 0) => Ok(peak),
            (1, 0) => Ok(peak * block(true) * half),
            (2, 0) => {
                let s = block(true);
                Ok(peak * s * s)
            }
            (0, 1) => Ok(peak * block(false) * half),
            _ => Err(domain(format!("no closed-form supremum for derivative ({},{})", deriv.j1, deriv.j2))),
        }
    }
}

/// Which distinguished freezing point to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proxy {
    /// `p̃0`: frozen at `(s, x)`.
    Backward,
    /// `p̃1`: frozen at `(t, y)`.
    Forward,
}

pub fn proxy_gaussian<M: Model + ?Sized>(model: &M, proxy: Proxy, s: f64, x: &PhasePoint, t: f64, y: &PhasePoint) -> Result<FrozenGaussian> {
    match proxy {
        Proxy::Backward => FrozenGaussian::new(model, s, x, s, t),
        Proxy::Forward => FrozenGaussian::new(model, t, y, s, t),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn frozen_density<M: Model + ?Sized>(
    model: &M,
    tau: f64,
    xi: &PhasePoint,
    s: f64,
    x: &PhasePoint,
    t: f64,
    y: &PhasePoint,
    deriv: Deriv,
) -> Result<Vec<f64>> {
    check_freezing(model, x)?;
    check_freezing(model, y)?;
    Ok(FrozenGaussian::new(model, tau, xi, s, t)?.eval(&x.to_vec(), &y.to_vec(), deriv))
}

/// `p̃0` or `p̃1` and their derivatives.
pub fn proxy_density<M: Model + ?Sized>(model: &M, proxy: Proxy, s: f64, x: &PhasePoint, t: f64, y: &PhasePoint, deriv: Deriv) -> Result<Vec<f64>> {
    check_freezing(model, x)?;
    check_freezing(model, y)?;
    Ok(proxy_gaussian(model, proxy, s, x, t, y)?.eval(&x.to_vec(), &y.to_vec(), deriv))
}

/// `(min, max)` over probes of `⟨K^{-1}v, v⟩ / |T^{-1}_{t-s} v|²`.
pub fn gram_equivalence<M: Model + ?Sized>(model: &M, tau: f64, xi: &PhasePoint, s: f64, t: f64, probes: &[PhasePoint]) -> Result<(f64, f64)> {
    let g = FrozenGaussian::new(model, tau, xi, s, t)?;
    let sp = ScaleParams::new(t - s, model.dim())?;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for p in probes {
        let v = p.to_vec();
        let den = sp.inverse_norm(&v);
        if den == 0.0 {
            return Err(domain("gram equivalence probes must be non-zero"));
        }
        let q = g.quad_form(&Vector::from_column_slice(&v)) / (den * den);
        lo = lo.min(q);
        hi = hi.max(q);
    }
    Ok((lo, hi))
}

/// `|∇^j (p̃1 - p̃0)| / ((t-s)^{(γ - j1 - 3 j2)/2} p̂_λ(s,x;t,y))`.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_gap<M: Model + ?Sized>(model: &M, s: f64, x: &PhasePoint, t: f64, y: &PhasePoint, deriv: Deriv, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    let g1 = proxy_gaussian(model, Proxy::Forward, s, x, t, y)?;
    let g0 = proxy_gaussian(model, Proxy::Backward, s, x, t, y)?;
    let (xv, yv) = (x.to_vec(), y.to_vec());
    let a = g1.eval(&xv, &yv, deriv);
    let b = g0.eval(&xv, &yv, deriv);
    let diff = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    let sp = ScaleParams::new(t - s, model.dim())?;
    let theta: Vec<f64> = g0.parts.theta_t.iter().zip(&yv).map(|(a, b)| a - b).collect();
    let gamma = model.budget().gamma;
    let norm = (t - s).powf((gamma - deriv.j1 as f64 - 3.0 * deriv.j2 as f64) / 2.0) * gauss_g_slice(lambda, &sp, &theta);
    if norm == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(diff / norm)
}
