//! Parametrix expansion of the transition density.
//!
//! `p = p̃1 + Σ_j p̃1 ⊗ H^{⊗j}` is evaluated through the forward recursion
//! `Ψ0(u,w) = p̃1(s,x;u,w)`, `Ψj(r,z) = ∫_s^r ∫ Ψ_{j-1}(u,w) H(u,w;r,z) dw du`,
//! `term_j = Ψj(t,y)`. Intermediate levels are tabulated on a grid whitened
//! by a Gaussian frozen at `(s,x)` and interpolated (cubic in space and in
//! `ν = ((u-s)/(t-s))^{γ/2}`).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::coefficients::Model;
use crate::error::{domain, numeric, Error, Result};
use crate::exec::{Executor, Serial};
use crate::flow::flow_point;
use crate::frozen::{proxy_gaussian, sweep, sweep_options, Anchor, Deriv, FrozenGaussian, FrozenParts, Proxy, Sweep};
use crate::geometry::{gauss_g_slice, PhasePoint, ScaleParams};
use crate::linalg::Mat;
use crate::ode::OdeOptions;
use crate::quadrature::singular_end_rule;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec {
    /// Gauss nodes on each half of a time interval.
    pub time_nodes: usize,
    /// Substitution power at both time ends; `None` uses `2/γ`.
    pub time_power: Option<f64>,
    /// Spatial half-width in standard deviations.
    pub half_width: f64,
    /// Spatial nodes per dimension.
    pub space_nodes: usize,
    /// Time levels of the interpolation tables.
    pub master_times: usize,
    /// Table nodes per dimension.
    pub master_nodes: usize,
    /// Relative tolerance for refinement in [`convolve`].
    pub tolerance: f64,
    pub max_refinements: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            time_nodes: 8,
            time_power: None,
            half_width: 6.0,
            space_nodes: 21,
            master_times: 10,
            master_nodes: 21,
            tolerance: 1e-6,
            max_refinements: 2,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("time_nodes", self.time_nodes),
            ("space_nodes", self.space_nodes),
            ("master_times", self.master_times),
            ("master_nodes", self.master_nodes),
        ] {
            if v < 4 {
                return Err(domain(format!("{name} must be at least 4, got {v}")));
            }
        }
        if !(self.half_width >= 4.0) || !self.half_width.is_finite() {
            return Err(domain(format!("half_width must be at least 4, got {}", self.half_width)));
        }
        if !(self.tolerance > 0.0) {
            return Err(domain(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if let Some(p) = self.time_power {
            if !(p > 0.0) || !p.is_finite() {
                return Err(domain(format!("time_power must be positive, got {p}")));
            }
        }
        Ok(())
    }

    fn refined(&self) -> Self {
        QuadratureSpec {
            time_nodes: self.time_nodes * 3 / 2,
            space_nodes: self.space_nodes * 3 / 2 + 1,
            half_width: self.half_width + 1.0,
            ..self.clone()
        }
    }

    fn alpha(&self, gamma: f64) -> f64 {
        match self.time_power {
            Some(p) => 1.0 / p,
            None => gamma / 2.0,
        }
    }
}

/// Rule on `[a, b]` split at the midpoint, with `r - a = h v^{1/α_a}` on the
/// left half and `b - r = h v^{1/α_b}` on the right.
pub fn two_sided_rule(n: usize, a: f64, b: f64, alpha_a: f64, alpha_b: f64) -> (Vec<f64>, Vec<f64>) {
    let m = 0.5 * (a + b);
    let (l, lw) = singular_end_rule(n, a, m, alpha_a);
    let (r, rw) = singular_end_rule(n, m, b, alpha_b);
    let mut nodes: Vec<f64> = l.iter().map(|v| a + m - v).collect();
    let mut weights = lw;
    nodes.extend(r);
    weights.extend(rw);
    (nodes, weights)
}

fn trapezoid(n: usize, half_width: f64) -> (Vec<f64>, Vec<f64>) {
    let h = 2.0 * half_width / (n - 1) as f64;
    let nodes = (0..n).map(|i| -half_width + i as f64 * h).collect();
    let weights = (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect();
    (nodes, weights)
}

/// Cubic Lagrange stencil start and weights at fractional index `pos`
/// on `n ≥ 4` nodes (extrapolates outside `[0, n-1]`).
fn lagrange4(pos: f64, n: usize) -> (usize, [f64; 4]) {
    let start = ((pos.floor() as isize) - 1).clamp(0, n as isize - 4) as usize;
    let tau = pos - start as f64;
    let mut w = [1.0; 4];
    for (i, wi) in w.iter_mut().enumerate() {
        for j in 0..4 {
            if i != j {
                *wi *= (tau - j as f64) / (i as f64 - j as f64);
            }
        }
    }
    (start, w)
}

fn row_major(m: &Mat) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut v = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            v.push(m[(i, j)]);
        }
    }
    v
}

fn inverse_of(g: &FrozenGaussian) -> Mat {
    let n = 2 * g.d;
    let mut m = Mat::zeros(n, n);
    for j in 0..n {
        let mut e = crate::linalg::Vector::zeros(n);
        e[j] = 1.0;
        m.set_column(j, &g.solve(&e));
    }
    m
}

/// `H(u,·;r,z)` restricted to a fixed time `u`: the frozen Gaussian of
/// `[u, r]` and the coefficients along the frozen flow at `u`.
struct HSlice {
    d: usize,
    u: f64,
    r: Vec<f64>,
    c: Vec<f64>,
    z: Vec<f64>,
    kinv: Vec<f64>,
    ptilde: Vec<f64>,
    log_norm: f64,
    theta: Vec<f64>,
    a_theta: Vec<f64>,
    f1_theta: Vec<f64>,
    f2_theta: Vec<f64>,
    grad_theta: Vec<f64>,
}

struct HScratch {
    off: Vec<f64>,
    v: Vec<f64>,
    ut: Vec<f64>,
    sig: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
}

impl HScratch {
    fn new(d: usize) -> Self {
        HScratch {
            off: alloc::vec![0.0; 2 * d],
            v: alloc::vec![0.0; 2 * d],
            ut: alloc::vec![0.0; 2 * d],
            sig: alloc::vec![0.0; d * d],
            f1: alloc::vec![0.0; d],
            f2: alloc::vec![0.0; d],
        }
    }
}

fn half_sigma_sq(d: usize, sig: &[f64], out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = 0.5 * (0..d).map(|k| sig[i * d + k] * sig[j * d + k]).sum::<f64>();
        }
    }
}

impl HSlice {
    fn new<M: Model + ?Sized>(model: &M, parts: &FrozenParts, z: &[f64]) -> Result<Self> {
        let d = model.dim();
        let u = parts.s;
        let gauss = FrozenGaussian::from_parts(d, parts.clone())?;
        let kinv_m = inverse_of(&gauss);
        let ptilde_m = parts.r.transpose() * &kinv_m * &parts.r;
        let theta = parts.theta_s.clone();
        let mut sig = alloc::vec![0.0; d * d];
        model.sigma(u, &theta, &mut sig);
        let mut a_theta = alloc::vec![0.0; d * d];
        half_sigma_sq(d, &sig, &mut a_theta);
        let mut f1_theta = alloc::vec![0.0; d];
        let mut f2_theta = alloc::vec![0.0; d];
        let mut grad_theta = alloc::vec![0.0; d * d];
        model.f1(u, &theta, &mut f1_theta);
        model.f2(u, &theta, &mut f2_theta);
        model.grad_x1_f2(u, &theta, &mut grad_theta);
        Ok(HSlice {
            d,
            u,
            r: row_major(&parts.r),
            c: parts.c.as_slice().to_vec(),
            z: z.to_vec(),
            kinv: row_major(&kinv_m),
            ptilde: row_major(&ptilde_m),
            log_norm: gauss.log_normalization(),
            theta,
            a_theta,
            f1_theta,
            f2_theta,
            grad_theta,
        })
    }

    fn eval<M: Model + ?Sized>(&self, model: &M, w: &[f64], sc: &mut HScratch) -> f64 {
        let d = self.d;
        let n = 2 * d;
        for i in 0..n {
            sc.off[i] = (0..n).map(|j| self.r[i * n + j] * w[j]).sum::<f64>() + self.c[i] - self.z[i];
        }
        for i in 0..n {
            sc.v[i] = (0..n).map(|j| self.kinv[i * n + j] * sc.off[j]).sum();
        }
        let q: f64 = sc.off.iter().zip(&sc.v).map(|(a, b)| a * b).sum();
        let p = (self.log_norm - 0.5 * q).exp();
        if p == 0.0 {
            return 0.0;
        }
        for i in 0..n {
            sc.ut[i] = (0..n).map(|j| self.r[j * n + i] * sc.v[j]).sum();
        }
        model.sigma(self.u, w, &mut sc.sig);
        model.f1(self.u, w, &mut sc.f1);
        model.f2(self.u, w, &mut sc.f2);
        let mut h = 0.0;
        for i in 0..d {
            for j in 0..d {
                let aw = 0.5 * (0..d).map(|k| sc.sig[i * d + k] * sc.sig[j * d + k]).sum::<f64>();
                let da = aw - self.a_theta[i * d + j];
                if da != 0.0 {
                    h += da * (sc.ut[i] * sc.ut[j] - self.ptilde[i * n + j]);
                }
            }
        }
        for i in 0..d {
            h -= (sc.f1[i] - self.f1_theta[i]) * sc.ut[i];
            let lin: f64 = (0..d).map(|j| self.grad_theta[i * d + j] * (w[j] - self.theta[j])).sum();
            let taylor = sc.f2[i] - self.f2_theta[i] - lin;
            h -= taylor * sc.ut[d + i];
        }
        h * p
    }
}

/// `H(r,z;t,y)`: the true generator minus the generator frozen at `(t,y)`,
/// applied to `p̃1(·;t,y)` at `(r,z)`.
pub fn kernel_h<M: Model + ?Sized>(model: &M, r: f64, z: &PhasePoint, t: f64, y: &PhasePoint) -> Result<f64> {
    if !(r < t) {
        return Err(domain(format!("kernel_h needs r < t, got r={r}, t={t}")));
    }
    check_point(model, z)?;
    check_point(model, y)?;
    let yv = y.to_vec();
    let sw = sweep(model, Anchor::End, t, &yv, r, &[], &sweep_options())?;
    let hs = HSlice::new(model, &sw.parts_at(r), &yv)?;
    Ok(hs.eval(model, &z.to_vec(), &mut HScratch::new(model.dim())))
}

fn check_point<M: Model + ?Sized>(model: &M, x: &PhasePoint) -> Result<()> {
    if x.dim() != model.dim() {
        return Err(domain(format!("point has dimension {} but model has d={}", x.dim(), model.dim())));
    }
    x.check_finite()
}

/// Quantity carried through the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channels {
    Value,
    /// `∇_{x1}` of the terms with respect to the starting point.
    GradX1,
}

impl Channels {
    fn exponents(&self, d: usize) -> Vec<f64> {
        match self {
            Channels::Value => alloc::vec![0.0],
            Channels::GradX1 => alloc::vec![0.5; d],
        }
    }
}

struct Frame {
    gauss: FrozenGaussian,
    mean: Vec<f64>,
    linv: Vec<f64>,
    scale: Vec<f64>,
}

/// Interpolation tables of `Ψ_j` anchored at `(s, x)` up to `horizon`.
pub struct SeriesEngine<'m, M: Model + ?Sized> {
    model: &'m M,
    d: usize,
    s: f64,
    horizon: f64,
    x: Vec<f64>,
    nu_power: f64,
    alpha: f64,
    reference: Sweep,
    times: Vec<f64>,
    frames: Vec<Frame>,
    grid: Vec<f64>,
    spacing: f64,
    quad: QuadratureSpec,
    channels: Channels,
    exps: Vec<f64>,
    levels: Vec<Vec<f64>>,
}

impl<'m, M: Model + ?Sized> SeriesEngine<'m, M> {
    /// Builds tables for levels `0..levels`.
    pub fn new(
        model: &'m M,
        s: f64,
        x: &PhasePoint,
        horizon: f64,
        levels: usize,
        channels: Channels,
        quad: &QuadratureSpec,
        exec: &dyn Executor,
    ) -> Result<Self> {
        quad.validate()?;
        check_point(model, x)?;
        if !(horizon > s) {
            return Err(domain(format!("need s < t, got s={s}, t={horizon}")));
        }
        let d = model.dim();
        let gamma = model.budget().gamma;
        let nu_power = gamma / 2.0;
        let nm = quad.master_times;
        let times: Vec<f64> =
            (1..=nm).map(|k| s + (horizon - s) * (k as f64 / nm as f64).powf(1.0 / nu_power)).collect();
        let xv = x.to_vec();
        let reference = sweep(model, Anchor::Start, s, &xv, horizon, &times, &sweep_options())?;
        let (grid, _) = trapezoid(quad.master_nodes, quad.half_width);
        let spacing = grid[1] - grid[0];
        let exps = channels.exponents(d);
        let mut eng = SeriesEngine {
            model,
            d,
            s,
            horizon,
            x: xv,
            nu_power,
            alpha: quad.alpha(gamma),
            reference,
            times: times.clone(),
            frames: Vec::new(),
            grid,
            spacing,
            quad: quad.clone(),
            channels,
            exps,
            levels: Vec::new(),
        };
        eng.frames = times.iter().map(|&u| eng.frame(u)).collect::<Result<_>>()?;
        for j in 0..levels {
            let lvl = eng.build_level(j, exec)?;
            eng.levels.push(lvl);
        }
        Ok(eng)
    }

    fn frame(&self, u: f64) -> Result<Frame> {
        let gauss = FrozenGaussian::from_parts(self.d, self.reference.parts_at(u))?;
        let mean = gauss.mean(&self.x).as_slice().to_vec();
        let l = gauss.chol_factor();
        let linv = l.clone().try_inverse().ok_or_else(|| numeric("reference factor is singular"))?;
        let scale = self.exps.iter().map(|e| (u - self.s).powf(-e)).collect();
        Ok(Frame { gauss, linv: row_major(&linv), mean, scale })
    }

    fn npts(&self) -> usize {
        self.quad.master_nodes.pow(2 * self.d as u32)
    }

    fn grid_point(&self, k: usize, flat: usize) -> (Vec<f64>, f64) {
        let n = 2 * self.d;
        let ng = self.quad.master_nodes;
        let mut xi = alloc::vec![0.0; n];
        let mut rem = flat;
        for i in (0..n).rev() {
            xi[i] = self.grid[rem % ng];
            rem /= ng;
        }
        let fr = &self.frames[k];
        let l = fr.gauss.chol_factor();
        let w = (0..n).map(|i| fr.mean[i] + (0..n).map(|j| l[(i, j)] * xi[j]).sum::<f64>()).collect();
        let q: f64 = xi.iter().map(|v| v * v).sum();
        (w, (fr.gauss.log_normalization() - 0.5 * q).exp())
    }

    fn build_level(&self, j: usize, exec: &dyn Executor) -> Result<Vec<f64>> {
        let np = self.npts();
        let nc = self.exps.len();
        let job = |idx: usize| -> Result<Vec<f64>> {
            let k = idx / np;
            let (w, g) = self.grid_point(k, idx % np);
            let u = self.times[k];
            let ch = if j == 0 { self.direct(u, &w)? } else { self.target(j - 1, u, &w)? };
            Ok((0..nc).map(|c| ch[c] * (u - self.s).powf(self.exps[c]) / g).collect())
        };
        let rows = exec.map(self.times.len() * np, &job)?;
        Ok(rows.into_iter().flatten().collect())
    }

    /// `Ψ0(u, w)` channels computed from the frozen density.
    fn direct(&self, u: f64, w: &[f64]) -> Result<Vec<f64>> {
        let sw = sweep(self.model, Anchor::End, u, w, self.s, &[], &sweep_options())?;
        let g = FrozenGaussian::from_parts(self.d, sw.parts_at(self.s))?;
        Ok(match self.channels {
            Channels::Value => alloc::vec![g.density(&self.x, w)],
            Channels::GradX1 => g.eval(&self.x, w, Deriv::X1),
        })
    }

    fn nu_weights(&self, u: f64) -> (usize, [f64; 4]) {
        let nu = ((u - self.s) / (self.horizon - self.s)).max(0.0).powf(self.nu_power);
        let nm = self.quad.master_times;
        lagrange4(nu * nm as f64 - 1.0, nm)
    }

    fn interpolate(&self, level: &[f64], fr: &Frame, nw: &(usize, [f64; 4]), w: &[f64], out: &mut [f64], xi: &mut [f64]) -> bool {
        let n = 2 * self.d;
        let ng = self.quad.master_nodes;
        let nc = self.exps.len();
        let np = self.npts();
        let hw = self.quad.half_width;
        let mut q = 0.0;
        for i in 0..n {
            xi[i] = (0..n).map(|j| fr.linv[i * n + j] * (w[j] - fr.mean[j])).sum();
            q += xi[i] * xi[i];
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut stencils: [(usize, [f64; 4]); 8] = [(0, [0.0; 4]); 8];
        for i in 0..n {
            let pos = (xi[i] + hw) / self.spacing;
            if !(pos >= 0.0 && pos <= (ng - 1) as f64) {
                return false;
            }
            stencils[i] = lagrange4(pos, ng);
        }
        let combos = 4usize.pow(n as u32);
        for combo in 0..combos {
            let mut flat = 0usize;
            let mut wt = 1.0;
            let mut rem = combo;
            for st in stencils.iter().take(n) {
                let o = rem % 4;
                rem /= 4;
                flat = flat * ng + st.0 + o;
                wt *= st.1[o];
            }
            for (a, wn) in nw.1.iter().enumerate() {
                let base = ((nw.0 + a) * np + flat) * nc;
                for c in 0..nc {
                    out[c] += wt * wn * level[base + c];
                }
            }
        }
        let g = (fr.gauss.log_normalization() - 0.5 * q).exp();
        for c in 0..nc {
            out[c] *= g * fr.scale[c];
        }
        true
    }

    /// `Ψ_{j+1}(r, z)` channels from the table of level `j`.
    fn target(&self, j: usize, r: f64, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.d;
        let n = 2 * d;
        let nc = self.exps.len();
        let level = &self.levels[j];
        let (us, wus) = two_sided_rule(self.quad.time_nodes, self.s, r, self.alpha, self.alpha);
        let sw = sweep(self.model, Anchor::End, r, z, self.s, &us, &sweep_options())?;
        let (zeta, wz) = trapezoid(self.quad.space_nodes, self.quad.half_width);
        let nz = zeta.len();
        let mut acc = alloc::vec![0.0; nc];
        let mut sc = HScratch::new(d);
        let mut psi = alloc::vec![0.0; nc];
        let mut xi = alloc::vec![0.0; n];
        let mut w = alloc::vec![0.0; n];
        let mut zv = alloc::vec![0.0; n];
        for (&u, &wu) in us.iter().zip(&wus) {
            let hs = HSlice::new(self.model, &sw.parts_at(u), z)?;
            let fr = self.frame(u)?;
            let nw = self.nu_weights(u);
            // bridge: precision Kref^{-1} + P̃, centre from both Gaussians
            let kref_inv = inverse_of(&fr.gauss);
            let ptilde = Mat::from_row_slice(n, n, &hs.ptilde);
            let prec = &kref_inv + &ptilde;
            let zc: Vec<f64> = (0..n).map(|i| z[i] - hs.c[i]).collect();
            let kinv = Mat::from_row_slice(n, n, &hs.kinv);
            let rm = Mat::from_row_slice(n, n, &hs.r);
            let rhs = &kref_inv * crate::linalg::Vector::from_column_slice(&fr.mean)
                + rm.transpose() * (kinv * crate::linalg::Vector::from_column_slice(&zc));
            let ch = prec.cholesky().ok_or_else(|| numeric(format!("bridge precision not positive definite at u={u}")))?;
            let mb = ch.solve(&rhs);
            let lp = ch.l();
            let lt_inv = lp.transpose().try_inverse().ok_or_else(|| numeric("bridge factor is singular"))?;
            let jac = 1.0 / lp.diagonal().iter().product::<f64>();
            let combos = nz.pow(n as u32);
            let mut slice = alloc::vec![0.0; nc];
            for combo in 0..combos {
                let mut rem = combo;
                let mut wt = 1.0;
                for i in (0..n).rev() {
                    let o = rem % nz;
                    rem /= nz;
                    zv[i] = zeta[o];
                    wt *= wz[o];
                }
                for i in 0..n {
                    w[i] = mb[i] + (i..n).map(|k| lt_inv[(i, k)] * zv[k]).sum::<f64>();
                }
                let h = hs.eval(self.model, &w, &mut sc);
                if h == 0.0 {
                    continue;
                }
                if !self.interpolate(level, &fr, &nw, &w, &mut psi, &mut xi) {
                    continue;
                }
                for c in 0..nc {
                    slice[c] += wt * h * psi[c];
                }
            }
            for c in 0..nc {
                acc[c] += wu * jac * slice[c];
            }
        }
        Ok(acc)
    }

    /// Channels of `(term_0, …, term_{levels})` at `(r, z)`, `r ≤ horizon`.
    pub fn terms_at(&self, r: f64, z: &PhasePoint) -> Result<Vec<Vec<f64>>> {
        check_point(self.model, z)?;
        if !(r > self.s) || r > self.horizon {
            return Err(domain(format!("query time {r} outside ({}, {}]", self.s, self.horizon)));
        }
        let zv = z.to_vec();
        let mut out = alloc::vec![self.direct(r, &zv)?];
        for j in 0..self.levels.len() {
            out.push(self.target(j, r, &zv)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesResult {
    pub value: f64,
    pub terms: Vec<f64>,
    /// Gamma-law tail bound with the constant fitted on the computed terms.
    pub remainder: f64,
    pub orders: usize,
    pub warnings: Vec<String>,
}

fn gamma_fn(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Tail `Σ_{j≥N} C^j Γ(γ/2)^j h^{jγ/2} / Γ(1 + jγ/2) |term_0|` with `C` the
/// largest per-order constant consistent with the computed terms.
pub fn gamma_law_remainder(terms: &[f64], gamma: f64, h: f64) -> f64 {
    let n = terms.len();
    if n == 0 || terms[0] == 0.0 {
        return 0.0;
    }
    let t0 = terms[0].abs();
    let g = gamma_fn(gamma / 2.0);
    let unit = |j: usize| g.powi(j as i32) * h.powf(j as f64 * gamma / 2.0) / gamma_fn(1.0 + j as f64 * gamma / 2.0);
    let c = (1..n).map(|j| (terms[j].abs() / t0 / unit(j)).powf(1.0 / j as f64)).fold(0.0f64, f64::max);
    if n == 1 {
        return f64::INFINITY;
    }
    if c == 0.0 {
        return 0.0;
    }
    let mut tail = 0.0;
    for j in n..n + 400 {
        let v = c.powi(j as i32) * unit(j);
        tail += v;
        if v < 1e-17 * tail {
            break;
        }
    }
    tail * t0
}

/// `p̃1(s,x;t,y) + Σ_{j=1}^{N-1} (p̃1 ⊗ H^{⊗j})(s,x;t,y)`.
#[allow(clippy::too_many_arguments)]
pub fn density_series<M: Model + ?Sized>(
    model: &M,
    s: f64,
    x: &PhasePoint,
    t: f64,
    y: &PhasePoint,
    order: usize,
    quad: &QuadratureSpec,
) -> Result<SeriesResult> {
    density_series_with(model, s, x, t, y, order, quad, &Serial)
}

#[allow(clippy::too_many_arguments)]
pub fn density_series_with<M: Model + ?Sized>(
    model: &M,
    s: f64,
    x: &PhasePoint,
    t: f64,
    y: &PhasePoint,
    order: usize,
    quad: &QuadratureSpec,
    exec: &dyn Executor,
) -> Result<SeriesResult> {
    if order == 0 {
        return Err(domain("series order N must be at least 1"));
    }
    if !(t > s) {
        return Err(domain(format!("density_series needs s < t, got s={s}, t={t}")));
    }
    quad.validate()?;
    check_point(model, x)?;
    check_point(model, y)?;
    let mut terms = Vec::with_capacity(order);
    if model.is_frozen_exact() || order == 1 {
        let g = proxy_gaussian(model, Proxy::Forward, s, x, t, y)?;
        terms.push(g.density(&x.to_vec(), &y.to_vec()));
        terms.resize(order, 0.0);
        let remainder = if model.is_frozen_exact() { 0.0 } else { f64::INFINITY };
        return Ok(SeriesResult { value: terms[0], terms, remainder, orders: order, warnings: Vec::new() });
    }
    let eng = SeriesEngine::new(model, s, x, t, order - 1, Channels::Value, quad, exec)?;
    for ch in eng.terms_at(t, y)? {
        terms.push(ch[0]);
    }
    let value = terms.iter().sum();
    let remainder = gamma_law_remainder(&terms, model.budget().gamma, t - s);
    Ok(SeriesResult { value, terms, remainder, orders: order, warnings: Vec::new() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradDirection {
    X1,
    X2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScheme {
    AnalyticLeading,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub value: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Relative step `c` of the anisotropic differences `h1 = c√(t-s)`,
/// `h2 = c(t-s)^{3/2}`.
pub const FD_STEP: f64 = 1e-2;

fn fd_series<M: Model + ?Sized>(
    model: &M,
    s: f64,
    x: &PhasePoint,
    t: f64,
    y: &PhasePoint,
    dir: GradDirection,
    order: usize,
    quad: &QuadratureSpec,
    exec: &dyn Executor,
    skip_leading: bool,
) -> Result<Vec<f64>> {
    let d = model.dim();
    let h = t - s;
    let step = match dir {
        GradDirection::X1 => FD_STEP * h.sqrt(),
        GradDirection::X2 => FD_STEP * h * h.sqrt(),
    };
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let mut vals = [0.0; 2];
        for (k, sign) in [1.0, -1.0].iter().enumerate() {
            let mut v = x.to_vec();
            let idx = match dir {
                GradDirection::X1 => i,
                GradDirection::X2 => d + i,
            };
            v[idx] += sign * step;
            let r = density_series_with(model, s, &PhasePoint::from_slice(&v), t, y, order, quad, exec)?;
            vals[k] = if skip_leading { r.value - r.terms[0] } else { r.value };
        }
        out.push((vals[0] - vals[1]) / (2.0 * step));
    }
    Ok(out)
}

/// Gradient of the order-`N` series in `x1` or `x2`.
#[allow(clippy::too_many_arguments)]
pub fn grad_density<M: Model + ?Sized>(
    model: &M,
    s: f64,
    x: &PhasePoint,
    t: f64,
    y: &PhasePoint,
    direction: GradDirection,
    scheme: GradScheme,
    order: usize,
    quad: &QuadratureSpec,
) -> Result<GradResult> {
    grad_density_with(model, s, x, t, y, direction, scheme, order, quad, &Serial)
}

#[allow(clippy::too_many_arguments)]
pub fn grad_density_with<M: Model + ?Sized>(
    model: &M,
    s: f64,
    x: &PhasePoint,
    t: f64,
    y: &PhasePoint,
    direction: GradDirection,
    scheme: GradScheme,
    order: usize,
    quad: &QuadratureSpec,
    exec: &dyn Executor,
) -> Result<GradResult> {
    if order == 0 {
        return Err(domain("series order N must be at least 1"));
    }
    if !(t > s) {
        return Err(domain(format!("grad_density needs s < t, got s={s}, t={t}")));
    }
    quad.validate()?;
    check_point(model, x)?;
    check_point(model, y)?;
    let mut warnings = Vec::new();
    let fd_noise = quad.tolerance / (2.0 * FD_STEP);
    let exact = model.is_frozen_exact() || order == 1;
    match scheme {
        GradScheme::FiniteDifference => {
            if fd_noise > 1e-2 && !exact {
                warnings.push(format!("difference step {FD_STEP} is coarse relative to quadrature tolerance {:e}", quad.tolerance));
            }
            Ok(GradResult { value: fd_series(model, s, x, t, y, direction, order, quad, exec, false)?, warnings })
        }
        GradScheme::AnalyticLeading => {
            let g = proxy_gaussian(model, Proxy::Forward, s, x, t, y)?;
            let deriv = match direction {
                GradDirection::X1 => Deriv::X1,
                GradDirection::X2 => Deriv::X2,
            };
            let mut value = g.eval(&x.to_vec(), &y.to_vec(), deriv);
            if exact {
                return Ok(GradResult { value, warnings });
            }
            let rest = match direction {
                GradDirection::X1 => {
                    let eng = SeriesEngine::new(model, s, x, t, order - 1, Channels::GradX1, quad, exec)?;
                    let terms = eng.terms_at(t, y)?;
                    let d = model.dim();
                    (0..d).map(|i| terms[1..].iter().map(|c| c[i]).sum()).collect::<Vec<f64>>()
                }
                GradDirection::X2 => {
                    warnings.push(String::from("x2 series terms by central differences"));
                    fd_series(model, s, x, t, y, direction, order, quad, exec, true)?
                }
            };
            value.iter_mut().zip(rest).for_each(|(a, b)| *a += b);
            Ok(GradResult { value, warnings })
        }
    }
}

/// A transition kernel `k(s,x;t,y)` with Gaussian-type concentration.
pub trait Kernel: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, s: f64, x: &[f64], t: f64, y: &[f64]) -> Result<f64>;
    /// `α` with `|k| ≲ (t-s)^{α-1} × Gaussian`.
    fn alpha(&self) -> f64 {
        1.0
    }
    /// Where `k(s,x;r,·)` concentrates.
    fn forward_center(&self, s: f64, x: &[f64], r: f64) -> Result<Vec<f64>>;
    /// Where `k(r,·;t,y)` concentrates.
    fn backward_center(&self, r: f64, t: f64, y: &[f64]) -> Result<Vec<f64>>;
    /// Marginal spread scale `σ²` (variances `σ² h`, `σ² h³/3`).
    fn spread(&self) -> f64 {
        1.0
    }
}

/// Closed-form density of `dX1 = σ dW`, `dX2 = X1 dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KolmogorovKernel {
    pub d: usize,
    pub sigma: f64,
}

impl Kernel for KolmogorovKernel {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval(&self, s: f64, x: &[f64], t: f64, y: &[f64]) -> Result<f64> {
        let h = t - s;
        if !(h > 0.0) {
            return Err(domain(format!("kernel needs s < t, got s={s}, t={t}")));
        }
        let d = self.d;
        let s2 = self.sigma * self.sigma;
        let mut log_p = 0.0;
        for i in 0..d {
            let a = x[i] - y[i];
            let b = x[d + i] + h * x[i] - y[d + i];
            let q = 12.0 / (s2 * h.powi(4)) * (h.powi(3) / 3.0 * a * a - h * h * a * b + h * b * b);
            log_p += (3f64.sqrt() / (core::f64::consts::PI * s2 * h * h)).ln() - 0.5 * q;
        }
        Ok(log_p.exp())
    }
    fn forward_center(&self, s: f64, x: &[f64], r: f64) -> Result<Vec<f64>> {
        let d = self.d;
        Ok((0..2 * d).map(|i| if i < d { x[i] } else { x[i] + (r - s) * x[i - d] }).collect())
    }
    fn backward_center(&self, r: f64, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let d = self.d;
        Ok((0..2 * d).map(|i| if i < d { y[i] } else { y[i] - (t - r) * y[i - d] }).collect())
    }
    fn spread(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// `p̂_λ(s,x;t,y) = g_λ(t-s, θ_{t,s}(x) - y)` along the flow of a model.
pub struct PHatKernel<'m, M: Model + ?Sized> {
    pub model: &'m M,
    pub lambda: f64,
    pub opts: OdeOptions,
}

impl<'m, M: Model + ?Sized> PHatKernel<'m, M> {
    pub fn new(model: &'m M, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(domain(format!("lambda must be positive, got {lambda}")));
        }
        Ok(PHatKernel { model, lambda, opts: OdeOptions::with_tol(1e-10) })
    }
}

impl<'m, M: Model + ?Sized> Kernel for PHatKernel<'m, M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn eval(&self, s: f64, x: &[f64], t: f64, y: &[f64]) -> Result<f64> {
        let sp = ScaleParams::new(t - s, self.model.dim())?;
        let th = flow_point(self.model, s, t, x, &self.opts)?;
        let z: Vec<f64> = th.iter().zip(y).map(|(a, b)| a - b).collect();
        Ok(gauss_g_slice(self.lambda, &sp, &z))
    }
    fn forward_center(&self, s: f64, x: &[f64], r: f64) -> Result<Vec<f64>> {
        flow_point(self.model, s, r, x, &self.opts)
    }
    fn backward_center(&self, r: f64, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        flow_point(self.model, t, r, y, &self.opts)
    }
    fn spread(&self) -> f64 {
        self.lambda
    }
}

/// `∫ a(s,x;r,z) b(r,z;t,y) dz` on a grid centred between the two kernels.
#[allow(clippy::too_many_arguments)]
pub fn space_convolve<A: Kernel + ?Sized, B: Kernel + ?Sized>(
    a: &A,
    b: &B,
    s: f64,
    x: &[f64],
    r: f64,
    t: f64,
    y: &[f64],
    quad: &QuadratureSpec,
) -> Result<f64> {
    if !(s < r && r < t) {
        return Err(domain(format!("need s < r < t, got s={s}, r={r}, t={t}")));
    }
    let d = a.dim();
    let n = 2 * d;
    let ca = a.forward_center(s, x, r)?;
    let cb = b.backward_center(r, t, y)?;
    let (ha, hb) = (r - s, t - r);
    let (va, vb) = (a.spread(), b.spread());
    let var1 = |v: f64, h: f64| v * h;
    let var2 = |v: f64, h: f64| v * h * h * h / 3.0;
    let mut centre = alloc::vec![0.0; n];
    let mut sd = alloc::vec![0.0; n];
    for i in 0..n {
        let (pa, pb) = if i < d { (var1(va, ha), var1(vb, hb)) } else { (var2(va, ha), var2(vb, hb)) };
        centre[i] = (ca[i] * pb + cb[i] * pa) / (pa + pb);
        sd[i] = (pa * pb / (pa + pb)).sqrt();
    }
    let (nodes, weights) = trapezoid(quad.space_nodes, quad.half_width);
    let nz = nodes.len();
    let mut z = alloc::vec![0.0; n];
    let mut total = 0.0;
    for combo in 0..nz.pow(n as u32) {
        let mut rem = combo;
        let mut wt = 1.0;
        for i in (0..n).rev() {
            let o = rem % nz;
            rem /= nz;
            z[i] = centre[i] + sd[i] * nodes[o];
            wt *= weights[o] * sd[i];
        }
        let fa = a.eval(s, x, r, &z)?;
        if fa == 0.0 {
            continue;
        }
        total += wt * fa * b.eval(r, &z, t, y)?;
    }
    Ok(total)
}

fn convolve_once<A: Kernel + ?Sized, B: Kernel + ?Sized>(
    a: &A,
    b: &B,
    s: f64,
    x: &[f64],
    t: f64,
    y: &[f64],
    quad: &QuadratureSpec,
) -> Result<f64> {
    let (rs, ws) = two_sided_rule(quad.time_nodes, s, t, a.alpha(), b.alpha());
    let mut total = 0.0;
    for (r, w) in rs.iter().zip(&ws) {
        total += w * space_convolve(a, b, s, x, *r, t, y, quad)?;
    }
    Ok(total)
}

/// `∫_s^t ∫ a(s,x;r,z) b(r,z;t,y) dz dr`, refined until two successive
/// estimates agree to `quad.tolerance` (relative).
#[allow(clippy::too_many_arguments)]
pub fn convolve<A: Kernel + ?Sized, B: Kernel + ?Sized>(
    a: &A,
    b: &B,
    s: f64,
    x: &[f64],
    t: f64,
    y: &[f64],
    quad: &QuadratureSpec,
) -> Result<f64> {
    quad.validate()?;
    if !(s < t) {
        return Err(domain(format!("convolve needs s < t, got s={s}, t={t}")));
    }
    let mut q = quad.clone();
    let mut prev = convolve_once(a, b, s, x, t, y, &q)?;
    let mut achieved = f64::INFINITY;
    for _ in 0..quad.max_refinements.max(1) {
        q = q.refined();
        let next = convolve_once(a, b, s, x, t, y, &q)?;
        achieved = (next - prev).abs() / next.abs().max(f64::MIN_POSITIVE);
        prev = next;
        if achieved <= quad.tolerance || next == 0.0 {
            return Ok(next);
        }
    }
    Err(Error::Tolerance { estimate: prev, achieved, tolerance: quad.tolerance })
}

/// `max |∫p(s,x;r,z)p(r,z;t,y)dz - p(s,x;t,y)| / p̂_λ(s,x;t,y)` over pairs,
/// with `p` the order-`N` series.
#[allow(clippy::too_many_arguments)]
pub fn ck_residual<M: Model + ?Sized>(
    model: &M,
    s: f64,
    r: f64,
    t: f64,
    pairs: &[(PhasePoint, PhasePoint)],
    lambda: f64,
    order: usize,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if !(s < r && r < t) {
        return Err(domain(format!("need s < r < t, got s={s}, r={r}, t={t}")));
    }
    quad.validate()?;
    let phat = PHatKernel::new(model, lambda)?;
    let mut worst = 0.0f64;
    for (x, y) in pairs {
        check_point(model, x)?;
        check_point(model, y)?;
        let first = SeriesKernel { model, order, quad: quad.clone(), s, x: x.to_vec(), engine: None };
        let first = first.prepared(r)?;
        let second = SeriesKernel { model, order, quad: quad.clone(), s: r, x: Vec::new(), engine: None };
        let conv = space_convolve(&first, &second, s, &x.to_vec(), r, t, &y.to_vec(), quad)?;
        let direct = density_series(model, s, x, t, y, order, quad)?.value;
        let norm = phat.eval(s, &x.to_vec(), t, &y.to_vec())?;
        let res = (conv - direct).abs() / norm;
        worst = worst.max(res);
    }
    Ok(worst)
}

/// The order-`N` series as a [`Kernel`]; with a prepared engine the
/// starting point is fixed and evaluations reuse its tables.
struct SeriesKernel<'m, M: Model + ?Sized> {
    model: &'m M,
    order: usize,
    quad: QuadratureSpec,
    s: f64,
    x: Vec<f64>,
    engine: Option<SeriesEngine<'m, M>>,
}

impl<'m, M: Model + ?Sized> SeriesKernel<'m, M> {
    fn prepared(mut self, horizon: f64) -> Result<Self> {
        if self.order > 1 && !self.model.is_frozen_exact() {
            let x = PhasePoint::from_slice(&self.x);
            self.engine = Some(SeriesEngine::new(self.model, self.s, &x, horizon, self.order - 1, Channels::Value, &self.quad, &Serial)?);
        }
        Ok(self)
    }
}

impl<'m, M: Model + ?Sized> Kernel for SeriesKernel<'m, M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn eval(&self, s: f64, x: &[f64], t: f64, y: &[f64]) -> Result<f64> {
        let yp = PhasePoint::from_slice(y);
        match &self.engine {
            Some(e) if s == self.s && x == self.x.as_slice() => Ok(e.terms_at(t, &yp)?.iter().map(|c| c[0]).sum()),
            _ => Ok(density_series(self.model, s, &PhasePoint::from_slice(x), t, &yp, self.order, &self.quad)?.value),
        }
    }
    fn forward_center(&self, s: f64, x: &[f64], r: f64) -> Result<Vec<f64>> {
        flow_point(self.model, s, r, x, &OdeOptions::default())
    }
    fn backward_center(&self, r: f64, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        flow_point(self.model, t, r, y, &OdeOptions::default())
    }
    fn spread(&self) -> f64 {
        let b = self.model.budget();
        b.kappa0
    }
}

/// Empirical constants of the Gaussian reproduction bound
/// `C⁻¹ p̂_{λ/κ} ≤ p̂_λ ⊗_z p̂_λ ≤ C p̂_{κλ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sandwich {
    pub c: f64,
    pub kappa: f64,
}

/// Fits `(C, κ)` over points `(x, y, r)` on `[s, t]`; `κ` is chosen from a
/// fixed ladder to minimise `C`.
pub fn reproduction_sandwich<M: Model + ?Sized>(
    model: &M,
    lambda: f64,
    s: f64,
    t: f64,
    points: &[(PhasePoint, PhasePoint, f64)],
    quad: &QuadratureSpec,
) -> Result<Sandwich> {
    quad.validate()?;
    let k = PHatKernel::new(model, lambda)?;
    let mut samples = Vec::with_capacity(points.len());
    for (x, y, r) in points {
        check_point(model, x)?;
        check_point(model, y)?;
        let (xv, yv) = (x.to_vec(), y.to_vec());
        let conv = space_convolve(&k, &k, s, &xv, *r, t, &yv, quad)?;
        let sp = ScaleParams::new(t - s, model.dim())?;
        let th = flow_point(model, s, t, &xv, &k.opts)?;
        let z: Vec<f64> = th.iter().zip(&yv).map(|(a, b)| a - b).collect();
        samples.push((conv, sp, z));
    }
    let mut best = Sandwich { c: f64::INFINITY, kappa: 1.0 };
    for kappa in [1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 16.0] {
        let mut c = 1.0f64;
        for (conv, sp, z) in &samples {
            let upper = gauss_g_slice(kappa * lambda, sp, z);
            let lower = gauss_g_slice(lambda / kappa, sp, z);
            c = c.max(conv / upper).max(lower / conv);
        }
        if c < best.c {
            best = Sandwich { c, kappa };
        }
    }
    if !best.c.is_finite() {
        return Err(numeric("reproduction bound is not finite on the grid"));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CustomModel, Holder, Kolmogorov};
    use crate::frozen::{frozen_density, Deriv};
    use crate::ode::integrate;
    use core::f64::consts::PI;

    fn pt(v: &[f64]) -> PhasePoint {
        PhasePoint::from_slice(v)
    }

    fn coarse() -> QuadratureSpec {
        QuadratureSpec { time_nodes: 6, space_nodes: 15, master_times: 8, master_nodes: 15, ..QuadratureSpec::default() }
    }

    #[test]
    fn interpolation_and_rules() {
        let f = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x - 0.1 * x * x * x;
        let nodes: Vec<f64> = (0..9).map(|i| f(i as f64)).collect();
        for pos in [-0.7, 0.0, 2.3, 4.5, 7.99, 8.4] {
            let (st, w) = lagrange4(pos, 9);
            let v: f64 = (0..4).map(|k| w[k] * nodes[st + k]).sum();
            assert!((v - f(pos)).abs() < 1e-10, "{pos}");
        }
        // ∫_0^1 r^{-1/2}(1-r)^{-1/2} dr = π
        let (r, w) = two_sided_rule(10, 0.0, 1.0, 0.5, 0.5);
        let q: f64 = r.iter().zip(&w).map(|(r, w)| w / (r * (1.0 - r)).sqrt()).sum();
        assert!((q - PI).abs() < 1e-10, "{q}");
    }

    #[test]
    fn kolmogorov_series_is_exact() {
        let m = Kolmogorov::new(1);
        let o = pt(&[0.0, 0.0]);
        for n in 1..=5 {
            let r = density_series(&m, 0.0, &o, 1.0, &o, n, &QuadratureSpec::default()).unwrap();
            assert!((r.value - 3f64.sqrt() / PI).abs() < 1e-12);
            assert_eq!(r.terms.len(), n);
            assert_eq!(r.remainder, 0.0);
        }
        let z = pt(&[0.3, -0.4]);
        assert_eq!(kernel_h(&m, 0.2, &z, 1.0, &o).unwrap(), 0.0);
        assert!(density_series(&m, 0.0, &o, 1.0, &o, 0, &QuadratureSpec::default()).is_err());
        assert!(density_series(&m, 1.0, &o, 1.0, &o, 1, &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(QuadratureSpec::default().validate().is_ok());
        assert!(QuadratureSpec { time_nodes: 3, ..QuadratureSpec::default() }.validate().is_err());
        assert!(QuadratureSpec { half_width: 3.0, ..QuadratureSpec::default() }.validate().is_err());
        assert!(QuadratureSpec { time_power: Some(0.0), ..QuadratureSpec::default() }.validate().is_err());
    }

    #[test]
    fn kernel_reassembly() {
        let m = Holder::new(1, 0.5);
        let (r, t) = (0.3, 0.8);
        let y = pt(&[0.4, -0.2]);
        let theta = integrate(|u, z, o| m.drift(u, z, o), t, &y.to_vec(), r, &[], &OdeOptions::default()).unwrap().last().to_vec();
        // vanishes at the frozen point
        assert!(kernel_h(&m, r, &pt(&theta), t, &y).unwrap().abs() < 1e-10);
        let z = [theta[0] + 0.3, theta[1] - 0.1];
        let zp = pt(&z);
        let d2 = frozen_density(&m, t, &y, r, &zp, t, &y, Deriv::X1X1).unwrap()[0];
        let d1 = frozen_density(&m, t, &y, r, &zp, t, &y, Deriv::X1).unwrap()[0];
        let dx2 = frozen_density(&m, t, &y, r, &zp, t, &y, Deriv::X2).unwrap()[0];
        let ev = |f: &dyn Fn(&[f64], &mut [f64]), x: &[f64]| {
            let mut o = [0.0];
            f(x, &mut o);
            o[0]
        };
        let sig = |x: &[f64], o: &mut [f64]| m.sigma(r, x, o);
        let f1 = |x: &[f64], o: &mut [f64]| m.f1(r, x, o);
        let f2 = |x: &[f64], o: &mut [f64]| m.f2(r, x, o);
        let da = 0.5 * (ev(&sig, &z).powi(2) - ev(&sig, &theta).powi(2));
        let df1 = ev(&f1, &z) - ev(&f1, &theta);
        let taylor = ev(&f2, &z) - ev(&f2, &theta) - (z[0] - theta[0]);
        let want = da * d2 + df1 * d1 + taylor * dx2;
        let got = kernel_h(&m, r, &zp, t, &y).unwrap();
        assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} {want}");
    }

    fn linear_model() -> CustomModel {
        CustomModel::new(1)
            .with_f1(|_t, x, o| o[0] = -x[0])
            .with_f2(|_t, x, o| o[0] = x[0])
            .with_sigma(|_t, _x, o| o[0] = 1.0)
            .with_grad_x1_f2(|_t, _x, o| o[0] = 1.0)
    }

    /// Exact Gaussian density of `dX1 = -X1 dt + dW`, `dX2 = X1 dt`.
    fn linear_exact(h: f64, x: [f64; 2], y: [f64; 2]) -> f64 {
        let f = |_t: f64, z: &[f64], o: &mut [f64]| {
            o[0] = -z[0];
            o[1] = z[0];
            o[2] = -2.0 * z[2] + 1.0;
            o[3] = -z[3] + z[2];
            o[4] = 2.0 * z[3];
        };
        let tr = integrate(f, 0.0, &[x[0], x[1], 0.0, 0.0, 0.0], h, &[], &OdeOptions::with_tol(1e-13)).unwrap();
        let z = tr.last();
        let det = z[2] * z[4] - z[3] * z[3];
        let (e1, e2) = (y[0] - z[0], y[1] - z[1]);
        let q = (z[4] * e1 * e1 - 2.0 * z[3] * e1 * e2 + z[2] * e2 * e2) / det;
        (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
    }

    #[test]
    fn series_converges_to_linear_density() {
        let m = linear_model();
        let (x, y) = ([0.5, 0.0], [0.2, 0.3]);
        let exact = linear_exact(0.5, x, y);
        let r = density_series(&m, 0.0, &pt(&x), 0.5, &pt(&y), 3, &coarse()).unwrap();
        let mut partial = 0.0;
        let mut errs = Vec::new();
        for t in &r.terms {
            partial += t;
            errs.push((partial - exact).abs() / exact);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 0.02, "{errs:?}");
        assert!((r.value - r.terms.iter().sum::<f64>()).abs() < 1e-15);
        assert!(r.remainder >= 0.0 && r.remainder.is_finite());
    }

    #[test]
    fn holder_density_is_a_density() {
        let m = Holder::new(1, 0.5);
        let x = pt(&[0.2, -0.1]);
        let h = 0.5;
        let q = coarse();
        let eng = SeriesEngine::new(&m, 0.0, &x, h, 2, Channels::Value, &q, &Serial).unwrap();
        let centre = flow_point(&m, 0.0, h, &x.to_vec(), &OdeOptions::default()).unwrap();
        let (s1, s2) = (h.sqrt(), 1.5 * h * h.sqrt());
        let n = 41;
        let hw = 7.0;
        let step = 2.0 * hw / (n - 1) as f64;
        let mut mass = [0.0; 3];
        for i in 0..n {
            for j in 0..n {
                let y = pt(&[centre[0] + (-hw + i as f64 * step) * s1, centre[1] + (-hw + j as f64 * step) * s2]);
                let v = eng.terms_at(h, &y).unwrap();
                let total: f64 = v.iter().map(|c| c[0]).sum();
                assert!(total > -1e-3, "negative density {total}");
                for k in 0..3 {
                    mass[k] += v[k][0] * step * step * s1 * s2;
                }
            }
        }
        // the proxy frozen at the endpoint is not normalized; partial sums approach 1
        let e0 = (mass[0] - 1.0).abs();
        let e1 = (mass[0] + mass[1] - 1.0).abs();
        let e2 = (mass[0] + mass[1] + mass[2] - 1.0).abs();
        assert!(e0 > e1 && e1 > e2 && e2 < 0.03, "{mass:?}");
    }

    #[test]
    fn gradient_schemes_agree() {
        let m = Holder::new(1, 0.5);
        let x = pt(&[0.3, 0.1]);
        let y = pt(&[0.5, 0.4]);
        let q = coarse();
        let a = grad_density(&m, 0.0, &x, 0.5, &y, GradDirection::X1, GradScheme::AnalyticLeading, 2, &q).unwrap();
        let f = grad_density(&m, 0.0, &x, 0.5, &y, GradDirection::X1, GradScheme::FiniteDifference, 2, &q).unwrap();
        assert!((a.value[0] - f.value[0]).abs() < 1e-2 * a.value[0].abs(), "{:?} {:?}", a.value, f.value);
        let k = Kolmogorov::new(1);
        let o = pt(&[0.0, 0.0]);
        let centre = pt(&[0.0, 0.0]);
        for dir in [GradDirection::X1, GradDirection::X2] {
            let g = grad_density(&k, 0.0, &o, 1.0, &centre, dir, GradScheme::AnalyticLeading, 3, &q).unwrap();
            assert!(g.value[0].abs() < 1e-14);
        }
    }

    #[test]
    fn kolmogorov_chapman_kolmogorov() {
        let k = KolmogorovKernel { d: 1, sigma: 1.0 };
        let q = QuadratureSpec { space_nodes: 41, ..QuadratureSpec::default() };
        for (x, y, r) in [([0.0, 0.0], [0.0, 0.0], 0.5), ([0.3, -0.2], [1.0, 0.5], 0.2), ([-1.0, 0.4], [0.5, -0.3], 0.9)] {
            let c = space_convolve(&k, &k, 0.0, &x, r, 1.0, &y, &q).unwrap();
            let e = k.eval(0.0, &x, 1.0, &y).unwrap();
            assert!((c - e).abs() < 1e-6 * e, "{c} {e}");
        }
        assert!((k.eval(0.0, &[0.0, 0.0], 1.0, &[0.0, 0.0]).unwrap() - 3f64.sqrt() / PI).abs() < 1e-15);
        // time integral of a constant-in-r convolution
        let full = convolve(&k, &k, 0.0, &[0.1, 0.0], 1.0, &[0.0, 0.2], &q).unwrap();
        let e = k.eval(0.0, &[0.1, 0.0], 1.0, &[0.0, 0.2]).unwrap();
        assert!((full - e).abs() < 1e-6 * e);
    }

    struct Zero;
    impl Kernel for Zero {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, _s: f64, _x: &[f64], _t: f64, _y: &[f64]) -> Result<f64> {
            Ok(0.0)
        }
        fn forward_center(&self, _s: f64, x: &[f64], _r: f64) -> Result<Vec<f64>> {
            Ok(x.to_vec())
        }
        fn backward_center(&self, _r: f64, _t: f64, y: &[f64]) -> Result<Vec<f64>> {
            Ok(y.to_vec())
        }
    }

    #[test]
    fn zero_kernel_convolves_to_zero() {
        let k = KolmogorovKernel { d: 1, sigma: 1.0 };
        let q = QuadratureSpec::default();
        assert_eq!(convolve(&k, &Zero, 0.0, &[0.0, 0.0], 1.0, &[0.0, 0.0], &q).unwrap(), 0.0);
    }

    #[test]
    fn residuals() {
        let k = Kolmogorov::new(1);
        let pairs = [(pt(&[0.0, 0.0]), pt(&[0.2, 0.1])), (pt(&[0.5, 0.0]), pt(&[0.5, 0.5]))];
        let q = QuadratureSpec { space_nodes: 41, ..QuadratureSpec::default() };
        let r = ck_residual(&k, 0.0, 0.4, 1.0, &pairs, 1.0, 2, &q).unwrap();
        assert!(r < 1e-6, "{r}");
        let lin = linear_model();
        let one = [(pt(&[0.5, 0.0]), pt(&[0.2, 0.3]))];
        let q = coarse();
        let r1 = ck_residual(&lin, 0.0, 0.25, 0.5, &one, 1.0, 1, &q).unwrap();
        let r2 = ck_residual(&lin, 0.0, 0.25, 0.5, &one, 1.0, 2, &q).unwrap();
        assert!(r2 < 0.5 * r1, "{r1} {r2}");
    }

    #[test]
    fn remainder_law() {
        assert_eq!(gamma_law_remainder(&[1.0, 0.0, 0.0], 0.5, 0.5), 0.0);
        assert!(gamma_law_remainder(&[1.0], 0.5, 0.5).is_infinite());
        let a = gamma_law_remainder(&[1.0, 0.1, 0.01], 0.5, 0.5);
        let b = gamma_law_remainder(&[1.0, 0.2, 0.01], 0.5, 0.5);
        assert!(a > 0.0 && b > a);
    }

    #[test]
    fn sandwich_is_finite() {
        let m = Kolmogorov::new(1);
        let mut pts = Vec::new();
        for x1 in [-0.5, 0.0, 0.5] {
            for y2 in [-0.5, 0.0, 0.5] {
                pts.push((pt(&[x1, 0.0]), pt(&[0.0, y2]), 0.5));
            }
        }
        let sw = reproduction_sandwich(&m, 1.0, 0.0, 1.0, &pts, &QuadratureSpec::default()).unwrap();
        assert!(sw.c.is_finite() && sw.c >= 1.0 && sw.kappa >= 1.0);
    }
}
