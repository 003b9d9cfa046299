//! Path simulation of `dX1 = F1 dt + σ dW`, `dX2 = F2 dt`.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::rng::PathRng;
use crate::coefficients::Model;
use crate::error::{domain, Result};
use crate::exec::{Executor, Serial};
use crate::frozen::frozen_parts;
use crate::geometry::PhasePoint;
use crate::linalg::Mat;

/// Paths handled by one work item; fixed so results do not depend on the
/// number of workers.
pub const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    /// Each step draws from the Gaussian of the dynamics frozen at the
    /// current state.
    ExactLinearSubstep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub nsteps: usize,
    pub npaths: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nsteps == 0 {
            return Err(domain("nsteps must be at least 1"));
        }
        if self.npaths == 0 {
            return Err(domain("npaths must be at least 1"));
        }
        Ok(())
    }

    /// Euler step count giving steps of about `(t−s)/400`.
    pub fn default_steps(span: f64) -> usize {
        (400.0 * span).ceil().max(1.0) as usize
    }
}

/// Terminal states of a simulation, path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub d: usize,
    pub seed: u64,
    pub steps: usize,
    pub span: f64,
    /// `npaths_kept × 2d` values.
    pub samples: Vec<f64>,
    /// Paths dropped because their state became non-finite.
    pub flagged: usize,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.samples.len() / (2 * self.d)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        &self.samples[2 * self.d * i..2 * self.d * (i + 1)]
    }

    /// Componentwise sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = 2 * self.d;
        let mut m = vec![0.0; n];
        for p in self.samples.chunks(n) {
            m.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        let k = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= k);
        m
    }

    /// Unbiased sample covariance, row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let n = 2 * self.d;
        let m = self.mean();
        let mut c = vec![0.0; n * n];
        for p in self.samples.chunks(n) {
            for i in 0..n {
                for j in 0..n {
                    c[i * n + j] += (p[i] - m[i]) * (p[j] - m[j]);
                }
            }
        }
        let k = (self.len().max(2) - 1) as f64;
        c.iter_mut().for_each(|v| *v /= k);
        c
    }
}

pub fn simulate<M: Model + ?Sized>(model: &M, s: f64, x: &PhasePoint, t: f64, cfg: &SimConfig) -> Result<SampleBatch> {
    simulate_with(model, s, x, t, cfg, &Serial)
}

pub fn simulate_with<M: Model + ?Sized>(model: &M, s: f64, x: &PhasePoint, t: f64, cfg: &SimConfig, exec: &dyn Executor) -> Result<SampleBatch> {
    cfg.validate()?;
    if !(t > s) {
        return Err(domain(format!("simulation needs s < t, got s={s}, t={t}")));
    }
    let d = model.dim();
    if x.dim() != d {
        return Err(domain(format!("point has dimension {} but model has d={d}", x.dim())));
    }
    x.check_finite()?;
    let n = 2 * d;
    let x0 = x.to_vec();
    let h = (t - s) / cfg.nsteps as f64;
    let times: Vec<f64> = (0..=cfg.nsteps).map(|k| if k == cfg.nsteps { t } else { s + k as f64 * h }).collect();
    // affine models share one transition per step
    let shared = if cfg.scheme == Scheme::ExactLinearSubstep && model.is_frozen_exact() {
        let mut steps = Vec::with_capacity(cfg.nsteps);
        for k in 0..cfg.nsteps {
            steps.push(Transition::new(model, times[k], &x0, times[k + 1])?);
        }
        Some(steps)
    } else {
        None
    };
    let chunks = cfg.npaths.div_ceil(CHUNK);
    let work = |c: usize| -> Result<Vec<f64>> {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(cfg.npaths);
        let mut out = Vec::with_capacity((hi - lo) * n);
        let mut z = vec![0.0; n];
        let mut state = vec![0.0; n];
        let mut drift = vec![0.0; n];
        let mut sig = vec![0.0; d * d];
        for p in lo..hi {
            let mut rng = PathRng::new(cfg.seed, p as u64, n);
            state.copy_from_slice(&x0);
            let mut ok = true;
            for k in 0..cfg.nsteps {
                rng.normals(k as u64, &mut z);
                match cfg.scheme {
                    Scheme::Euler => {
                        let (r, dt) = (times[k], times[k + 1] - times[k]);
                        model.drift(r, &state, &mut drift);
                        model.sigma(r, &state, &mut sig);
                        let sq = dt.sqrt();
                        for i in 0..d {
                            let noise: f64 = (0..d).map(|j| sig[i * d + j] * z[j]).sum();
                            state[i] += drift[i] * dt + sq * noise;
                        }
                        for i in 0..d {
                            state[d + i] += drift[d + i] * dt;
                        }
                    }
                    Scheme::ExactLinearSubstep => {
                        let next = match &shared {
                            Some(steps) => steps[k].apply(&state, &z),
                            None => match Transition::new(model, times[k], &state, times[k + 1]) {
                                Ok(tr) => tr.apply(&state, &z),
                                Err(_) => {
                                    ok = false;
                                    break;
                                }
                            },
                        };
                        state.copy_from_slice(&next);
                    }
                }
                if state.iter().any(|v| !v.is_finite()) {
                    ok = false;
                    break;
                }
            }
            if ok {
                out.extend_from_slice(&state);
            } else {
                out.extend(core::iter::repeat_n(f64::NAN, n));
            }
        }
        Ok(out)
    };
    let parts = exec.map(chunks, &work)?;
    let mut samples = Vec::with_capacity(cfg.npaths * n);
    let mut flagged = 0;
    for part in parts {
        for row in part.chunks(n) {
            if row.iter().all(|v| v.is_finite()) {
                samples.extend_from_slice(row);
            } else {
                flagged += 1;
            }
        }
    }
    Ok(SampleBatch { d, seed: cfg.seed, steps: cfg.nsteps, span: t - s, samples, flagged })
}

/// One step `X ↦ R X + c + L Z` of the dynamics frozen at `(r, ξ)`.
struct Transition {
    r: Mat,
    c: Vec<f64>,
    l: Mat,
}

impl Transition {
    fn new<M: Model + ?Sized>(model: &M, r0: f64, xi: &[f64], r1: f64) -> Result<Self> {
        let p = frozen_parts(model, r0, &PhasePoint::from_slice(xi), r0, r1)?;
        Ok(Transition { l: psd_factor(&p.k), r: p.r, c: p.c.as_slice().to_vec() })
    }

    fn apply(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut v = self.c[i];
                for j in 0..n {
                    v += self.r[(i, j)] * x[j] + self.l[(i, j)] * z[j];
                }
                v
            })
            .collect()
    }
}

/// A square root `L` with `L Lᵀ = K` for a symmetric positive semi-definite `K`.
fn psd_factor(k: &Mat) -> Mat {
    if let Some(c) = k.clone().cholesky() {
        return c.l();
    }
    let e = k.clone().symmetric_eigen();
    let mut v = e.eigenvectors.clone();
    for (j, lam) in e.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        v.column_mut(j).iter_mut().for_each(|a| *a *= s);
    }
    v
}
