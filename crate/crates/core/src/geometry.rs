//! Anisotropic scale geometry of the kinetic system.
//!
//! A point of the phase space is split into a non-degenerate block `x1`
//! (where the noise acts) and a degenerate block `x2`. Time `t` scales the
//! blocks by `t^{1/2}` and `t^{3/2}` respectively.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{domain, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>) -> Result<Self> {
        if x1.len() != x2.len() || x1.is_empty() {
            return Err(domain(format!(
                "phase point blocks must share a dimension d >= 1 (got {} and {})",
                x1.len(),
                x2.len()
            )));
        }
        let p = PhasePoint { x1, x2 };
        p.check_finite()?;
        Ok(p)
    }

    pub fn zeros(d: usize) -> Self {
        PhasePoint { x1: alloc::vec![0.0; d], x2: alloc::vec![0.0; d] }
    }

    /// Builds a point from the stacked vector `(x1, x2)` of length `2d`.
    pub fn from_slice(z: &[f64]) -> Self {
        let d = z.len() / 2;
        PhasePoint { x1: z[..d].to_vec(), x2: z[d..2 * d].to_vec() }
    }

    /// Shorthand for the scalar case d = 1.
    pub fn scalar(x1: f64, x2: f64) -> Self {
        PhasePoint { x1: alloc::vec![x1], x2: alloc::vec![x2] }
    }

    pub fn dim(&self) -> usize {
        self.x1.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.x1.clone();
        v.extend_from_slice(&self.x2);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.x1.iter().chain(self.x2.iter()).all(|v| v.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(domain("phase point has non-finite entries"))
        }
    }

    pub fn sub(&self, other: &PhasePoint) -> PhasePoint {
        PhasePoint {
            x1: self.x1.iter().zip(&other.x1).map(|(a, b)| a - b).collect(),
            x2: self.x2.iter().zip(&other.x2).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &PhasePoint) -> PhasePoint {
        PhasePoint {
            x1: self.x1.iter().zip(&other.x1).map(|(a, b)| a + b).collect(),
            x2: self.x2.iter().zip(&other.x2).map(|(a, b)| a + b).collect(),
        }
    }

    /// Euclidean norm of the stacked vector.
    pub fn norm(&self) -> f64 {
        norm2(&self.x1).hypot(norm2(&self.x2))
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleParams {
    pub t: f64,
    pub d: usize,
}

impl ScaleParams {
    pub fn new(t: f64, d: usize) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(domain(format!("scale time must be positive, got {t}")));
        }
        if d == 0 {
            return Err(domain("dimension d must be at least 1"));
        }
        Ok(ScaleParams { t, d })
    }

    /// Multipliers applied to the two blocks.
    pub fn factors(&self, direction: Direction) -> (f64, f64) {
        let (a, b) = (self.t.sqrt(), self.t * self.t.sqrt());
        match direction {
            Direction::Forward => (a, b),
            Direction::Inverse => (1.0 / a, 1.0 / b),
        }
    }

    /// Applies `T_t` or its inverse to a stacked vector in place.
    pub fn apply_slice(&self, z: &mut [f64], direction: Direction) {
        let (a, b) = self.factors(direction);
        let d = z.len() / 2;
        z[..d].iter_mut().for_each(|v| *v *= a);
        z[d..].iter_mut().for_each(|v| *v *= b);
    }

    /// `|T_t^{-1} z|` for a stacked vector.
    pub fn inverse_norm(&self, z: &[f64]) -> f64 {
        let (a, b) = self.factors(Direction::Inverse);
        let d = z.len() / 2;
        let s1: f64 = z[..d].iter().map(|v| (v * a) * (v * a)).sum();
        let s2: f64 = z[d..].iter().map(|v| (v * b) * (v * b)).sum();
        (s1 + s2).sqrt()
    }
}

/// The quasi-norm `|x|_d = |x1| + |x2|^{1/3}`.
pub fn aniso_norm(x: &PhasePoint) -> Result<f64> {
    x.check_finite()?;
    Ok(aniso_norm_slice(&x.to_vec()))
}

pub(crate) fn aniso_norm_slice(z: &[f64]) -> f64 {
    let d = z.len() / 2;
    norm2(&z[..d]) + norm2(&z[d..]).cbrt()
}

pub fn scale_map(t: f64, x: &PhasePoint, direction: Direction) -> Result<PhasePoint> {
    let sp = ScaleParams::new(t, x.dim())?;
    let (a, b) = sp.factors(direction);
    Ok(PhasePoint {
        x1: x.x1.iter().map(|v| v * a).collect(),
        x2: x.x2.iter().map(|v| v * b).collect(),
    })
}

/// Comparison kernel `g_λ(t, x) = t^{-2d} exp(-|T_t^{-1} x|² / (2λ))`.
pub fn gauss_g(lambda: f64, t: f64, x: &PhasePoint) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    let sp = ScaleParams::new(t, x.dim())?;
    Ok(gauss_g_slice(lambda, &sp, &x.to_vec()))
}

pub(crate) fn gauss_g_slice(lambda: f64, sp: &ScaleParams, z: &[f64]) -> f64 {
    let r = sp.inverse_norm(z);
    sp.t.powi(-2 * sp.d as i32) * (-(r * r) / (2.0 * lambda)).exp()
}

/// `p̂_λ(s,x;t,y) = g_λ(t-s, θ_{t,s}(x) - y)` for a caller-supplied flow.
pub fn proxy_p_hat<F>(lambda: f64, s: f64, t: f64, x: &PhasePoint, y: &PhasePoint, flow: F) -> Result<f64>
where
    F: Fn(f64, f64, &PhasePoint) -> Result<PhasePoint>,
{
    if !(t > s) {
        return Err(domain(format!("need s < t, got s={s}, t={t}")));
    }
    let theta = flow(s, t, x)?;
    gauss_g(lambda, t - s, &theta.sub(y))
}

/// Arguments of the rescaled density: a query `(s,x;t,y)` of the original
/// model maps to `(0, T_λ^{-1}x; (t-s)/λ, T_λ^{-1}y)` of the model rescaled
/// at `(λ, s)`, and the densities relate through [`rescaling_jacobian`].
pub fn rescaled_query(lambda: f64, s: f64, x: &PhasePoint, t: f64, y: &PhasePoint) -> Result<(f64, PhasePoint, PhasePoint)> {
    if !(lambda > 0.0) {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    Ok((
        (t - s) / lambda,
        scale_map(lambda, x, Direction::Inverse)?,
        scale_map(lambda, y, Direction::Inverse)?,
    ))
}

/// `p(s,x;t,y) = λ^{-2d} p^{λ,s}(0, T_λ^{-1}x; (t-s)/λ, T_λ^{-1}y)`.
pub fn rescaling_jacobian(lambda: f64, d: usize) -> f64 {
    lambda.powi(-2 * d as i32)
}
