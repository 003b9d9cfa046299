//! Adaptive Dormand–Prince 5(4) integrator with cubic Hermite dense output.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Smallest admissible step relative to the integration span.
    pub min_step_rel: f64,
    /// Accept steps at the floor instead of failing (for drifts with
    /// isolated non-Lipschitz points).
    pub accept_at_floor: bool,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-12, atol: 1e-12, max_steps: 200_000, min_step_rel: 1e-7, accept_at_floor: true }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions { rtol: tol, atol: tol, ..Default::default() }
    }
}

/// Accepted nodes of an integration, with derivative values for Hermite
/// interpolation. Times are strictly monotone in the direction of travel.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    states: Vec<f64>,
    derivs: Vec<f64>,
    /// Steps accepted at the step-size floor.
    pub floor_steps: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn deriv(&self, i: usize) -> &[f64] {
        &self.derivs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn first(&self) -> &[f64] {
        self.state(0)
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        self.times[self.len() - 1]
    }

    fn forward(&self) -> bool {
        self.len() < 2 || self.times[1] > self.times[0]
    }

    /// Index `i` with `t` in the closed segment between nodes `i` and `i+1`.
    fn segment(&self, t: f64) -> usize {
        let n = self.len();
        if n < 2 {
            return 0;
        }
        let fwd = self.forward();
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let before = if fwd { self.times[mid] <= t } else { self.times[mid] >= t };
            if before {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Node index whose time equals `t` exactly, if any.
    pub fn node_at(&self, t: f64) -> Option<usize> {
        let i = self.segment(t);
        if self.times[i] == t {
            Some(i)
        } else if i + 1 < self.len() && self.times[i + 1] == t {
            Some(i + 1)
        } else {
            None
        }
    }

    /// Cubic Hermite evaluation; exact at nodes, clamped outside the range.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if let Some(i) = self.node_at(t) {
            out.copy_from_slice(self.state(i));
            return;
        }
        let n = self.len();
        if n == 1 {
            out.copy_from_slice(self.state(0));
            return;
        }
        let i = self.segment(t).min(n - 2);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let (y0, y1, f0, f1) = (self.state(i), self.state(i + 1), self.deriv(i), self.deriv(i + 1));
        for k in 0..self.dim {
            out[k] = h00 * y0[k] + h * h10 * f0[k] + h01 * y1[k] + h * h11 * f1[k];
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// Every time in `stops` lying strictly between `t0` and `t1` becomes an
/// exact node of the returned trajectory.
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], t1: f64, stops: &[f64], opts: &OdeOptions) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut traj = Trajectory { dim: n, times: Vec::new(), states: Vec::new(), derivs: Vec::new(), floor_steps: 0 };
    let mut k: [Vec<f64>; 7] = core::array::from_fn(|_| alloc::vec![0.0; n]);
    f(t0, y0, &mut k[0]);
    check_finite(t0, y0, &k[0])?;
    traj.times.push(t0);
    traj.states.extend_from_slice(y0);
    traj.derivs.extend_from_slice(&k[0]);
    if t1 == t0 {
        return Ok(traj);
    }
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let h_min = opts.min_step_rel * span;

    let mut targets: Vec<f64> = stops.iter().copied().filter(|s| (s - t0) * dir > 0.0 && (t1 - s) * dir > 0.0).collect();
    targets.sort_by(|a, b| ((a - b) * dir).partial_cmp(&0.0).unwrap_or(core::cmp::Ordering::Equal));
    targets.dedup();
    targets.push(t1);

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut ytmp = alloc::vec![0.0; n];
    let mut ynew = alloc::vec![0.0; n];
    let mut h = initial_step(&y, &k[0], span, opts);
    let mut steps = 0usize;
    let mut next_target = 0usize;

    while next_target < targets.len() {
        let target = targets[next_target];
        let remaining = (target - t).abs();
        let mut clipped = false;
        if h >= remaining {
            h = remaining;
            clipped = true;
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Integration { t, state: y, reason: format!("exceeded {} steps", opts.max_steps) });
        }
        let hs = h * dir;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += hs * A[s][j] * kj[i];
                }
                ytmp[i] = acc;
            }
            f(t + C[s] * hs, &ytmp, &mut k[s]);
        }
        // stage 7 evaluates at the fifth-order solution (FSAL)
        ynew.copy_from_slice(&ytmp);
        let mut err = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            let r = hs * e / sc;
            err += r * r;
        }
        let err = (err / n.max(1) as f64).sqrt();
        let finite = ynew.iter().all(|v| v.is_finite()) && k[6].iter().all(|v| v.is_finite());
        let at_floor = h <= h_min;
        if finite && (err <= 1.0 || (at_floor && opts.accept_at_floor)) {
            if err > 1.0 {
                traj.floor_steps += 1;
            }
            t = if clipped { target } else { t + hs };
            y.copy_from_slice(&ynew);
            let last = k[6].clone();
            k[0].copy_from_slice(&last);
            traj.times.push(t);
            traj.states.extend_from_slice(&y);
            traj.derivs.extend_from_slice(&k[0]);
            if clipped {
                next_target += 1;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).max(h_min);
        } else {
            if at_floor {
                let reason = if finite { "step-size underflow" } else { "non-finite state" };
                return Err(Error::Integration { t, state: y, reason: reason.into() });
            }
            let fac = if finite { (0.9 * err.powf(-0.2)).clamp(0.1, 0.5) } else { 0.25 };
            h = (h * fac).max(h_min);
        }
    }
    Ok(traj)
}

fn initial_step(y: &[f64], f0: &[f64], span: f64, opts: &OdeOptions) -> f64 {
    let n = y.len().max(1) as f64;
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (yi, fi) in y.iter().zip(f0) {
        let sc = opts.atol + opts.rtol * yi.abs();
        d0 += (yi / sc) * (yi / sc);
        d1 += (fi / sc) * (fi / sc);
    }
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
    h.clamp(1e-12 * span, 0.1 * span)
}

fn check_finite(t: f64, y: &[f64], f: &[f64]) -> Result<()> {
    if y.iter().chain(f).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration { t, state: y.to_vec(), reason: "non-finite initial state or derivative".into() })
    }
}
