//! Gauss–Legendre rules and endpoint-singularity substitutions.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = alloc::vec![0.0; n];
    let mut weights = alloc::vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    (x.iter().map(|v| c + h * v).collect(), w.iter().map(|v| v * h).collect())
}

/// Rule for `∫_a^b f(r) dr` when `f` behaves like `|b - r|^{α-1}` near `b`.
///
/// Uses `r = b - (b-a) v^{1/α}` so the transformed integrand is bounded.
pub fn singular_end_rule(n: usize, a: f64, b: f64, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let (v, w) = gauss_legendre_on(n, 0.0, 1.0);
    let q = 1.0 / alpha;
    let span = b - a;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (vi, wi) in v.iter().zip(&w) {
        nodes.push(b - span * vi.powf(q));
        weights.push(wi * span * q * vi.powf(q - 1.0));
    }
    (nodes, weights)
}

/// Composite rule on `[a, b]` with `ceil(nodes_per_unit * |b-a|)` panels of
/// `order` points each (at least one panel).
pub fn composite_rule(order: usize, nodes_per_unit: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let panels = ((nodes_per_unit as f64 * (b - a).abs() / order as f64).ceil() as usize).max(1);
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    let h = (b - a) / panels as f64;
    for p in 0..panels {
        let (x, w) = gauss_legendre_on(order, a + p as f64 * h, a + (p + 1) as f64 * h);
        nodes.extend(x);
        weights.extend(w);
    }
    (nodes, weights)
}
