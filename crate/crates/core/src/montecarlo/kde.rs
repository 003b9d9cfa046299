//! Anisotropic Gaussian product-kernel density estimates with bootstrap errors.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sim::SampleBatch;
use crate::error::{domain, Result};
use crate::geometry::PhasePoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Kde,
    Parametrix,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Kernel widths of the `x1` and `x2` blocks.
    pub bandwidth: (f64, f64),
    pub provenance: Provenance,
    /// Kish effective number of samples carrying the estimate.
    pub effective_samples: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdeOptions {
    /// Bandwidth factor `h`; widths are `h√(t−s)` and `h(t−s)^{3/2}`.
    pub h: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl KdeOptions {
    /// `h = 0.3 n^{-1/6}` with 200 bootstrap replicates.
    pub fn for_samples(n: usize, seed: u64) -> Self {
        KdeOptions { h: default_bandwidth(n), replicates: 200, seed }
    }
}

pub fn default_bandwidth(n: usize) -> f64 {
    0.3 * (n.max(1) as f64).powf(-1.0 / 6.0)
}

/// Per-sample kernel contributions at `y`.
pub(crate) fn contributions(samples: &[f64], d: usize, span: f64, h: f64, y: &[f64]) -> Vec<f64> {
    let (h1, h2) = (h * span.sqrt(), h * span * span.sqrt());
    let norm = ((2.0 * PI).powi(d as i32) * (h1 * h2).powi(d as i32)).recip();
    let (i1, i2) = (1.0 / h1, 1.0 / h2);
    samples
        .chunks(2 * d)
        .map(|p| {
            let mut q = 0.0;
            for i in 0..d {
                let a = (y[i] - p[i]) * i1;
                let b = (y[d + i] - p[d + i]) * i2;
                q += a * a + b * b;
            }
            norm * (-0.5 * q).exp()
        })
        .collect()
}

/// Mean of `values` and its bootstrap standard error.
pub(crate) fn bootstrap_mean(values: &[f64], replicates: usize, seed: u64, stream: u64) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if replicates < 2 {
        return (mean, 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut reps = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let mut acc = 0.0;
        for _ in 0..n {
            let i = ((rng.next_u64() as u128 * n as u128) >> 64) as usize;
            acc += values[i];
        }
        reps.push(acc / n as f64);
    }
    let m = reps.iter().sum::<f64>() / replicates as f64;
    let var = reps.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (replicates - 1) as f64;
    (mean, var.sqrt())
}

fn effective(values: &[f64]) -> f64 {
    let s: f64 = values.iter().sum();
    let s2: f64 = values.iter().map(|v| v * v).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

pub fn kde(batch: &SampleBatch, opts: &KdeOptions, queries: &[PhasePoint]) -> Result<Vec<DensityEstimate>> {
    kde_samples(&batch.samples, batch.d, batch.span, opts, queries)
}

pub fn kde_samples(samples: &[f64], d: usize, span: f64, opts: &KdeOptions, queries: &[PhasePoint]) -> Result<Vec<DensityEstimate>> {
    if samples.is_empty() {
        return Err(domain("density estimate needs at least one sample"));
    }
    if d == 0 || !samples.len().is_multiple_of(2 * d) {
        return Err(domain(format!("sample length {} is not a multiple of 2d = {}", samples.len(), 2 * d)));
    }
    if !(opts.h > 0.0) || !opts.h.is_finite() {
        return Err(domain(format!("bandwidth factor must be positive, got {}", opts.h)));
    }
    if !(span > 0.0) {
        return Err(domain(format!("time span must be positive, got {span}")));
    }
    let bw = (opts.h * span.sqrt(), opts.h * span * span.sqrt());
    let mut out = Vec::with_capacity(queries.len());
    for (q, y) in queries.iter().enumerate() {
        if y.dim() != d {
            return Err(domain(format!("query has dimension {} but samples have d={d}", y.dim())));
        }
        let c = contributions(samples, d, span, opts.h, &y.to_vec());
        let (value, stderr) = bootstrap_mean(&c, opts.replicates, opts.seed, q as u64);
        out.push(DensityEstimate { value, stderr, bandwidth: bw, provenance: Provenance::Kde, effective_samples: effective(&c) });
    }
    Ok(out)
}

/// Central difference of two estimates built from paired (common random
/// number) batches, with a paired bootstrap error.
pub fn kde_difference(plus: &SampleBatch, minus: &SampleBatch, step: f64, opts: &KdeOptions, queries: &[PhasePoint]) -> Result<Vec<DensityEstimate>> {
    if plus.len() != minus.len() || plus.d != minus.d || plus.flagged + minus.flagged > 0 {
        return Err(domain("paired batches must be complete and of equal size"));
    }
    if plus.is_empty() {
        return Err(domain("density estimate needs at least one sample"));
    }
    if !(step > 0.0) {
        return Err(domain(format!("difference step must be positive, got {step}")));
    }
    let (d, span) = (plus.d, plus.span);
    let bw = (opts.h * span.sqrt(), opts.h * span * span.sqrt());
    let mut out = Vec::with_capacity(queries.len());
    for (q, y) in queries.iter().enumerate() {
        let y = y.to_vec();
        let a = contributions(&plus.samples, d, span, opts.h, &y);
        let b = contributions(&minus.samples, d, span, opts.h, &y);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(a, b)| (a - b) / (2.0 * step)).collect();
        let (value, stderr) = bootstrap_mean(&diff, opts.replicates, opts.seed, q as u64);
        out.push(DensityEstimate { value, stderr, bandwidth: bw, provenance: Provenance::Kde, effective_samples: effective(&a) });
    }
    Ok(out)
}
