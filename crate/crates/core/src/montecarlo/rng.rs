//! Counter-addressed Gaussian stream keyed by `(seed, path, step)`.

#[allow(unused_imports)]
use num_traits::Float;
use core::f64::consts::PI;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gaussian draws for one path. Every step consumes a fixed number of
/// generator words, so the draws of step `k` do not depend on how earlier
/// steps were consumed or on which worker runs the path.
#[derive(Clone)]
pub struct PathRng {
    inner: ChaCha8Rng,
    words_per_step: u128,
}

impl PathRng {
    /// `normals_per_step` Gaussians are available per step.
    pub fn new(seed: u64, path: u64, normals_per_step: usize) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(path);
        // two 64-bit draws (four 32-bit words) per Box–Muller pair
        let pairs = normals_per_step.div_ceil(2).max(1) as u128;
        PathRng { inner, words_per_step: 4 * pairs }
    }

    /// Fills `out` with the Gaussians of `step`.
    pub fn normals(&mut self, step: u64, out: &mut [f64]) {
        self.inner.set_word_pos(step as u128 * self.words_per_step);
        let mut i = 0;
        while i < out.len() {
            let u1 = unit_open(self.inner.next_u64());
            let u2 = unit_open(self.inner.next_u64());
            let r = (-2.0 * u1.ln()).sqrt();
            let th = 2.0 * PI * u2;
            out[i] = r * th.cos();
            if i + 1 < out.len() {
                out[i + 1] = r * th.sin();
            }
            i += 2;
        }
    }

    /// Uniform variate in `(0, 1]` at an arbitrary counter position, for
    /// resampling schemes that need addressable uniforms.
    pub fn uniform_at(&mut self, index: u64) -> f64 {
        self.inner.set_word_pos(2 * index as u128);
        unit_open(self.inner.next_u64())
    }
}

fn unit_open(u: u64) -> f64 {
    ((u >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}
