//! Counter-based pseudo-random streams.
//!
//! Every random decision in the renderer draws from a stream keyed by
//! `(seed, pixel, sample, phase)`. Streams with distinct keys are
//! statistically independent, and a given key always reproduces the same
//! sequence, regardless of how work is scheduled across threads. That is
//! what makes renders and training runs bit-identical for any `--threads`.

/// Purpose tags separating the independent random decisions made for one
/// `(pixel, sample)` pair.
pub mod phase {
    /// Forward-pass transparency pick.
    pub const FORWARD_PICK: u64 = 1;
    /// Backward pass, primary index draw.
    pub const BACKWARD_I: u64 = 2;
    /// Backward pass, behind-the-primary index draw.
    pub const BACKWARD_K: u64 = 3;
    /// Shading (shadow rays, environment directions) in the forward pass.
    pub const SHADE_FORWARD: u64 = 4;
    /// Shading of the primary pick in the backward pass.
    pub const SHADE_BACKWARD_I: u64 = 5;
    /// Shading of the secondary pick in the backward pass.
    pub const SHADE_BACKWARD_K: u64 = 6;
    /// Scratch space for tests and scene generators.
    pub const TEST: u64 = 1000;
}

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One independent random stream: a hashed key plus a draw counter.
/// Copying a stream replays it, which the backward pass relies on to
/// re-evaluate shading with the exact transmittance samples of the
/// gradient estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, pixel: u64, sample: u64, phase: u64) -> RngStream {
        let mut h = mix(seed ^ 0x243F_6A88_85A3_08D3);
        h = mix(h ^ pixel);
        h = mix(h ^ sample);
        h = mix(h ^ phase);
        RngStream { key: h, counter: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of mantissa.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`.
    pub fn next_index(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    /// Uniform direction on the unit sphere.
    pub fn unit_dir(&mut self) -> crate::math::Vec3 {
        let z = self.uniform(-1.0, 1.0);
        let phi = self.uniform(0.0, std::f64::consts::TAU);
        let r = (1.0 - z * z).max(0.0).sqrt();
        crate::math::vec3(r * phi.cos(), r * phi.sin(), z)
    }
}
