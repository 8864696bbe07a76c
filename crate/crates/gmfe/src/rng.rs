//! Counter-based random number generation.
//!
//! Every draw is a pure function of a key `(seed, stream, particle, step,
//! comp, lane)`, so noise can be generated in parallel, in any order, and
//! coupled across runs (same key, same draw). Keys are mixed through the
//! SplitMix64 finalizer chained per component.

/// Domain separation streams.
pub const STREAM_NOISE: u64 = 0;
pub const STREAM_INIT: u64 = 1;
pub const STREAM_VALIDATE: u64 = 2;
pub const STREAM_EXPERIMENT: u64 = 3;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

#[inline]
pub fn lane(seed: u64, stream: u64, particle: u64, step: u64, comp: u64, lane: u64) -> u64 {
    let mut h = mix64(seed ^ 0x9E37_79B9_7F4A_7C15);
    h = mix64(h ^ stream.wrapping_mul(0xA24B_AED4_963E_E407).wrapping_add(0x71));
    h = mix64(h ^ particle.wrapping_mul(0x9FB2_1C65_1E98_DF25).wrapping_add(0x1B3));
    h = mix64(h ^ step.wrapping_mul(0xD6E8_FEB8_6659_FD93).wrapping_add(0x9E5));
    h = mix64(h ^ comp.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).wrapping_add(0x27D));
    h = mix64(h ^ lane.wrapping_mul(0x1656_67B1_9E37_79F9).wrapping_add(0x3C6));
    h
}

/// Uniform in the open interval (0, 1).
#[inline]
pub fn uniform(seed: u64, stream: u64, particle: u64, step: u64, comp: u64, lane_idx: u64) -> f64 {
    let bits = lane(seed, stream, particle, step, comp, lane_idx);
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal draw via Box-Muller on lanes (2k, 2k+1).
#[inline]
pub fn normal(seed: u64, stream: u64, particle: u64, step: u64, comp: u64) -> f64 {
    let u1 = uniform(seed, stream, particle, step, comp, 0);
    let u2 = uniform(seed, stream, particle, step, comp, 1);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Derive a child seed, used to give each experiment cell its own stream.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    lane(master, STREAM_EXPERIMENT, a, b, 0, 0)
}

/// Stateful view over the counter generator for consumers that want a
/// sequential draw interface (initial-condition samplers, validators).
pub struct SampleSource {
    seed: u64,
    stream: u64,
    particle: u64,
    counter: u64,
}

impl SampleSource {
    pub fn new(seed: u64, stream: u64, particle: u64) -> Self {
        Self { seed, stream, particle, counter: 0 }
    }

    pub fn next_uniform(&mut self) -> f64 {
        let c = self.counter;
        self.counter += 1;
        uniform(self.seed, self.stream, self.particle, c, 0, 2)
    }

    pub fn next_normal(&mut self) -> f64 {
        let c = self.counter;
        self.counter += 1;
        normal(self.seed, self.stream, self.particle, c, 1)
    }
}
