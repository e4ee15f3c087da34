//! Counter-based SplitMix64.
//!
//! Output `i` (0-based) of stream `s` under seed `seed` is
//!
//! ```text
//! key    = mix64(seed ^ mix64(s + STREAM_SALT))
//! out[i] = mix64(key + (i + 1) * GOLDEN_GAMMA)        (wrapping u64 arithmetic)
//! ```
//!
//! where `mix64` is the SplitMix64 finalizer. Streams are addressed
//! independently, so any partition of the stream space can be generated in
//! any order and still reproduce the sequential output.
//!
//! Integer to float mappings:
//! - [`Stream::uniform`]: `(x >> 11) * 2^-53`, in [0, 1)
//! - [`Stream::open_uniform`]: `((x >> 11) + 0.5) * 2^-53`, in (0, 1)
//! - [`Stream::below`]: `(x * n) >> 64` on 128-bit integers
//! - [`Stream::normal`]: Box-Muller cosine branch on two open uniforms,
//!   evaluated with the `libm` crate so results do not depend on the
//!   platform math library.

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
pub const STREAM_SALT: u64 = 0x6A09_E667_F3BC_C909;

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Stream {
            key: mix64(seed ^ mix64(stream.wrapping_add(STREAM_SALT))),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    pub fn open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }

    /// Integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.open_uniform();
        let u2 = self.open_uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }
}
