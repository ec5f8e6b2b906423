//! Counter-keyed random streams.
//!
//! Every consumer of randomness derives its generator from
//! `(seed, role, sequence)` and a sub-stream counter, so results do not depend
//! on how work is scheduled across threads.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// What a stream is used for. Distinct roles never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamRole {
    /// Symbols of the channel of interest.
    Symbols,
    /// Symbols of the interfering WDM channel with the given signed index.
    Interferer(i32),
    /// Additive channel noise (AWGN and CPAN surrogates).
    AdditiveNoise,
    /// The surrogate phase-noise process.
    PhaseNoise,
    /// Distributed ASE injected by the split-step solver.
    Ase,
}

impl StreamRole {
    fn tag(self) -> u64 {
        match self {
            StreamRole::Symbols => 1,
            StreamRole::AdditiveNoise => 2,
            StreamRole::PhaseNoise => 3,
            StreamRole::Ase => 4,
            StreamRole::Interferer(k) => 0x100 + (k as i64 + 0x7fff) as u64,
        }
    }
}

/// Identifies one family of random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub role: StreamRole,
    pub sequence: u64,
}

impl StreamKey {
    pub fn new(seed: u64, role: StreamRole, sequence: u64) -> Self {
        Self { seed, role, sequence }
    }

    /// Generator for sub-stream `counter` of this key.
    pub fn rng(&self, counter: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&splitmix(self.seed).to_le_bytes());
        key[8..16].copy_from_slice(&splitmix(self.role.tag() ^ 0x5bd1_e995).to_le_bytes());
        key[16..24].copy_from_slice(&splitmix(self.sequence.wrapping_add(0x9e37)).to_le_bytes());
        key[24..32].copy_from_slice(&self.seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(counter);
        rng
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws from `CN(0, variance)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}
