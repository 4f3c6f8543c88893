//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] addressed by a
//! `(seed, Stream, index)` triple. ChaCha is counter based: the seed selects
//! the key and the 64-bit stream id selects an independent keystream, so any
//! stream can be reconstructed without replaying the others. The stream id
//! packs the subsystem tag in the top 8 bits and a caller-chosen index in the
//! low 56 bits (environment number, sample number, candidate number, ...).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Subsystems that own a dedicated family of random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Stream {
    /// Transmitter placement and power.
    Environment = 1,
    /// White noise underlying the shadowing field.
    Shadowing = 2,
    /// Measurement noise on UAV samples.
    Measurement = 3,
    /// Forward-process noise and timestep draws during denoiser training.
    DiffusionTrain = 4,
    /// Reverse-process noise during conditional sampling.
    DiffusionSample = 5,
    /// Action sampling and updates of the optimisation policies.
    Policy = 6,
    /// Network weight initialisation.
    Init = 7,
    /// Mini-batch selection and mission randomisation for training data.
    Data = 8,
}

const INDEX_BITS: u32 = 56;
const INDEX_MASK: u64 = (1 << INDEX_BITS) - 1;

/// Returns the generator for `(seed, stream, index)`.
///
/// `index` is truncated to 56 bits.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << INDEX_BITS) | (index & INDEX_MASK));
    rng
}

/// Mixes several integers into one stream index (splitmix64 finaliser).
pub fn mix_index(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h & INDEX_MASK
}
