//! Deterministic random streams.
//!
//! Every random decision in the pipeline draws from a stream keyed by
//! (base seed, step, role). Nothing carries mutable rng state across
//! steps, so resuming from a checkpoint at step k reproduces steps
//! k+1.. bitwise: the stream for a step is a pure function of its key.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is for. Separate roles keep modes comparable:
/// a mode that consumes an extra stream cannot perturb the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Init = 1,
    BatchSelect = 2,
    Mask = 3,
    Replace = 4,
    DropoutMain = 5,
    DropoutAux = 6,
    Synth = 7,
    EvalMask = 8,
    EvalReplace = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collapse a key tuple into one seed; order-sensitive.
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// Derive the stream for (seed, step, role).
pub fn stream(seed: u64, step: u64, role: Role) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed ^ splitmix64(step)) ^ (role as u64));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Stream not tied to a training step (corpus synthesis, model init).
pub fn stream_for(seed: u64, role: Role) -> ChaCha8Rng {
    stream(seed, 0, role)
}
