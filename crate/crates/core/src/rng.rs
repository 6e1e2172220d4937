//! Deterministic random-number streams.
//!
//! All randomness in the crate flows from one master seed through named
//! substreams, so a run is reproducible end to end and independent pieces of
//! work (per-document dropout, per-parameter init) draw from independent
//! streams regardless of execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The named substreams a master seed fans out into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Parameter initialization (salted per parameter name).
    Init,
    /// Per-epoch example shuffling.
    Shuffle,
    /// Negative-pair subsampling.
    NegSample,
    /// Dropout masks (salted per epoch/batch/slot).
    Dropout,
    /// Synthetic corpus generation.
    Synth,
    /// Gradient-check probe sampling.
    Probe,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha stream from `(master, stream, a, b)`.
pub fn substream(master: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let mut state = master;
    splitmix64(&mut state);
    state ^= (stream as u64).wrapping_mul(0xa0761d6478bd642f);
    splitmix64(&mut state);
    state ^= a.wrapping_mul(0xe7037ed1a0b428db);
    splitmix64(&mut state);
    state ^= b.wrapping_mul(0x8ebc6af09c88c6e3);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Stable 64-bit FNV-1a hash, used to salt per-parameter init streams.
pub fn name_salt(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
