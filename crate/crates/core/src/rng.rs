//! Seed fan-out: one master seed, independent named substreams.
//!
//! Every source of randomness in a run (env layouts, weight init, ε-greedy
//! coins, eval episodes, replay sampling) pulls from its own ChaCha8 stream
//! derived as SHA-256(master ‖ name). Changing one stream's name leaves all
//! others untouched, so ablations perturb exactly one thing at a time, and
//! stream positions can be captured/restored for exact resume.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive the named substream of a master seed.
pub fn stream(master: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Indexed substream, e.g. one per evaluation episode.
pub fn stream_indexed(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    stream(master, &format!("{name}#{index}"))
}
