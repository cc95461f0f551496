//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! `(seed, stream)` pair. Streams are independent, so work split across
//! episodes, ensemble members or sweep seeds draws the same numbers no
//! matter how it is scheduled.
//!
//! Stream assignments:
//! - dataset generation: stream = episode index
//! - ensemble initialisation: stream = member index
//! - evaluation rollouts: stream = episode index

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed from a parent seed and a label, for components that
/// need their own key space (e.g. the policy network versus the Q ensemble).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
