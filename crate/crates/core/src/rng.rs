//! Deterministic random-number plumbing. Every path owns a keyed ChaCha
//! stream derived from (seed, direction, path index), so ensembles are
//! reproducible bit-for-bit regardless of how many worker threads consume
//! them or in which order paths are scheduled.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Role of a stream within a two-sided ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    Forward = 0,
    Backward = 1,
    /// Draws that pick the initial state.
    Initial = 2,
}

/// Independent generator for one path. Streams with different direction or
/// path index never overlap.
pub fn path_rng(seed: u64, direction: Direction, path: u64) -> ChaCha8Rng {
    assert!(path < (1 << 32), "path index must fit in 32 bits");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((direction as u64) << 32) | path);
    rng
}
