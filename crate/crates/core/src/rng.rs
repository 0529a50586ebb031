//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 keystream addressed by
//! `(seed, path, step)`: the master seed selects the key, the path index selects
//! the 64-bit stream id, and the step index selects a disjoint window of the
//! block counter. Any step of any path can therefore be regenerated in
//! isolation, which is what makes sampling independent of scheduling order and
//! worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words of keystream reserved for one step (2^36 words = 2^35 `u64` draws).
const STEP_WINDOW_BITS: u32 = 36;

/// Path indices at or above this value are reserved for internal streams
/// (bootstrap resampling and the like) so they never collide with a path.
pub const RESERVED_PATHS: u64 = 1 << 63;

#[derive(Clone, Debug)]
pub struct StreamFactory {
    base: ChaCha8Rng,
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        // Spread the seed over the whole key with splitmix64 so nearby seeds
        // give unrelated keys.
        let mut state = seed;
        for chunk in key.chunks_exact_mut(8) {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        Self {
            base: ChaCha8Rng::from_seed(key),
        }
    }

    /// Generator positioned at the start of the window for `(path, step)`.
    pub fn stream(&self, path: u64, step: u64) -> ChaCha8Rng {
        debug_assert!(step < (1u64 << (68 - STEP_WINDOW_BITS)));
        let mut rng = self.base.clone();
        rng.set_stream(path);
        rng.set_word_pos(u128::from(step) << STEP_WINDOW_BITS);
        rng
    }
}
