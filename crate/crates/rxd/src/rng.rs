//! Seeded randomness.
//!
//! Every stochastic choice in the crate (frequency sampling, subsampling,
//! synthetic scenes) flows through [`seeded_rng`], so a `u64` seed fully
//! determines the output on every platform. ChaCha20 is used because its
//! stream is specified independently of word size and endianness.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Returns the crate's deterministic generator for `seed`.
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Uniform sample of `amount` distinct indices from `0..len`, in sorted order.
///
/// The returned order is canonical (ascending) rather than the draw order:
/// every subset is still equally likely, and `amount == len` yields exactly
/// `0..len`, which keeps "subsample everything" runs bit-identical to their
/// unsubsampled counterparts.
///
/// Panics if `amount > len`.
pub fn sample_indices(len: usize, amount: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    assert!(
        amount <= len,
        "cannot draw {amount} distinct indices from 0..{len}"
    );
    let mut idx = rand::seq::index::sample(rng, len, amount).into_vec();
    idx.sort_unstable();
    idx
}
