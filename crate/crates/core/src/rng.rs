//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 keystream (the `rand_chacha` 0.9 implementation)
//! addressed by a key and a 64-bit stream id. Sampling position is the block
//! counter, so two streams never share state and a stream's output depends
//! only on `(seed, stream_id)`, never on scheduling.
//!
//! Bit-exact derivation rule:
//!
//! * key: the 32-byte ChaCha key whose first 8 bytes are `seed` in
//!   little-endian order and whose remaining 24 bytes are zero;
//! * stream id: `(topology_index << 32) | run_index`, both indices < 2^32;
//! * `next_u64`: the next two little-endian 32-bit keystream words, low word
//!   first (the `rand_chacha` `RngCore::next_u64` contract);
//! * unit uniform: `(next_u64 >> 11) as f64 * 2^-53`, in `[0, 1)`;
//! * `uniform(lo, hi)`: `lo + (hi - lo) * unit`.
//!
//! Seeds for sub-experiments are folded with [`mix_seed`], a SplitMix64
//! finalizer chain, so that distinct coordinates give unrelated keys.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

const UNIT_SCALE: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    /// Stream for one `(topology, run)` cell of a Monte Carlo grid.
    ///
    /// Panics if either index does not fit in 32 bits; the packing into the
    /// stream id would no longer be injective.
    pub fn derive(seed: u64, topology_index: u64, run_index: u64) -> Self {
        assert!(
            topology_index <= u32::MAX as u64 && run_index <= u32::MAX as u64,
            "stream indices must fit in 32 bits"
        );
        Self::new(seed, (topology_index << 32) | run_index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform sample in `[0, 1)` with 53 bits of resolution.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * UNIT_SCALE
    }

    pub fn next_uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidRange { lo, hi });
        }
        Ok(self.uniform_unchecked(lo, hi))
    }

    #[inline]
    pub(crate) fn uniform_unchecked(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }
}

pub fn derive_stream(seed: u64, topology_index: u64, run_index: u64) -> RngStream {
    RngStream::derive(seed, topology_index, run_index)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds coordinates into a seed: `s = splitmix64(s ^ c)` for each `c`,
/// starting from `splitmix64(base)`.
pub fn mix_seed(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |acc, &c| splitmix64(acc ^ c))
}
