//! Seeded RNG streams.
//!
//! Every source of randomness in a run is driven by one of a fixed set of
//! named streams. Each stream is an independent ChaCha8 generator, so
//! skipping all draws on one stream (e.g. running without diversification)
//! never shifts the draws of another. Stream state is capturable, which is
//! what lets checkpoints resume bit-identically.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One independent random stream.
pub type Stream = ChaCha8Rng;

/// Explicit per-stream seeds for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedBlock {
    /// Data order and training augmentation draws.
    pub data: u64,
    /// Parameter initialization and head expansion.
    pub init: u64,
    /// Reservoir offers and rehearsal sampling.
    pub memory: u64,
    /// Per-sample epsilon draws and diversified-subset selection.
    pub diversify: u64,
    /// Evaluation subsets, corruption noise, attack random starts.
    pub eval: u64,
    /// Class-order shuffling when enabled.
    pub class_order: u64,
}

impl SeedBlock {
    /// Derive all stream seeds from a single master seed. Outputs are
    /// confined to 63 bits so they survive formats whose integers are
    /// signed (TOML), matching the range a user could write by hand.
    pub fn from_master(master: u64) -> Self {
        let mut s = master;
        let mut next = || {
            s = splitmix64(s);
            s & (i64::MAX as u64)
        };
        SeedBlock {
            data: next(),
            init: next(),
            memory: next(),
            diversify: next(),
            eval: next(),
            class_order: next(),
        }
    }

    pub fn stream(seed: u64) -> Stream {
        ChaCha8Rng::seed_from_u64(seed)
    }
}

/// SplitMix64 step; used to spread one master seed over the stream seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Serializable snapshot of a stream's position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    /// Hex-encoded 32-byte ChaCha seed.
    pub seed: String,
    /// 128-bit word position, split to stay JSON-safe.
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
}

impl StreamState {
    pub fn capture(rng: &Stream) -> Self {
        let pos = rng.get_word_pos();
        StreamState {
            seed: hex::encode(rng.get_seed()),
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
    }

    pub fn restore(&self) -> crate::Result<Stream> {
        let bytes = hex::decode(&self.seed).map_err(|e| {
            crate::Error::invalid_argument(format!("bad rng seed encoding: {e}"))
        })?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| crate::Error::invalid_argument("rng seed must be 32 bytes"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128);
        Ok(rng)
    }
}
