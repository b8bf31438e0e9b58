//! Seed derivation.
//!
//! One experiment seed fans out into independent named streams (data
//! generation, partitioning, initialization, per-round sampling, per-client
//! batching, attack randomness, ...) via a splitmix64 counter scheme. Two
//! properties matter:
//!
//! * determinism — the same root seed always yields the same stream seeds;
//! * isolation — changing the attack seed leaves data/partition/init streams
//!   untouched, so an attacked run sees byte-identical shards.

/// Named random streams derived from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Sample-pool generation (centroids and noise).
    Data,
    /// Server-held root shard extraction.
    RootShard,
    /// Client partition draws.
    Partition,
    /// Model weight initialization.
    Init,
    /// Per-round participant sampling.
    Sampling,
    /// Per-round, per-client mini-batch shuffling.
    Batching,
    /// Attack randomness root (malicious-client selection lives under it).
    Attack,
    /// Malicious-client selection (derived from the attack root).
    MaliciousSelection,
    /// Aggregation-side randomness (bucketing shuffles).
    Aggregation,
    /// Post-run fine-tune training.
    FineTune,
    /// Probe training for clients absent from the previous round's pools.
    Probe,
    /// Server-side training on the root shard (trust-root update).
    RootTrain,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 0x01,
            Stream::RootShard => 0x02,
            Stream::Partition => 0x03,
            Stream::Init => 0x04,
            Stream::Sampling => 0x05,
            Stream::Batching => 0x06,
            Stream::Attack => 0x07,
            Stream::MaliciousSelection => 0x08,
            Stream::Aggregation => 0x09,
            Stream::FineTune => 0x0a,
            Stream::Probe => 0x0b,
            Stream::RootTrain => 0x0c,
        }
    }
}

/// The splitmix64 finalizer: a cheap, well-mixed 64-bit permutation.
fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named stream.
pub fn derive(root: u64, stream: Stream) -> u64 {
    splitmix64(root ^ splitmix64(stream.tag()))
}

/// Seed for a named stream at one index (e.g. a round).
pub fn derive_indexed(root: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(derive(root, stream) ^ splitmix64(index.wrapping_add(0x51ed_270b)))
}

/// Seed for a named stream at a (round, client) pair.
pub fn derive_pair(root: u64, stream: Stream, a: u64, b: u64) -> u64 {
    splitmix64(derive_indexed(root, stream, a) ^ splitmix64(b.wrapping_add(0x2545_f491)))
}
