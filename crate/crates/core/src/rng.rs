//! Seeded random streams.
//!
//! Every consumer of randomness derives its generator from a master seed plus
//! a stream id, so results never depend on thread scheduling or execution
//! order. ChaCha supports 2^64 independent streams per seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream used for user placement.
pub const STREAM_PLACEMENT: u64 = 1 << 48;
/// Stream used by long-run reference computations.
pub const STREAM_REFERENCE: u64 = (1 << 48) + 1;
/// Stream used to replay frozen reference thresholds.
pub const STREAM_REPLAY: u64 = (1 << 48) + 2;
/// Base of the oracle Monte Carlo streams.
pub const STREAM_ORACLE: u64 = 2 << 48;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for replication `rep`. Replications use the low stream ids.
pub fn replication(seed: u64, rep: u64) -> SimRng {
    stream(seed, rep)
}

/// Oracle substream keyed on `(sweep, shard)`.
pub fn oracle_shard(seed: u64, sweep: u64, shard: u64) -> SimRng {
    stream(seed, STREAM_ORACLE | (sweep << 24) | shard)
}
