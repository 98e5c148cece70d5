//! Seeded random streams.
//!
//! Every source of randomness in a run is a separate ChaCha stream keyed by
//! `(root seed, purpose, index)`, so changing one knob never shifts the draws
//! seen by an unrelated part of the simulation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Per-client charging draws; index = client id.
    Charging = 1,
    Grouping = 2,
    /// Hub election; index = epoch.
    HubElection = 3,
    Partition = 4,
    /// Mini-batch order; index mixes client id and start slot.
    BatchOrder = 5,
    Dataset = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, purpose: Purpose, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ purpose as u64) ^ index)
}

pub fn stream(root: u64, purpose: Purpose, index: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(root, purpose, index))
}

/// Index for the batch-order stream of one training job.
pub fn job_index(client: usize, start_slot: usize) -> u64 {
    ((client as u64) << 40) ^ start_slot as u64
}
