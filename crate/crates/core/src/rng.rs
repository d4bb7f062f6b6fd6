//! Seed derivation for reproducible parallel Monte Carlo.
//!
//! Every random draw in the crate comes from a ChaCha8 stream seeded by
//! [`derive_seed`], so a (master seed, scenario, purpose, index) tuple always
//! maps to the same stream no matter which thread consumes it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3))
}

/// Mixes the master seed with a scenario id, a purpose tag (`"noise"`,
/// `"design"`, ...) and a replication index.
pub fn derive_seed(master: u64, scenario_id: &str, purpose: &str, index: u64) -> u64 {
    let mut h = splitmix64(master ^ fnv1a(scenario_id));
    h = splitmix64(h ^ fnv1a(purpose).rotate_left(17));
    splitmix64(h ^ index.wrapping_mul(GOLDEN))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
