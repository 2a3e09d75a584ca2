//! Named, independent random streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::trace::fnv1a64;

/// Derives one generator per entity name. Streams depend only on the seed
/// and the name, so adding an entity leaves the other streams untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        let mut material = self.seed.to_le_bytes().to_vec();
        material.push(0);
        material.extend_from_slice(name.as_bytes());
        ChaCha8Rng::seed_from_u64(fnv1a64(&material))
    }
}
