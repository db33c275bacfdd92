//! Splittable seed streams.
//!
//! A [`SeedStream`] names a position in a tree of seeds. Children are derived
//! by hashing a label into the parent seed, so every random choice in a run can
//! be tied to a stable path such as `run/dataset/identity/17` and changing one
//! sub-stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    pub fn derive(self, label: &str) -> Self {
        Self(splitmix64(self.0 ^ splitmix64(fnv1a(label.as_bytes()))))
    }

    pub fn index(self, i: u64) -> Self {
        Self(splitmix64(splitmix64(self.0).wrapping_add(i.wrapping_mul(0xD6E8_FEB8_6659_FD93))))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
