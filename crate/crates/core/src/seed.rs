//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is addressed by a path of labels
//! below a master seed (`zone -> repeat -> method -> building`). Deriving a
//! child never consumes state from a sibling, so enabling another method or
//! adding a building leaves every other stream untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every stochastic component.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree(u64);

impl SeedTree {
    pub fn new(master_seed: u64) -> Self {
        Self(splitmix64(master_seed ^ 0x6D65_7461_656D_7321))
    }

    pub fn child(self, label: u64) -> Self {
        Self(splitmix64(self.0 ^ splitmix64(label.wrapping_add(0xA076_1D64_78BD_642F))))
    }

    /// Child keyed by a string label.
    pub fn named(self, label: &str) -> Self {
        // FNV-1a; labels are short fixed identifiers.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.child(h)
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> Rng {
        Rng::seed_from_u64(self.0)
    }
}
