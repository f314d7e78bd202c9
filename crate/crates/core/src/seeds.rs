//! Named random streams derived from one root seed.
//!
//! Every consumer asks for `(component, index)`; the stream depends only on
//! those and the root, never on thread count or call order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStream {
    root: u64,
}

impl SeedStream {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn rng(&self, component: &str, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key(component, index))
    }

    /// A 64-bit child seed, for APIs that take a plain seed.
    pub fn seed(&self, component: &str, index: u64) -> u64 {
        let k = self.key(component, index);
        u64::from_le_bytes(k[..8].try_into().unwrap())
    }

    /// A child stream rooted at `seed(component, index)`.
    pub fn child(&self, component: &str, index: u64) -> SeedStream {
        SeedStream::new(self.seed(component, index))
    }

    fn key(&self, component: &str, index: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.root.to_le_bytes());
        h.update((component.len() as u64).to_le_bytes());
        h.update(component.as_bytes());
        h.update(index.to_le_bytes());
        h.finalize().into()
    }
}
