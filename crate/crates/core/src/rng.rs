//! Seed derivation. Every random stream in the toolkit is obtained from a
//! root seed and a stream name, so any stage can be re-run in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `root` and a stream name.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Generator for the named stream.
pub fn stream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name))
}

/// Counter-based stream: the `index`-th independent substream of a named
/// stream. Results drawn from it do not depend on evaluation order.
pub fn substream(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = stream(root, name);
    rng.set_stream(index);
    rng
}
