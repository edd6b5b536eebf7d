//! Named, independent random streams derived from one root seed.
//!
//! Each component asks for a stream by name (`"sim.frames"`, `"assoc/3"`,
//! ...). The stream is a ChaCha8 generator keyed by the root seed with the
//! ChaCha stream id set to the FNV-1a hash of the name, so adding a new
//! consumer never perturbs the sequence seen by existing ones.

use std::collections::BTreeMap;

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as StreamRng;

pub fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn stream(root: u64, name: &str) -> StreamRng {
    let mut rng = StreamRng::seed_from_u64(root);
    rng.set_stream(stream_id(name));
    rng
}

/// Stream for one item of a keyed family, e.g. per-tracklet frame sampling.
/// Independent of iteration order, which keeps parallel loops reproducible.
pub fn keyed_stream(root: u64, name: &str, key: u64) -> StreamRng {
    let mut rng = StreamRng::seed_from_u64(root ^ key.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(stream_id(name));
    rng
}

/// Records every stream handed out so a run manifest can list them.
#[derive(Debug, Clone, Default)]
pub struct SeedRegistry {
    root: u64,
    issued: BTreeMap<String, u64>,
}

impl SeedRegistry {
    pub fn new(root: u64) -> Self {
        Self {
            root,
            issued: BTreeMap::new(),
        }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&mut self, name: &str) -> StreamRng {
        self.issued.insert(name.to_string(), stream_id(name));
        stream(self.root, name)
    }

    /// Derived seed for components that expand their own streams.
    pub fn derive_seed(&mut self, name: &str) -> u64 {
        use rand::RngCore;
        self.stream(name).next_u64()
    }

    pub fn issued(&self) -> &BTreeMap<String, u64> {
        &self.issued
    }
}
