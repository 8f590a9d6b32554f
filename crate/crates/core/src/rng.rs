//! Seed derivation and counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream whose
//! key is derived from a root seed and a path of domain tags. ChaCha is a
//! counter-mode cipher, so a stream is addressed by `(key, stream id, word
//! position)` and never depends on how many values other streams consumed.
//! Per-instance draws use the instance index as the ChaCha stream id, which
//! keeps label draws stable under any reordering or parallel split of the
//! instance loop.
//!
//! Standard normals are produced by `rand_distr::StandardNormal` (the
//! ziggurat method) applied to the stream; uniforms are the top 53 bits of a
//! 64-bit word scaled into `[0, 1)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Domain tags used when deriving stream keys.
pub mod domain {
    pub const COVARIATES: u64 = 0x01;
    pub const HARDNESS: u64 = 0x02;
    pub const LABEL_NOISE: u64 = 0x03;
    pub const PREDICTOR_NOISE: u64 = 0x04;
    pub const LABEL_DRAW: u64 = 0x10;
    pub const ROUTING_COIN: u64 = 0x11;
    pub const CV_SHUFFLE: u64 = 0x20;
    pub const SUBSAMPLE: u64 = 0x21;
    pub const TRAIN: u64 = 0x30;
    pub const TRIAL: u64 = 0x31;
    pub const DEPLOY: u64 = 0x32;
    pub const CALIBRATE: u64 = 0x33;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child key from a root seed and a path of tags.
///
/// The mapping is a chained SplitMix64 finalizer; distinct paths give
/// statistically independent keys.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

/// Stable 64-bit tag for a string (FNV-1a), used to key streams by name.
pub fn name_tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// A sequential stream for the given key.
pub fn stream(key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key)
}

/// The `index`-th independent sub-stream of `key`.
pub fn instance_stream(key: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// A uniform draw in `[0, 1)`.
pub fn uniform<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// The first uniform of sub-stream `index` of `key`.
pub fn instance_uniform(key: u64, index: u64) -> f64 {
    uniform(&mut instance_stream(key, index))
}

/// In-place Fisher-Yates shuffle driven by the given stream.
pub fn shuffle<T, R: RngCore>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
