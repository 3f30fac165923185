//! Command-line pipelines: corpus ingestion and model training, label
//! generation, verifier training, decoding evaluation, and the two numerical
//! checks.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{
    check_distribution, check_theorem, eval, gen_labels, train_judge, train_models, Artifacts, Outcome,
};
pub use config::{Overrides, PipelineConfig, ThetaSpec};

/// Mixes a stream name and index into the base seed (SplitMix64 finalizer
/// over an FNV-1a hash of the name).
pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs `f` on a pool with the configured worker count, or on the global
/// pool when none is set.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    match threads {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
        None => Ok(f()),
    }
}
