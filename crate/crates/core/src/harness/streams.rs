//! Seeded sample streams.
//!
//! Every stream is ChaCha8 (8-round ChaCha, 64-bit block counter) keyed with
//! `ChaCha8Rng::seed_from_u64(seed)` and separated by its stream id:
//!
//! | stream | use |
//! |---|---|
//! | 0 | long-term training draws |
//! | 1 | evaluation samples |
//! | 2 | dataset export samples |
//!
//! A user position takes two `u64` words: `x = (w0 >> 11) * 2^-53 * s_x`,
//! then `y` likewise with `s_y`. A sample is its `K` users in order. Training
//! draws append one more `u64`, the seed of that sample's perturbation
//! generator (only used by the `spsa` gradient mode).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SystemConfig;
use crate::model::ChannelSample;

pub const TRAIN_STREAM: u64 = 0;
pub const EVAL_STREAM: u64 = 1;
pub const EXPORT_STREAM: u64 = 2;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The first `count` samples of a stream.
pub fn samples(cfg: &SystemConfig, seed: u64, stream: u64, count: usize) -> Vec<ChannelSample> {
    let mut rng = stream_rng(seed, stream);
    (0..count).map(|_| ChannelSample::random(cfg, &mut rng)).collect()
}

pub fn eval_samples(cfg: &SystemConfig, seed: u64, count: usize) -> Vec<ChannelSample> {
    samples(cfg, seed, EVAL_STREAM, count)
}

/// Endless training draws, usable as the sampler of the long-term loop.
pub fn training_sampler(cfg: &SystemConfig, seed: u64) -> impl FnMut() -> (ChannelSample, u64) + '_ {
    let mut rng = stream_rng(seed, TRAIN_STREAM);
    move || {
        let sample = ChannelSample::random(cfg, &mut rng);
        (sample, rng.random())
    }
}
