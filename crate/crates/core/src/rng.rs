//! Stateless, key-derived random streams.
//!
//! Every stochastic quantity in the pipeline (ray jitter, batch composition,
//! diffusion noise) is drawn from a ChaCha8 stream seeded by hashing a
//! `(seed, stream tag, indices...)` key. Streams are therefore independent of
//! evaluation order, which makes renders and training runs reproducible
//! regardless of chunking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream tags keep unrelated consumers of the same seed decorrelated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    RayJitter,
    ImportanceDraw,
    BatchRays,
    DiffusionInit,
    DiffusionTrain,
    SceneGen,
    Perturb,
    Init,
    Other(u64),
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::RayJitter => 1,
            Stream::ImportanceDraw => 2,
            Stream::BatchRays => 3,
            Stream::DiffusionInit => 4,
            Stream::DiffusionTrain => 5,
            Stream::SceneGen => 6,
            Stream::Perturb => 7,
            Stream::Init => 8,
            Stream::Other(v) => 0x1000 + v,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Hash a key tuple down to a single 64-bit stream seed.
pub fn key_hash(seed: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x5bf0_3635_4cb4_31d7);
    h = splitmix64(h ^ stream.tag());
    for &ix in indices {
        h = splitmix64(h ^ ix);
    }
    h
}

/// A ChaCha8 generator for the given key tuple.
pub fn stream_rng(seed: u64, stream: Stream, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key_hash(seed, stream, indices))
}

/// Fill `out` with standard normal draws from the keyed stream.
pub fn fill_standard_normal(out: &mut [f64], seed: u64, stream: Stream, indices: &[u64]) {
    let mut rng = stream_rng(seed, stream, indices);
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = key_hash(7, Stream::RayJitter, &[1, 2]);
        let b = key_hash(7, Stream::RayJitter, &[1, 2]);
        assert_eq!(a, b);
        assert_ne!(a, key_hash(7, Stream::RayJitter, &[2, 1]));
        assert_ne!(a, key_hash(7, Stream::ImportanceDraw, &[1, 2]));
        assert_ne!(a, key_hash(8, Stream::RayJitter, &[1, 2]));
    }

    #[test]
    fn normal_fill_matches_repeat() {
        let mut x = [0.0; 16];
        let mut y = [0.0; 16];
        fill_standard_normal(&mut x, 3, Stream::DiffusionInit, &[0]);
        fill_standard_normal(&mut y, 3, Stream::DiffusionInit, &[0]);
        assert_eq!(x, y);
    }
}
