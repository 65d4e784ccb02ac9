//! Deterministic stream derivation.
//!
//! Every source of randomness in a run is a pure function of the run seed
//! plus a label path (epoch, step, purpose). This keeps training runs and
//! evaluations reproducible and lets an interrupted run resume without
//! serializing generator state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed with a label path into a derived seed.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ 0x5bf0_3635_dee3_9a1d);
    for &p in parts {
        s = splitmix64(s ^ splitmix64(p));
    }
    s
}

/// Label strings participate via a stable FNV-1a hash.
pub fn tag(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream(base: u64, name: &str, parts: &[u64]) -> ChaCha8Rng {
    let mut all = vec![tag(name)];
    all.extend_from_slice(parts);
    ChaCha8Rng::seed_from_u64(derive(base, &all))
}

/// `[rows, cols]` of standard-normal draws.
pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let v: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(rows, cols, v)
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::vector(v)
}
