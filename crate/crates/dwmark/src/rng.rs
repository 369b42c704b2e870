//! Seeded random-number discipline.
//!
//! Every random draw in the crate comes from a named substream of a single
//! root seed. A stream is addressed by `(name, index)` and is a pure function
//! of that address, so any draw can be reproduced in isolation: resuming a
//! training run at step k regenerates exactly the draws of step k without
//! replaying steps 0..k.

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// Fans a root seed out into independent named substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        SeedTree { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// RNG for substream `(name, index)`. Same address, same stream.
    pub fn stream(&self, name: &str, index: u64) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.root.to_le_bytes());
        seed[8..16].copy_from_slice(&fnv1a(name.as_bytes()).to_le_bytes());
        seed[16..24].copy_from_slice(&index.to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }

    /// Child tree rooted at a substream, for components that fan out further.
    pub fn child(&self, name: &str, index: u64) -> SeedTree {
        let mut rng = self.stream(name, index);
        SeedTree { root: rng.gen() }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// I.i.d. standard-normal tensor drawn from `rng`.
pub fn normal_tensor<S: Into<candle_core::Shape>>(
    rng: &mut ChaCha8Rng,
    shape: S,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let shape = shape.into();
    let n = shape.elem_count();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}

/// Uniform tensor on [lo, hi).
pub fn uniform_tensor<S: Into<candle_core::Shape>>(
    rng: &mut ChaCha8Rng,
    shape: S,
    lo: f64,
    hi: f64,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let shape = shape.into();
    let n = shape.elem_count();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}

/// Fisher-Yates permutation of 0..n.
pub fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
