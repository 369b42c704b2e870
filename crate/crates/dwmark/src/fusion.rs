//! Watermark/image feature fusion.
//!
//! An embedding table maps each positional bit index to a D-dimensional
//! feature row; a fusion block then runs single-head cross-attention with
//! flattened image features as queries and the watermark features as keys and
//! values, adding the attended values back onto the image features through a
//! residual connection. All projections are bias-free, so a zero value
//! projection makes the block an exact identity on the image features.

use candle_core::Tensor;
#[cfg(test)]
use candle_core::DType;
use candle_nn::ops::softmax;

use crate::codec::{encode_indices, WatermarkBits};
use crate::error::{Error, Result};
use crate::params::{Init, ParamRegistry};

/// Learnable 2L x D table of watermark feature rows.
pub struct EmbeddingTable {
    table: Tensor,
    watermark_len: usize,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(params: &mut ParamRegistry, name: &str, watermark_len: usize, dim: usize) -> Result<Self> {
        let table = params.get(
            &format!("{name}.table"),
            (2 * watermark_len, dim),
            Init::Normal { std: 1.0 / (dim as f64).sqrt() },
        )?;
        Ok(EmbeddingTable { table, watermark_len, dim })
    }

    pub fn watermark_len(&self) -> usize {
        self.watermark_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    /// Row i of the result is table row `encode_indices(w)[i]`: (L, D).
    pub fn lookup(&self, w: &WatermarkBits) -> Result<Tensor> {
        self.check_len(w)?;
        let ids: Vec<u32> = encode_indices(w).indices().iter().map(|&i| i as u32).collect();
        let ids = Tensor::new(ids.as_slice(), self.table.device())?;
        Ok(self.table.index_select(&ids, 0)?)
    }

    /// Batched lookup: (B, L, D).
    pub fn lookup_batch(&self, ws: &[WatermarkBits]) -> Result<Tensor> {
        let mut ids = Vec::with_capacity(ws.len() * self.watermark_len);
        for w in ws {
            self.check_len(w)?;
            ids.extend(encode_indices(w).indices().iter().map(|&i| i as u32));
        }
        let ids = Tensor::new(ids.as_slice(), self.table.device())?;
        let flat = self.table.index_select(&ids, 0)?;
        Ok(flat.reshape((ws.len(), self.watermark_len, self.dim))?)
    }

    fn check_len(&self, w: &WatermarkBits) -> Result<()> {
        if w.len() != self.watermark_len {
            return Err(Error::InvalidWatermark(format!(
                "watermark length {} does not match table length {}",
                w.len(),
                self.watermark_len
            )));
        }
        Ok(())
    }
}

/// Single-head cross-attention with a residual connection.
///
/// Queries come from image features (C channels), keys/values from watermark
/// features (D dims); the value projection maps back to C so the attended
/// output adds onto the flattened image features.
pub struct FusionBlock {
    w_q: Tensor, // (A, C)
    w_k: Tensor, // (A, D)
    w_v: Tensor, // (C, D)
    channels: usize,
    attn_dim: usize,
}

impl FusionBlock {
    pub fn new(
        params: &mut ParamRegistry,
        name: &str,
        channels: usize,
        embed_dim: usize,
        attn_dim: usize,
    ) -> Result<Self> {
        let w_q = params.get(
            &format!("{name}.w_q"),
            (attn_dim, channels),
            Init::KaimingUniform { fan_in: channels },
        )?;
        let w_k = params.get(
            &format!("{name}.w_k"),
            (attn_dim, embed_dim),
            Init::KaimingUniform { fan_in: embed_dim },
        )?;
        let w_v = params.get(
            &format!("{name}.w_v"),
            (channels, embed_dim),
            Init::KaimingUniform { fan_in: embed_dim },
        )?;
        Ok(FusionBlock { w_q, w_k, w_v, channels, attn_dim })
    }

    /// softmax(Q K^T / sqrt(d)): (B, H*W, L). Rows sum to one.
    pub fn attention_weights(&self, x: &Tensor, e_w: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(Error::shape(format!("fuse: {c} channels, block expects {}", self.channels)));
        }
        let x_f = x.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()?; // (B, HW, C)
        let q = x_f.broadcast_matmul(&self.w_q.t()?)?; // (B, HW, A)
        let k = e_w.broadcast_matmul(&self.w_k.t()?)?; // (B, L, A)
        let scores = q
            .matmul(&k.transpose(1, 2)?.contiguous()?)?
            .affine(1.0 / (self.attn_dim as f64).sqrt(), 0.0)?;
        Ok(softmax(&scores, candle_core::D::Minus1)?)
    }

    /// Fuse watermark features into image features; shape-preserving.
    pub fn fuse(&self, x: &Tensor, e_w: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let weights = self.attention_weights(x, e_w)?; // (B, HW, L)
        let v = e_w.broadcast_matmul(&self.w_v.t()?)?; // (B, L, C)
        let attended = weights.matmul(&v)?; // (B, HW, C)
        let x_f = x.reshape((b, c, h * w))?.transpose(1, 2)?;
        let out = (x_f + attended)?;
        Ok(out.transpose(1, 2)?.reshape((b, c, h, w))?.contiguous()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamRegistry;
    use crate::rng::SeedTree;
    use candle_core::{Device, Var};

    fn wm(bits: &[u8]) -> WatermarkBits {
        WatermarkBits::new(bits.to_vec()).unwrap()
    }

    fn registry(seed: u64, dtype: DType) -> ParamRegistry {
        ParamRegistry::trainable(SeedTree::new(seed), dtype, &Device::Cpu)
    }

    #[test]
    fn lookup_selects_expected_rows() {
        let mut params = registry(1, DType::F32);
        let table = EmbeddingTable::new(&mut params, "emb", 4, 8).unwrap();
        let raw = table.table().to_vec2::<f32>().unwrap();

        let zeros = table.lookup(&wm(&[0, 0, 0, 0])).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(zeros, raw[0..4].to_vec());
        let ones = table.lookup(&wm(&[1, 1, 1, 1])).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(ones, raw[4..8].to_vec());

        // flipping bit i changes row i only
        let a = table.lookup(&wm(&[0, 1, 0, 0])).unwrap().to_vec2::<f32>().unwrap();
        let b = table.lookup(&wm(&[0, 1, 1, 0])).unwrap().to_vec2::<f32>().unwrap();
        for i in 0..4 {
            if i == 2 {
                assert_ne!(a[i], b[i]);
            } else {
                assert_eq!(a[i], b[i]);
            }
        }
        // size mismatch
        assert!(table.lookup(&wm(&[0, 1])).is_err());
    }

    #[test]
    fn zero_value_projection_is_exact_passthrough() {
        let dev = Device::Cpu;
        let mut params = registry(2, DType::F32);
        let table = EmbeddingTable::new(&mut params, "emb", 16, 8).unwrap();
        let block = FusionBlock::new(&mut params, "fuse", 8, 8, 8).unwrap();
        // zero out W_v through its var
        for (name, var) in params.vars() {
            if name == "fuse.w_v" {
                var.set(&Tensor::zeros((8, 8), DType::F32, &dev).unwrap()).unwrap();
            }
        }
        let tree = SeedTree::new(7);
        let mut rng = tree.stream("x", 0);
        let x = crate::rng::normal_tensor(&mut rng, (2, 8, 4, 4), DType::F32, &dev).unwrap();
        let ws = vec![
            WatermarkBits::random(16, &mut tree.stream("w", 0)).unwrap(),
            WatermarkBits::random(16, &mut tree.stream("w", 1)).unwrap(),
        ];
        let e_w = table.lookup_batch(&ws).unwrap();
        let out = block.fuse(&x, &e_w).unwrap();
        let a = x.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = out.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b, "passthrough must be bit-exact");
        // output shape contract
        assert_eq!(out.dims(), &[2, 8, 4, 4]);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let dev = Device::Cpu;
        let mut params = registry(3, DType::F32);
        let table = EmbeddingTable::new(&mut params, "emb", 16, 8).unwrap();
        let block = FusionBlock::new(&mut params, "fuse", 8, 8, 8).unwrap();
        let tree = SeedTree::new(8);
        let mut rng = tree.stream("x", 0);
        let x = crate::rng::normal_tensor(&mut rng, (1, 8, 4, 4), DType::F32, &dev).unwrap();
        let w = WatermarkBits::random(16, &mut rng).unwrap();
        let e_w = table.lookup_batch(std::slice::from_ref(&w)).unwrap();
        let weights = block.attention_weights(&x, &e_w).unwrap();
        assert_eq!(weights.dims(), &[1, 16, 16]);
        let sums = weights.sum(candle_core::D::Minus1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(sums.iter().all(|&s| (s - 1.0).abs() < 1e-6));
    }

    /// Central-difference gradient check of the fused scalar mean against
    /// autodiff, in f64, on a 2x2 spatial toy instance.
    #[test]
    fn fuse_gradient_matches_finite_differences() {
        let dev = Device::Cpu;
        let l = 4usize;
        let (c, d, a_dim) = (3usize, 5usize, 4usize);
        let tree = SeedTree::new(9);
        let mut rng = tree.stream("g", 0);

        let x = Var::from_tensor(&crate::rng::normal_tensor(&mut rng, (1, c, 2, 2), DType::F64, &dev).unwrap()).unwrap();
        let e_w = Var::from_tensor(&crate::rng::normal_tensor(&mut rng, (1, l, d), DType::F64, &dev).unwrap()).unwrap();
        let w_q = Var::from_tensor(&crate::rng::normal_tensor(&mut rng, (a_dim, c), DType::F64, &dev).unwrap()).unwrap();
        let w_k = Var::from_tensor(&crate::rng::normal_tensor(&mut rng, (a_dim, d), DType::F64, &dev).unwrap()).unwrap();
        let w_v = Var::from_tensor(&crate::rng::normal_tensor(&mut rng, (c, d), DType::F64, &dev).unwrap()).unwrap();

        let block = FusionBlock {
            w_q: w_q.as_tensor().clone(),
            w_k: w_k.as_tensor().clone(),
            w_v: w_v.as_tensor().clone(),
            channels: c,
            attn_dim: a_dim,
        };
        // scalar objective: weighted mean so the gradient is non-uniform
        let probe = crate::rng::normal_tensor(&mut rng, (1, c, 2, 2), DType::F64, &dev).unwrap();
        let objective = |block: &FusionBlock, x: &Tensor, e_w: &Tensor| -> f64 {
            let out = block.fuse(x, e_w).unwrap();
            (out * &probe).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
        };
        let scalar = (block.fuse(x.as_tensor(), e_w.as_tensor()).unwrap() * &probe)
            .unwrap()
            .sum_all()
            .unwrap();
        let grads = scalar.backward().unwrap();

        let h = 1e-5;
        let vars: [(&str, &Var); 5] = [("x", &x), ("e_w", &e_w), ("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v)];
        for (name, var) in vars {
            let grad = grads.get(var).unwrap_or_else(|| panic!("missing grad {name}"));
            let gflat = grad.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let base = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let dims = var.as_tensor().dims().to_vec();
            let mut coord_rng = tree.stream("coords", fnv(name));
            for _ in 0..6 {
                let idx = rand::Rng::gen_range(&mut coord_rng, 0..base.len());
                let eval = |delta: f64| -> f64 {
                    let mut data = base.clone();
                    data[idx] += delta;
                    let t = Tensor::from_vec(data, dims.as_slice(), &dev).unwrap();
                    let blk = FusionBlock {
                        w_q: if name == "w_q" { t.clone() } else { w_q.as_tensor().clone() },
                        w_k: if name == "w_k" { t.clone() } else { w_k.as_tensor().clone() },
                        w_v: if name == "w_v" { t.clone() } else { w_v.as_tensor().clone() },
                        channels: c,
                        attn_dim: a_dim,
                    };
                    let xx = if name == "x" { t.clone() } else { x.as_tensor().clone() };
                    let ee = if name == "e_w" { t.clone() } else { e_w.as_tensor().clone() };
                    objective(&blk, &xx, &ee)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let ad = gflat[idx];
                let denom = fd.abs().max(ad.abs()).max(1e-8);
                assert!(
                    (fd - ad).abs() / denom < 1e-3,
                    "{name}[{idx}]: fd={fd} ad={ad}"
                );
            }
        }
    }

    fn fnv(s: &str) -> u64 {
        s.bytes().fold(0xcbf29ce484222325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x100000001b3)
        })
    }
}
