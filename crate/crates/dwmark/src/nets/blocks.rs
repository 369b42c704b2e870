//! Building blocks shared by the diffusion encoder, the watermark decoder and
//! the convolutional autoencoders: bias-carrying conv/linear layers built from
//! the parameter registry, a group norm that stays in the tensor's dtype, a
//! pre-activation residual block with optional timestep conditioning, and the
//! sinusoidal timestep embedding.

use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};
use crate::params::{Init, ParamRegistry};

pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        params: &mut ParamRegistry,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let weight = params.get(
            &format!("{name}.weight"),
            (out_ch, in_ch, kernel, kernel),
            Init::KaimingUniform { fan_in },
        )?;
        let bias = params.get(
            &format!("{name}.bias"),
            (out_ch,),
            Init::KaimingUniform { fan_in },
        )?;
        Ok(Conv2d { weight, bias, stride, padding })
    }

    /// Zero-initialized variant, used for output layers so an untrained
    /// network predicts zeros.
    pub fn new_zeroed(
        params: &mut ParamRegistry,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let weight = params.get(
            &format!("{name}.weight"),
            (out_ch, in_ch, kernel, kernel),
            Init::Const(0.0),
        )?;
        let bias = params.get(&format!("{name}.bias"), (out_ch,), Init::Const(0.0))?;
        Ok(Conv2d { weight, bias, stride, padding })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let c = self.bias.dims1()?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

pub struct Linear {
    weight: Tensor, // (out, in)
    bias: Tensor,
}

impl Linear {
    pub fn new(params: &mut ParamRegistry, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = params.get(
            &format!("{name}.weight"),
            (out_dim, in_dim),
            Init::KaimingUniform { fan_in: in_dim },
        )?;
        let bias = params.get(
            &format!("{name}.bias"),
            (out_dim,),
            Init::KaimingUniform { fan_in: in_dim },
        )?;
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Group normalization over (C/G, H, W) groups, computed in the input dtype.
pub struct GroupNorm {
    weight: Tensor,
    bias: Tensor,
    groups: usize,
    eps: f64,
}

impl GroupNorm {
    pub fn new(params: &mut ParamRegistry, name: &str, groups: usize, channels: usize) -> Result<Self> {
        if channels % groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "{channels} channels not divisible by {groups} groups"
            )));
        }
        let weight = params.get(&format!("{name}.weight"), (channels,), Init::Const(1.0))?;
        let bias = params.get(&format!("{name}.bias"), (channels,), Init::Const(0.0))?;
        Ok(GroupNorm { weight, bias, groups, eps: 1e-5 })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let grouped = x.reshape((b, self.groups, c / self.groups * h * w))?;
        let mean = grouped.mean_keepdim(D::Minus1)?;
        let centered = grouped.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let normed = normed.reshape((b, c, h, w))?;
        Ok(normed
            .broadcast_mul(&self.weight.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

pub fn norm_groups(channels: usize) -> usize {
    for g in [8, 4, 2, 1] {
        if channels % g == 0 {
            return g;
        }
    }
    1
}

/// Pre-activation residual block with optional additive timestep conditioning.
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time_proj: Option<Linear>,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new(
        params: &mut ParamRegistry,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        time_dim: Option<usize>,
    ) -> Result<Self> {
        let norm1 = GroupNorm::new(params, &format!("{name}.norm1"), norm_groups(in_ch), in_ch)?;
        let conv1 = Conv2d::new(params, &format!("{name}.conv1"), in_ch, out_ch, 3, 1, 1)?;
        let time_proj = match time_dim {
            Some(d) => Some(Linear::new(params, &format!("{name}.time_proj"), d, out_ch)?),
            None => None,
        };
        let norm2 = GroupNorm::new(params, &format!("{name}.norm2"), norm_groups(out_ch), out_ch)?;
        let conv2 = Conv2d::new(params, &format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1)?;
        let skip = if in_ch != out_ch {
            Some(Conv2d::new(params, &format!("{name}.skip"), in_ch, out_ch, 1, 1, 0)?)
        } else {
            None
        };
        Ok(ResBlock { norm1, conv1, time_proj, norm2, conv2, skip })
    }

    pub fn forward(&self, x: &Tensor, t_emb: Option<&Tensor>) -> Result<Tensor> {
        let mut h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        if let Some(proj) = &self.time_proj {
            let t_emb = t_emb.ok_or_else(|| {
                Error::InvalidArgument("time-conditioned block called without embedding".into())
            })?;
            let bias = proj.forward(&t_emb.silu()?)?; // (B, out)
            let (b, c) = bias.dims2()?;
            h = h.broadcast_add(&bias.reshape((b, c, 1, 1))?)?;
        }
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let skip = match &self.skip {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok((h + skip)?)
    }
}

/// Sinusoidal embedding of integer timesteps: (B, dim).
pub fn timestep_embedding(
    ts: &[usize],
    dim: usize,
    dtype: DType,
    device: &candle_core::Device,
) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            data.push((t as f64 * freq).sin());
        }
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            data.push((t as f64 * freq).cos());
        }
    }
    Ok(Tensor::from_vec(data, (ts.len(), dim), device)?.to_dtype(dtype)?)
}

/// Nearest-neighbor 2x upsample followed by a 3x3 conv.
pub struct Upsample {
    conv: Conv2d,
}

impl Upsample {
    pub fn new(params: &mut ParamRegistry, name: &str, channels: usize) -> Result<Self> {
        Ok(Upsample {
            conv: Conv2d::new(params, &format!("{name}.conv"), channels, channels, 3, 1, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let up = x.upsample_nearest2d(2 * h, 2 * w)?;
        self.conv.forward(&up)
    }
}
