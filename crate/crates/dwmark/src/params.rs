//! Deterministic parameter registry.
//!
//! Networks are built against a [`ParamRegistry`] that either initializes each
//! parameter from a named seed substream or takes it from a loaded checkpoint
//! map. Initialization is keyed by parameter name, so it is independent of
//! construction order, and trainable/frozen storage is decided at build time:
//! frozen parameters are plain tensors that never enter the autodiff graph.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::SeedTree;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform(-bound, bound) with bound = 1/sqrt(fan_in).
    KaimingUniform { fan_in: usize },
    Normal { std: f64 },
    Const(f64),
}

enum Storage {
    Trainable(Var),
    Frozen(Tensor),
}

enum Source {
    Seed(SeedTree),
    Map(HashMap<String, Tensor>),
}

pub struct ParamRegistry {
    device: Device,
    dtype: DType,
    trainable: bool,
    source: Source,
    items: Vec<(String, Storage)>,
}

impl ParamRegistry {
    /// Fresh trainable parameters, initialized from `seeds`.
    pub fn trainable(seeds: SeedTree, dtype: DType, device: &Device) -> Self {
        ParamRegistry {
            device: device.clone(),
            dtype,
            trainable: true,
            source: Source::Seed(seeds),
            items: Vec::new(),
        }
    }

    /// Trainable parameters restored from a checkpoint map.
    pub fn trainable_from(map: HashMap<String, Tensor>, dtype: DType, device: &Device) -> Self {
        ParamRegistry {
            device: device.clone(),
            dtype,
            trainable: true,
            source: Source::Map(map),
            items: Vec::new(),
        }
    }

    /// Frozen parameters restored from a checkpoint map; these are plain
    /// tensors, invisible to backward passes.
    pub fn frozen_from(map: HashMap<String, Tensor>, dtype: DType, device: &Device) -> Self {
        ParamRegistry {
            device: device.clone(),
            dtype,
            trainable: false,
            source: Source::Map(map),
            items: Vec::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn init_tensor<S: Into<candle_core::Shape>>(
        &self,
        seeds: &SeedTree,
        name: &str,
        shape: S,
        init: Init,
    ) -> Result<Tensor> {
        let shape = shape.into();
        let n = shape.elem_count();
        let mut rng = seeds.stream(name, 0);
        let data: Vec<f64> = match init {
            Init::KaimingUniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Normal { std } => (0..n)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * std
                })
                .collect(),
            Init::Const(c) => vec![c; n],
        };
        Ok(Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    /// Fetch or create the parameter `name`; returns a tensor handle that is
    /// part of the autodiff graph when the registry is trainable.
    pub fn get<S: Into<candle_core::Shape>>(
        &mut self,
        name: &str,
        shape: S,
        init: Init,
    ) -> Result<Tensor> {
        let shape: candle_core::Shape = shape.into();
        let value = match &mut self.source {
            Source::Seed(seeds) => {
                let seeds = *seeds;
                self.init_tensor(&seeds, name, shape.clone(), init)?
            }
            Source::Map(map) => {
                let t = map.remove(name).ok_or_else(|| {
                    Error::Checkpoint(format!("missing parameter {name:?} in checkpoint"))
                })?;
                if t.shape() != &shape {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name:?} has shape {:?}, expected {:?}",
                        t.shape(),
                        shape
                    )));
                }
                t.to_dtype(self.dtype)?.to_device(&self.device)?
            }
        };
        if self.trainable {
            let var = Var::from_tensor(&value)?;
            let handle = var.as_tensor().clone();
            self.items.push((name.to_string(), Storage::Trainable(var)));
            Ok(handle)
        } else {
            self.items.push((name.to_string(), Storage::Frozen(value.clone())));
            Ok(value)
        }
    }

    /// Trainable variables in creation order (stable across runs).
    pub fn vars(&self) -> Vec<(String, Var)> {
        self.items
            .iter()
            .filter_map(|(n, s)| match s {
                Storage::Trainable(v) => Some((n.clone(), v.clone())),
                Storage::Frozen(_) => None,
            })
            .collect()
    }

    /// Current parameter values by name (detached).
    pub fn export(&self) -> Result<Vec<(String, Tensor)>> {
        self.items
            .iter()
            .map(|(n, s)| {
                let t = match s {
                    Storage::Trainable(v) => v.as_tensor().detach(),
                    Storage::Frozen(t) => t.clone(),
                };
                Ok((n.clone(), t))
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.items
            .iter()
            .map(|(_, s)| match s {
                Storage::Trainable(v) => v.as_tensor().elem_count(),
                Storage::Frozen(t) => t.elem_count(),
            })
            .sum()
    }
}
