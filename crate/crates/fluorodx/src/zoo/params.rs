//! Named parameter storage for backbones: loads from a tensor map or draws a
//! deterministic initialization per tensor name.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use fluorodx_core::rng;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

/// Where backbone parameters come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightSource {
    /// `<dir>/<arch>.safetensors` with torchvision parameter names, verified
    /// against the hex digest in `<arch>.safetensors.sha256`.
    Pretrained(PathBuf),
    /// Deterministic random initialization keyed by seed and tensor name.
    Seeded(u64),
}

impl std::fmt::Display for WeightSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Pretrained(dir) => write!(f, "pretrained:{}", dir.display()),
            Self::Seeded(seed) => write!(f, "seeded:{seed}"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// Normal with std `sqrt(2 / fan_in)`, fan_in = dim1 · receptive field.
    KaimingFanIn,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    XavierUniform,
    Normal(f64),
    Uniform(f64),
    Const(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Weight,
    /// Batch-norm running statistics: stored and checkpointed, never counted
    /// as parameters and never trained.
    Buffer,
}

#[derive(Debug, Clone)]
pub(crate) struct Entry {
    pub name: String,
    pub tensor: Tensor,
    pub var: Option<Var>,
    pub kind: Kind,
}

enum Source {
    Seeded(u64),
    Map(HashMap<String, Tensor>),
}

pub(crate) struct ParamStore {
    source: Source,
    trainable: bool,
    device: Device,
    entries: Vec<Entry>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).at(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl ParamStore {
    pub fn seeded(seed: u64, trainable: bool) -> Self {
        Self {
            source: Source::Seeded(seed),
            trainable,
            device: Device::Cpu,
            entries: Vec::new(),
        }
    }

    pub fn from_map(map: HashMap<String, Tensor>, trainable: bool) -> Self {
        Self {
            source: Source::Map(map),
            trainable,
            device: Device::Cpu,
            entries: Vec::new(),
        }
    }

    /// Loads `<dir>/<arch>.safetensors` after checking its digest.
    pub fn pretrained(dir: &Path, arch: &str, trainable: bool) -> Result<Self> {
        let path = dir.join(format!("{arch}.safetensors"));
        let unavailable = |reason: String| Error::WeightsUnavailable {
            arch: arch.to_string(),
            path: path.clone(),
            reason,
        };
        if !path.is_file() {
            return Err(unavailable("file not found".into()));
        }
        let sidecar = dir.join(format!("{arch}.safetensors.sha256"));
        let expected = std::fs::read_to_string(&sidecar).map_err(|e| unavailable(format!("checksum file {}: {e}", sidecar.display())))?;
        let expected = expected.split_whitespace().next().unwrap_or_default().to_ascii_lowercase();
        let actual = sha256_file(&path)?;
        if expected != actual {
            return Err(Error::Checksum { path, expected, actual });
        }
        let map = candle_core::safetensors::load(&path, &Device::Cpu)?;
        Ok(Self::from_map(map, trainable))
    }

    pub fn get(&mut self, name: &str, shape: &[usize], init: Init, kind: Kind) -> Result<Tensor> {
        let tensor = match &mut self.source {
            Source::Seeded(seed) => seeded_tensor(*seed, name, shape, init, &self.device)?,
            Source::Map(map) => {
                let t = map.remove(name).ok_or_else(|| Error::TensorShape {
                    name: name.to_string(),
                    expected: shape.to_vec(),
                    found: Vec::new(),
                })?;
                if t.dims() != shape {
                    return Err(Error::TensorShape {
                        name: name.to_string(),
                        expected: shape.to_vec(),
                        found: t.dims().to_vec(),
                    });
                }
                t.to_dtype(DType::F32)?
            }
        };
        let var = if self.trainable && kind == Kind::Weight {
            Some(Var::from_tensor(&tensor)?)
        } else {
            None
        };
        let tensor = var.as_ref().map(|v| v.as_tensor().clone()).unwrap_or(tensor);
        self.entries.push(Entry {
            name: name.to_string(),
            tensor: tensor.clone(),
            var,
            kind,
        });
        Ok(tensor)
    }

    pub fn into_entries(self) -> Vec<Entry> {
        self.entries
    }
}

fn fans(shape: &[usize]) -> (f64, f64) {
    let receptive: usize = shape.iter().skip(2).product();
    let fan_in = shape.get(1).copied().unwrap_or(1) * receptive;
    let fan_out = shape.first().copied().unwrap_or(1) * receptive;
    (fan_in as f64, fan_out as f64)
}

pub(crate) fn seeded_tensor(seed: u64, name: &str, shape: &[usize], init: Init, device: &Device) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let mut r = rng::stream(seed, &[b"weights", name.as_bytes()]);
    let (fan_in, fan_out) = fans(shape);
    let normal = |std: f64, r: &mut rng::StreamRng| -> Vec<f32> {
        let d = Normal::new(0.0, std).expect("finite std");
        (0..n).map(|_| d.sample(r) as f32).collect()
    };
    let uniform = |bound: f64, r: &mut rng::StreamRng| -> Vec<f32> {
        if bound == 0.0 {
            return vec![0.0; n];
        }
        let d = Uniform::new(-bound, bound).expect("positive bound");
        (0..n).map(|_| r.sample(d) as f32).collect()
    };
    let data = match init {
        Init::KaimingFanIn => normal((2.0 / fan_in).sqrt(), &mut r),
        Init::XavierUniform => uniform((6.0 / (fan_in + fan_out)).sqrt(), &mut r),
        Init::Normal(std) => normal(std, &mut r),
        Init::Uniform(bound) => uniform(bound, &mut r),
        Init::Const(v) => vec![v; n],
    };
    Ok(Tensor::from_vec(data, shape, device)?)
}
