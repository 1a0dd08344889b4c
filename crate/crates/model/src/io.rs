//! Model files: magic `GOCTMODL`, a version, the config as key/value pairs,
//! then named tensors. The feature normalization is stored as two extra
//! tensors so a model file is self-contained.

use std::io::{Read, Write};
use std::path::Path;

use goct_core::features::Normalization;

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::model::Model;

pub const MODEL_MAGIC: &[u8; 8] = b"GOCTMODL";
pub const MODEL_VERSION: u32 = 1;

const NORM_MEAN: &str = "norm.mean";
const NORM_STD: &str = "norm.std";

/// A trained model together with the normalization its inputs need.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub normalization: Normalization,
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn put_tensor(w: &mut impl Write, name: &str, shape: &[usize], data: &[f32]) -> std::io::Result<()> {
    put_str(w, name)?;
    put_u32(w, shape.len() as u32)?;
    for &d in shape {
        put_u32(w, d as u32)?;
    }
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn get_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String, ModelError> {
    let n = get_u32(r)? as usize;
    if n > 1 << 16 {
        return Err(ModelError::Format(format!("string length {n} is implausible")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(truncated)?;
    String::from_utf8(b).map_err(|_| ModelError::Format("string is not UTF-8".into()))
}

fn truncated(e: std::io::Error) -> ModelError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        ModelError::Format("file is truncated".into())
    } else {
        ModelError::Io(e)
    }
}

impl Checkpoint {
    pub fn write_to(&self, mut w: impl Write) -> Result<(), ModelError> {
        w.write_all(MODEL_MAGIC)?;
        put_u32(&mut w, MODEL_VERSION)?;
        let pairs = self.model.config.to_pairs();
        put_u32(&mut w, pairs.len() as u32)?;
        for (k, v) in pairs {
            put_str(&mut w, k)?;
            put_str(&mut w, &v)?;
        }
        let tensors = self.model.named();
        put_u32(&mut w, tensors.len() as u32 + 2)?;
        for t in tensors {
            put_tensor(&mut w, &t.name, &t.shape, t.data)?;
        }
        let n = self.normalization.mean.len();
        put_tensor(&mut w, NORM_MEAN, &[n], &self.normalization.mean)?;
        put_tensor(&mut w, NORM_STD, &[n], &self.normalization.std)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MODEL_MAGIC {
            return Err(ModelError::Format("bad magic; not a model file".into()));
        }
        let version = get_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(ModelError::Version { found: version, expected: MODEL_VERSION });
        }
        let mut config = ModelConfig::default();
        for _ in 0..get_u32(&mut r)? {
            let key = get_str(&mut r)?;
            let value = get_str(&mut r)?;
            match config.set(&key, &value) {
                Ok(true) => {}
                Ok(false) => return Err(ModelError::Format(format!("unknown config key `{key}`"))),
                Err(m) => return Err(ModelError::Format(format!("config key `{key}`: {m}"))),
            }
        }
        let mut model = Model::new(config, 0)?;
        let mut mean = None;
        let mut std = None;
        let count = get_u32(&mut r)?;
        let mut seen = 0;
        for _ in 0..count {
            let name = get_str(&mut r)?;
            let rank = get_u32(&mut r)? as usize;
            if rank > 4 {
                return Err(ModelError::Format(format!("tensor `{name}` has rank {rank}")));
            }
            let shape: Vec<usize> = (0..rank).map(|_| get_u32(&mut r).map(|d| d as usize)).collect::<Result<_, _>>()?;
            let len: usize = shape.iter().product();
            if len > 1 << 28 {
                return Err(ModelError::Format(format!("tensor `{name}` is implausibly large")));
            }
            let mut bytes = vec![0u8; len * 4];
            r.read_exact(&mut bytes).map_err(truncated)?;
            let data: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            match name.as_str() {
                NORM_MEAN => mean = Some(data),
                NORM_STD => std = Some(data),
                _ => {
                    let mut tensors = model.named_mut();
                    let Some(slot) = tensors.iter_mut().find(|t| t.name == name) else {
                        return Err(ModelError::Format(format!("unexpected tensor `{name}`")));
                    };
                    if slot.shape != shape {
                        return Err(ModelError::Shape { tensor: name, expected: slot.shape.clone(), got: shape });
                    }
                    *slot.data = data;
                    seen += 1;
                }
            }
        }
        let expected = model.named().len();
        if seen != expected {
            return Err(ModelError::Format(format!("expected {expected} parameter tensors, found {seen}")));
        }
        let (Some(mean), Some(std)) = (mean, std) else {
            return Err(ModelError::Format("normalization tensors missing".into()));
        };
        if mean.len() != model.config.n_mels || std.len() != model.config.n_mels {
            return Err(ModelError::Format("normalization size does not match n_mels".into()));
        }
        Ok(Self { model, normalization: Normalization { mean, std } })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
