//! Binary model checkpoints.
//!
//! Layout: magic "TCGL", version u32, config block (u32 length + key=value
//! text), epoch u32, tensor count u32, then per tensor: name-length u32,
//! name bytes, rank u32, dims u32[], values f64 little-endian. A CRC32 of
//! everything preceding it closes the file. Optimizer momenta ride along as
//! tensors named "opt.<parameter>".

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TcglError};
use crate::harness::config::TrainConfig;
use crate::harness::model::Model;
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"TCGL";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub model: Model,
    /// Momentum buffers keyed by parameter name; empty before any step.
    pub velocity: BTreeMap<String, Tensor>,
}

impl ModelCheckpoint {
    pub fn fresh(config: TrainConfig) -> Self {
        let model = Model::init(&config);
        ModelCheckpoint { config, epoch: 0, model, velocity: BTreeMap::new() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = self.config.serialize();
        buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        buf.extend_from_slice(cfg.as_bytes());
        buf.extend_from_slice(&(self.epoch as u32).to_le_bytes());

        let params = self.model.named();
        let count = params.len() + self.velocity.len();
        buf.extend_from_slice(&(count as u32).to_le_bytes());
        for (name, tensor) in params {
            write_tensor(&mut buf, &name, tensor);
        }
        for (name, tensor) in &self.velocity {
            write_tensor(&mut buf, &format!("opt.{name}"), tensor);
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(TcglError::CheckpointFormat("truncated checkpoint".into()));
        }
        let (payload, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(TcglError::CheckpointFormat(format!(
                "checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"
            )));
        }
        let mut r = payload;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TcglError::CheckpointFormat("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(TcglError::CheckpointFormat(format!(
                "unsupported version {version}"
            )));
        }
        let cfg_len = read_u32(&mut r)? as usize;
        let mut cfg_bytes = vec![0u8; cfg_len];
        r.read_exact(&mut cfg_bytes)?;
        let cfg_text = String::from_utf8(cfg_bytes)
            .map_err(|_| TcglError::CheckpointFormat("config block not utf-8".into()))?;
        let config = TrainConfig::parse(&cfg_text)?;
        let epoch = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;

        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let (name, tensor) = read_tensor(&mut r)?;
            if tensors.insert(name.clone(), tensor).is_some() {
                return Err(TcglError::CheckpointFormat(format!(
                    "duplicate tensor '{name}'"
                )));
            }
        }

        let mut model = Model::init(&config);
        for (name, slot) in model.named_mut() {
            let stored = tensors.remove(&name).ok_or_else(|| {
                TcglError::CheckpointFormat(format!("missing parameter '{name}'"))
            })?;
            if stored.shape != slot.shape {
                return Err(TcglError::CheckpointFormat(format!(
                    "parameter '{name}': shape {:?} in file, model expects {:?}",
                    stored.shape, slot.shape
                )));
            }
            *slot = stored;
        }
        let mut velocity = BTreeMap::new();
        for (name, tensor) in tensors {
            match name.strip_prefix("opt.") {
                Some(param) => {
                    velocity.insert(param.to_string(), tensor);
                }
                None => {
                    return Err(TcglError::CheckpointFormat(format!(
                        "unexpected tensor '{name}'"
                    )));
                }
            }
        }
        Ok(ModelCheckpoint { config, epoch, model, velocity })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn write_tensor(buf: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
    for d in &tensor.shape {
        buf.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in &tensor.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_tensor(r: &mut &[u8]) -> Result<(String, Tensor)> {
    let name_len = read_u32(r)? as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| TcglError::CheckpointFormat("tensor name not utf-8".into()))?;
    let rank = read_u32(r)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Ok((name, Tensor::new(shape, data)))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise_stable() {
        let mut ckpt = ModelCheckpoint::fresh(TrainConfig::default());
        ckpt.epoch = 7;
        ckpt.velocity
            .insert("proj.w1".into(), Tensor::zeros(vec![32, 32]));
        let bytes = ckpt.to_bytes();
        let loaded = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_bytes(), bytes);
        assert_eq!(loaded.epoch, 7);
        assert_eq!(loaded.config, ckpt.config);
    }

    #[test]
    fn corruption_is_detected() {
        let ckpt = ModelCheckpoint::fresh(TrainConfig::default());
        let mut bytes = ckpt.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(ModelCheckpoint::from_bytes(&bytes).is_err());
        assert!(ModelCheckpoint::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn parameters_survive_round_trip() {
        let mut ckpt = ModelCheckpoint::fresh(TrainConfig::default());
        // poke a recognizable value into one parameter
        ckpt.model.named_mut()[0].1.data[0] = 42.5;
        let loaded = ModelCheckpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(loaded.model.named()[0].1.data[0], 42.5);
    }
}
