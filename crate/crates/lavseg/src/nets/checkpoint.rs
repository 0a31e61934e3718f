//! Checkpoint serialization (`LSG1` format).
//!
//! Layout: magic `LSG1`, u32 version, u32 JSON length, a JSON descriptor
//! (architecture, training metadata, and a tensor table), u32 tensor
//! count, then per tensor a u8 rank, rank u32 dims, and little-endian
//! f32 data. Tensors appear in the network's canonical parameter order.

use std::convert::TryInto;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::raster::BandCombo;
use crate::rng::RngStream;

use super::network::Network;
use super::ArchConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LSG1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub dims: [u32; 4],
}

/// JSON descriptor stored inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchConfig,
    pub combo: Option<BandCombo>,
    pub seed: u64,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_loss: f64,
}

/// A serializable snapshot of a trained network.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub table: Vec<TensorInfo>,
    pub tensors: Vec<Tensor<f32>>,
}

impl Checkpoint {
    pub fn from_network(net: &Network<f32>, meta: CheckpointMeta) -> Checkpoint {
        let params = net.params();
        let table = params
            .iter()
            .map(|p| TensorInfo {
                name: p.name.clone(),
                dims: [
                    p.value.n as u32,
                    p.value.c as u32,
                    p.value.h as u32,
                    p.value.w as u32,
                ],
            })
            .collect();
        let tensors = params.iter().map(|p| p.value.clone()).collect();
        Checkpoint {
            meta,
            table,
            tensors,
        }
    }

    /// Rebuild the network this checkpoint describes.
    pub fn to_network(&self) -> Result<Network<f32>> {
        let mut rng = RngStream::derive(self.meta.seed, "load", 0);
        let mut net: Network<f32> = Network::build(&self.meta.arch, &mut rng)?;
        {
            let mut params = net.params_mut();
            if params.len() != self.tensors.len() {
                return Err(Error::Config(format!(
                    "checkpoint has {} tensors, architecture needs {}",
                    self.tensors.len(),
                    params.len()
                )));
            }
            for (p, t) in params.iter_mut().zip(&self.tensors) {
                if p.value.shape() != t.shape() {
                    return Err(Error::Config(format!(
                        "tensor {} has shape {:?}, expected {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    )));
                }
                p.value = t.clone();
            }
        }
        Ok(net)
    }
}

/// Serialize a checkpoint to the `LSG1` format.
pub fn save_checkpoint(cp: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let doc = serde_json::json!({
        "meta": cp.meta,
        "tensors": cp.table,
    });
    let json = serde_json::to_string(&doc).expect("checkpoint meta serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(json.as_bytes());
    buf.extend_from_slice(&(cp.tensors.len() as u32).to_le_bytes());
    for t in &cp.tensors {
        buf.push(4u8);
        for d in [t.n, t.c, t.h, t.w] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Load a checkpoint from the `LSG1` format.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = std::fs::read(path)?;
    parse_checkpoint(&buf, &path.display().to_string())
}

pub(crate) fn parse_checkpoint(buf: &[u8], path: &str) -> Result<Checkpoint> {
    let fail = |offset: usize, reason: String| Error::Format {
        path: path.to_string(),
        offset: offset as u64,
        reason,
    };
    if buf.len() < 12 {
        return Err(fail(0, "file shorter than header".into()));
    }
    if &buf[..4] != CHECKPOINT_MAGIC {
        return Err(fail(0, format!("bad magic {:?}, expected \"LSG1\"", &buf[..4])));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let json_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if buf.len() < 12 + json_len + 4 {
        return Err(fail(buf.len(), "truncated descriptor".into()));
    }
    let json = std::str::from_utf8(&buf[12..12 + json_len])
        .map_err(|e| fail(12, format!("descriptor is not UTF-8: {e}")))?;
    #[derive(Deserialize)]
    struct Doc {
        meta: CheckpointMeta,
        tensors: Vec<TensorInfo>,
    }
    let doc: Doc =
        serde_json::from_str(json).map_err(|e| fail(12, format!("bad descriptor: {e}")))?;
    let mut pos = 12 + json_len;
    let count = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    if count != doc.tensors.len() {
        return Err(fail(
            pos - 4,
            format!("tensor count {count} does not match table ({})", doc.tensors.len()),
        ));
    }
    let mut tensors = Vec::with_capacity(count);
    for info in &doc.tensors {
        if pos + 1 + 16 > buf.len() {
            return Err(fail(buf.len(), "truncated tensor header".into()));
        }
        let rank = buf[pos];
        pos += 1;
        if rank != 4 {
            return Err(fail(pos - 1, format!("unsupported tensor rank {rank}")));
        }
        let mut dims = [0u32; 4];
        for d in &mut dims {
            *d = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap());
            pos += 4;
        }
        if dims != info.dims {
            return Err(fail(
                pos - 16,
                format!("tensor {} dims {:?} do not match table {:?}", info.name, dims, info.dims),
            ));
        }
        let len = dims.iter().map(|&d| d as usize).product::<usize>();
        if pos + len * 4 > buf.len() {
            return Err(fail(buf.len(), format!("truncated data for tensor {}", info.name)));
        }
        let mut data = Vec::with_capacity(len);
        for (i, chunk) in buf[pos..pos + len * 4].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(fail(pos + i * 4, format!("non-finite value in tensor {}", info.name)));
            }
            data.push(v);
        }
        pos += len * 4;
        tensors.push(Tensor::from_vec(
            dims[0] as usize,
            dims[1] as usize,
            dims[2] as usize,
            dims[3] as usize,
            data,
        ));
    }
    if pos != buf.len() {
        return Err(fail(pos, format!("{} trailing bytes", buf.len() - pos)));
    }
    Ok(Checkpoint {
        meta: doc.meta,
        table: doc.tensors,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{ArchConfig, ArchKind};

    fn toy_checkpoint() -> Checkpoint {
        let cfg = ArchConfig {
            arch: ArchKind::UNet,
            in_channels: 2,
            stages: 1,
            base_filters: 2,
            dropout_rate: 0.0,
            init: super::super::InitScheme::LecunNormal,
            l2_lambda: 0.0,
        };
        let mut rng = RngStream::derive(11, "init", 0);
        let net: Network<f32> = Network::build(&cfg, &mut rng).unwrap();
        Checkpoint::from_network(
            &net,
            CheckpointMeta {
                arch: cfg,
                combo: None,
                seed: 11,
                best_epoch: 3,
                stopped_epoch: 5,
                best_val_loss: 0.25,
            },
        )
    }

    #[test]
    fn roundtrip_bitwise() {
        let cp = toy_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lsg");
        save_checkpoint(&cp, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.meta, cp.meta);
        assert_eq!(loaded.table, cp.table);
        for (a, b) in loaded.tensors.iter().zip(&cp.tensors) {
            let bits_a: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn corrupted_magic_rejected() {
        let cp = toy_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lsg");
        save_checkpoint(&cp, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            parse_checkpoint(&bytes, "mem"),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn wrong_version_rejected() {
        let cp = toy_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lsg");
        save_checkpoint(&cp, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        assert!(matches!(parse_checkpoint(&bytes, "mem"), Err(Error::Format { .. })));
    }

    #[test]
    fn byte_length_matches_header_plus_tensors() {
        let cp = toy_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lsg");
        save_checkpoint(&cp, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let tensor_bytes: usize = cp.tensors.iter().map(|t| 1 + 16 + t.len() * 4).sum();
        assert_eq!(bytes.len(), 12 + json_len + 4 + tensor_bytes);
    }

    #[test]
    fn load_restores_identical_network() {
        let cp = toy_checkpoint();
        let net = cp.to_network().unwrap();
        for (p, t) in net.params().iter().zip(&cp.tensors) {
            assert_eq!(p.value.data, t.data);
        }
    }
}
