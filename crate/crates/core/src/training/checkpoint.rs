//! Checkpoint file: the 5 magic bytes `HICL1`, a little-endian `u32` header
//! length, a UTF-8 JSON header, then every parameter as little-endian `f64`
//! in [`EncoderConfig::layout`] order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{HiclError, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 5] = b"HICL1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub step: usize,
    pub dev_metric: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    step: usize,
    dev_metric: Option<f64>,
    param_count: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            encoder: self.params.config,
            step: self.step,
            dev_metric: self.dev_metric,
            param_count: self.params.flat_len(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| HiclError::Checkpoint(e.to_string()))?;
        let header_len = u32::try_from(json.len()).map_err(|_| HiclError::Checkpoint("header too large".into()))?;
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + 8 * header.param_count);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.params.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(HiclError::Checkpoint("bad magic".into()));
        }
        let rest = &bytes[MAGIC.len()..];
        if rest.len() < 4 {
            return Err(HiclError::Checkpoint(format!("truncated header: expected 4 length bytes, found {}", rest.len())));
        }
        let header_len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        let rest = &rest[4..];
        if rest.len() < header_len {
            return Err(HiclError::Checkpoint(format!(
                "truncated header: expected {header_len} bytes, found {}",
                rest.len()
            )));
        }
        let header: Header =
            serde_json::from_slice(&rest[..header_len]).map_err(|e| HiclError::Checkpoint(format!("bad header: {e}")))?;
        header.encoder.validate()?;
        let layout = header.encoder.layout();
        let expected_params: usize = layout.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if expected_params != header.param_count {
            return Err(HiclError::Checkpoint(format!(
                "dim mismatch: encoder dims imply {expected_params} parameters, header says {}",
                header.param_count
            )));
        }
        let payload = &rest[header_len..];
        let expected_bytes = 8 * expected_params;
        if payload.len() != expected_bytes {
            let what = if payload.len() < expected_bytes { "truncated payload" } else { "oversized payload" };
            return Err(HiclError::Checkpoint(format!(
                "{what}: expected {expected_bytes} bytes, found {}",
                payload.len()
            )));
        }
        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let tensors = layout
            .into_iter()
            .map(|(_, shape)| {
                let n = shape.iter().product();
                Tensor::new(shape, values.by_ref().take(n).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let params = EncoderParams::from_tensors(header.encoder, tensors)?;
        Ok(Self { params, step: header.step, dev_metric: header.dev_metric })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
