//! `STDN1` weights container: magic, little-endian `u64` manifest length, JSON manifest,
//! then the float32 payloads in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Normalization, StDenseNet, StDenseNetConfig};
use super::tensor::Scalar;
use super::NetError;

pub const MAGIC: &[u8; 5] = b"STDN1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset from the start of the payload section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: StDenseNetConfig,
    pub normalization: Normalization,
    pub tensors: Vec<TensorRecord>,
}

/// Serializes every persistent tensor as float32.
pub fn to_bytes<T: Scalar>(model: &StDenseNet<T>) -> Result<Vec<u8>, NetError> {
    let tensors = model.named_tensors();
    let mut records = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for t in &tensors {
        records.push(TensorRecord {
            name: t.name.clone(),
            shape: t.shape.clone(),
            dtype: "float32".into(),
            offset,
        });
        offset += 4 * t.data.len() as u64;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        normalization: model.normalization().clone(),
        tensors: records,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| NetError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &tensors {
        for v in t.data {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<StDenseNet<f32>, NetError> {
    let bad = |msg: String| NetError::Format(msg);
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("missing STDN1 magic".into()));
    }
    let len_bytes: [u8; 8] = bytes[MAGIC.len()..MAGIC.len() + 8].try_into().expect("eight bytes");
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let payload_start = MAGIC.len() + 8 + manifest_len;
    if bytes.len() < payload_start {
        return Err(bad(format!("manifest length {manifest_len} exceeds file size")));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[MAGIC.len() + 8..payload_start])
        .map_err(|e| bad(format!("invalid manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", manifest.format_version)));
    }
    let payload = &bytes[payload_start..];
    let mut model = StDenseNet::<f32>::build(manifest.config)?;
    if manifest.normalization.mean.len() != model.config().input_channels
        || manifest.normalization.std.len() != model.config().input_channels
    {
        return Err(bad("normalization does not match the input channels".into()));
    }
    model.set_normalization(manifest.normalization);
    let targets = model.named_tensors_mut();
    if targets.len() != manifest.tensors.len() {
        return Err(bad(format!(
            "manifest lists {} tensors, model has {}",
            manifest.tensors.len(),
            targets.len()
        )));
    }
    let mut expected_offset = 0usize;
    for (target, record) in targets.into_iter().zip(&manifest.tensors) {
        if record.name != target.name || record.shape != target.shape || record.dtype != "float32" {
            return Err(bad(format!(
                "tensor record {} {:?} {} does not match expected {} {:?}",
                record.name, record.shape, record.dtype, target.name, target.shape
            )));
        }
        let start = record.offset as usize;
        let end = start + 4 * target.data.len();
        if start != expected_offset || end > payload.len() {
            return Err(bad(format!("tensor {} has an invalid offset", record.name)));
        }
        for (dst, chunk) in target.data.iter_mut().zip(payload[start..end].chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("four bytes"));
        }
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(bad("trailing bytes after the last tensor".into()));
    }
    Ok(model)
}

pub fn save<T: Scalar>(model: &StDenseNet<T>, path: &Path) -> Result<(), NetError> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<StDenseNet<f32>, NetError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stdensenet::Tensor5;

    #[test]
    fn round_trip_is_byte_identical() {
        let model = StDenseNet::<f32>::new(StDenseNetConfig::gradcheck(), 11).unwrap();
        let bytes = to_bytes(&model).unwrap();
        assert_eq!(&bytes[..5], b"STDN1");
        let loaded = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&loaded).unwrap(), bytes);
        let x = Tensor5::full([1, 3, 4, 8, 8], 0.25f32).unwrap();
        assert_eq!(model.logits(&x).unwrap(), loaded.logits(&x).unwrap());
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let model = StDenseNet::<f32>::new(StDenseNetConfig::gradcheck(), 12).unwrap();
        let bytes = to_bytes(&model).unwrap();
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 1]), Err(NetError::Format(_))));
        assert!(matches!(from_bytes(b"STDN2xxxxxxxx"), Err(NetError::Format(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
