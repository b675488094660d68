use serde::{Deserialize, Serialize};

use super::tensor::{ParamSet, ParamTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Offset into the blob, in values (not bytes).
    pub offset: usize,
    pub len: usize,
}

/// Describes the little-endian `f64` blob that holds a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub dtype: String,
    pub total_values: usize,
    pub blob_sha256: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_blob(params: &ParamSet) -> (Vec<u8>, TensorManifest) {
    let mut bytes = Vec::with_capacity(params.n_values() * 8);
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for t in &params.tensors {
        for v in &t.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            trainable: t.trainable,
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    let manifest = TensorManifest {
        dtype: "f64le".into(),
        total_values: offset,
        blob_sha256: crate::util::sha256_hex(&bytes),
        tensors,
    };
    (bytes, manifest)
}

pub fn decode_blob(bytes: &[u8], manifest: &TensorManifest) -> Result<ParamSet> {
    if manifest.dtype != "f64le" {
        return Err(Error::data(format!("unsupported dtype {:?}", manifest.dtype)));
    }
    if bytes.len() != manifest.total_values * 8 {
        return Err(Error::shape(format!(
            "blob holds {} bytes, manifest declares {} values",
            bytes.len(),
            manifest.total_values
        )));
    }
    let digest = crate::util::sha256_hex(bytes);
    if digest != manifest.blob_sha256 {
        return Err(Error::data("blob checksum does not match manifest"));
    }
    let mut out = ParamSet::default();
    let mut expected_offset = 0;
    for e in &manifest.tensors {
        if e.shape.iter().product::<usize>() != e.len || e.offset != expected_offset {
            return Err(Error::shape(format!("manifest entry {} is inconsistent", e.name)));
        }
        let values = bytes[e.offset * 8..(e.offset + e.len) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut t = ParamTensor::new(e.name.clone(), e.shape.clone(), values)?;
        t.trainable = e.trainable;
        out.push(t);
        expected_offset += e.len;
    }
    if expected_offset != manifest.total_values {
        return Err(Error::shape("manifest entries do not cover the blob"));
    }
    Ok(out)
}
