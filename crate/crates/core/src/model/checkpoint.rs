use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::params::{EncoderVariant, ModelParams};
use crate::data::Schema;
use crate::error::{Error, Result};
use crate::ndcore::{decode_blob, encode_blob, TensorManifest};

pub const BLOB_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "checkpoint.json";
const FORMAT: &str = "tabdro-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub mask_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub schema_hash: String,
    pub variant: EncoderVariant,
    pub d: usize,
    pub mask_rate: f64,
    pub seed: u64,
    pub schema: Schema,
    pub tensors: TensorManifest,
}

/// Writes `params.bin` and `checkpoint.json` into `dir`; returns the blob hash.
pub fn save_checkpoint(model: &ModelParams, meta: CheckpointMeta, dir: &Path) -> Result<String> {
    std::fs::create_dir_all(dir)?;
    let (bytes, tensors) = encode_blob(&model.params);
    let hash = tensors.blob_sha256.clone();
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        schema_hash: model.schema.hash(),
        variant: model.variant,
        d: model.d,
        mask_rate: meta.mask_rate,
        seed: meta.seed,
        schema: model.schema.as_ref().clone(),
        tensors,
    };
    crate::util::write_atomic(&dir.join(BLOB_FILE), &bytes)?;
    crate::util::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(hash)
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let manifest: CheckpointManifest = crate::util::read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format != FORMAT {
        return Err(Error::artifact(dir, format!("unsupported format {:?}", manifest.format)));
    }
    manifest.schema.validate()?;
    if manifest.schema.hash() != manifest.schema_hash {
        return Err(Error::artifact(dir, "schema hash mismatch"));
    }
    let blob_path = dir.join(BLOB_FILE);
    let bytes = std::fs::read(&blob_path)
        .map_err(|e| Error::artifact(&blob_path, format!("cannot read: {e}")))?;
    let params = decode_blob(&bytes, &manifest.tensors).map_err(|e| Error::artifact(&blob_path, e.to_string()))?;
    let model = ModelParams::from_params(Arc::new(manifest.schema), manifest.d, manifest.variant, params)?;
    Ok((
        model,
        CheckpointMeta {
            mask_rate: manifest.mask_rate,
            seed: manifest.seed,
        },
    ))
}
