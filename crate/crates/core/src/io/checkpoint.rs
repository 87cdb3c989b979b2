//! The `LBX1` checkpoint container.
//!
//! Layout:
//!
//! ```text
//! "LBX1" | u32 LE manifest length | manifest (UTF-8 JSON) | f32 LE payload
//! ```
//!
//! The manifest lists weights in name order with their byte offset into the
//! payload. Weights are stored as `f32` and promoted to `f64` on load.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::labels::LabelTable;
use crate::io::preprocess::PreprocessSpec;
use crate::model::{LayerSpec, Model};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LBX1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

impl WeightEntry {
    fn byte_len(&self) -> Option<usize> {
        self.shape
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub layers: Vec<LayerSpec>,
    pub weights: Vec<WeightEntry>,
    pub input_shape: [usize; 3],
    pub class_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub preprocess: PreprocessSpec,
}

/// Everything a checkpoint carries.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub labels: LabelTable,
    /// Whether `labels` came from the file rather than being generated.
    pub labels_embedded: bool,
    pub preprocess: PreprocessSpec,
}

fn check_preprocess(model: &Model, preprocess: &PreprocessSpec) -> Result<()> {
    preprocess.validate()?;
    let target = [preprocess.height, preprocess.width, preprocess.channels.count()];
    if target != model.input_shape {
        return Err(Error::Validation(format!(
            "preprocess target {target:?} does not match model input shape {:?}",
            model.input_shape
        )));
    }
    Ok(())
}

/// Serializes a model into checkpoint bytes. Identical inputs give identical bytes.
pub fn encode_checkpoint(
    model: &Model,
    labels: Option<&LabelTable>,
    preprocess: &PreprocessSpec,
) -> Result<Vec<u8>> {
    model.validate()?;
    check_preprocess(model, preprocess)?;
    if let Some(l) = labels {
        l.check_class_count(model.class_count)?;
    }

    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(model.weights.len());
    for (name, w) in &model.weights {
        entries.push(WeightEntry {
            name: name.clone(),
            dtype: "f32".into(),
            shape: w.shape().to_vec(),
            offset: payload.len(),
        });
        for &v in w.data() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::Validation(format!(
                    "weight \"{name}\" value {v} does not fit in f32"
                )));
            }
            payload.extend_from_slice(&f.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        layers: model.layers.clone(),
        weights: entries,
        input_shape: model.input_shape,
        class_count: model.class_count,
        labels: labels.map(|l| l.labels().to_vec()),
        preprocess: preprocess.clone(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let json_len = u32::try_from(json.len())
        .map_err(|_| Error::Validation("manifest exceeds 4 GiB".into()))?;

    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            std::str::from_utf8(MAGIC).unwrap()
        )));
    }
    let json_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload_start = HEADER_LEN
        .checked_add(json_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            Error::Integrity(format!(
                "manifest length {json_len} runs past end of file ({} bytes)",
                bytes.len()
            ))
        })?;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..payload_start])
        .map_err(|e| Error::Format(format!("manifest is not valid JSON: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {}, expected {FORMAT_VERSION}",
            manifest.version
        )));
    }
    let payload = &bytes[payload_start..];

    let mut declared = 0usize;
    let mut weights = BTreeMap::new();
    for entry in &manifest.weights {
        if entry.dtype != "f32" {
            return Err(Error::Format(format!(
                "weight \"{}\" has unsupported dtype {}",
                entry.name, entry.dtype
            )));
        }
        let len = entry
            .byte_len()
            .ok_or_else(|| Error::Integrity(format!("weight \"{}\" size overflows", entry.name)))?;
        let end = entry
            .offset
            .checked_add(len)
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| {
                Error::Integrity(format!(
                    "weight \"{}\" spans bytes {}..{} beyond payload of {} bytes",
                    entry.name,
                    entry.offset,
                    entry.offset.saturating_add(len),
                    payload.len()
                ))
            })?;
        declared += len;
        let data = payload[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| Error::Integrity(format!("weight \"{}\": {e}", entry.name)))?;
        if weights.insert(entry.name.clone(), t).is_some() {
            return Err(Error::Integrity(format!("weight \"{}\" declared twice", entry.name)));
        }
    }
    if declared != payload.len() {
        return Err(Error::Integrity(format!(
            "payload is {} bytes but manifest declares {declared}",
            payload.len()
        )));
    }

    let model = Model::new(manifest.layers, weights, manifest.input_shape, manifest.class_count)?;
    check_preprocess(&model, &manifest.preprocess)?;
    let (labels, labels_embedded) = match manifest.labels {
        Some(l) => {
            let table = LabelTable::new(l)?;
            table.check_class_count(model.class_count)?;
            (table, true)
        }
        None => (LabelTable::numbered(model.class_count), false),
    };
    Ok(Checkpoint {
        model,
        labels,
        labels_embedded,
        preprocess: manifest.preprocess,
    })
}

pub fn save_checkpoint(
    model: &Model,
    labels: Option<&LabelTable>,
    preprocess: &PreprocessSpec,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, labels, preprocess)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
