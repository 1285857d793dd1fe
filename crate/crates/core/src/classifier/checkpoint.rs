//! Binary checkpoint: `MAGIC`, a little-endian `u32` header length, the JSON
//! header, then every parameter as a little-endian `f32` in storage order.

use serde::{Deserialize, Serialize};

use super::{ClassifierError, TrainConfig};
use crate::nn::{param_shapes, LayerSpec, Network, Tensor};

pub const MAGIC: &[u8; 5] = b"ASNT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub layers: Vec<LayerSpec>,
    pub input_shape: [usize; 3],
    pub param_shapes: Vec<Vec<usize>>,
    pub config: TrainConfig,
    pub seed: u64,
    pub param_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub config: TrainConfig,
    pub seed: u64,
}

pub fn save_checkpoint(net: &Network<f32>, config: &TrainConfig, seed: u64) -> Vec<u8> {
    let header = CheckpointHeader {
        layers: net.layers().to_vec(),
        input_shape: net.input_shape(),
        param_shapes: net.params().iter().map(|t| t.shape().to_vec()).collect(),
        config: config.clone(),
        seed,
        param_bytes: 4 * net.param_count(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + header.param_bytes);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in net.params() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ClassifierError> {
    let rest = bytes.strip_prefix(MAGIC).ok_or(ClassifierError::BadMagic)?;
    let truncated = |expected: usize| ClassifierError::TruncatedPayload {
        expected,
        found: bytes.len(),
    };
    let len_bytes: [u8; 4] = rest
        .get(..4)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| truncated(MAGIC.len() + 4))?;
    let json_len = u32::from_le_bytes(len_bytes) as usize;
    let body = &rest[4..];
    let json = body
        .get(..json_len)
        .ok_or_else(|| truncated(MAGIC.len() + 4 + json_len))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| ClassifierError::BadHeader(e.to_string()))?;
    header
        .config
        .validate()
        .map_err(|e| ClassifierError::BadHeader(e.to_string()))?;

    let shapes = param_shapes(header.input_shape, &header.layers)
        .map_err(|e| ClassifierError::ShapeMismatch(e.to_string()))?;
    if shapes != header.param_shapes {
        return Err(ClassifierError::ShapeMismatch(format!(
            "header lists {:?}, layers imply {shapes:?}",
            header.param_shapes
        )));
    }
    let want_shape = [header.config.input_height, header.config.input_width, 3];
    if header.input_shape != want_shape {
        return Err(ClassifierError::ShapeMismatch(format!(
            "input shape {:?} disagrees with config {want_shape:?}",
            header.input_shape
        )));
    }
    // Sizes are overflow-checked by `param_shapes`, but the byte count may not be.
    let count: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if count.checked_mul(4) != Some(header.param_bytes) {
        return Err(ClassifierError::ShapeMismatch(format!(
            "param_bytes {} for {count} parameters",
            header.param_bytes
        )));
    }
    let payload = &body[json_len..];
    let header_end = bytes.len() - payload.len();
    if payload.len() < header.param_bytes {
        return Err(truncated(header_end + header.param_bytes));
    }
    if payload.len() > header.param_bytes {
        return Err(ClassifierError::TrailingBytes(payload.len() - header.param_bytes));
    }

    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")));
    let mut params = Vec::with_capacity(shapes.len());
    for shape in &shapes {
        let n = shape.iter().product();
        let data: Vec<f32> = values.by_ref().take(n).collect();
        let t = Tensor::new(shape.clone(), data)
            .map_err(|e| ClassifierError::BadHeader(format!("parameter payload: {e}")))?;
        params.push(t);
    }
    let network = Network::new(header.input_shape, header.layers)?.with_params(params)?;
    Ok(Checkpoint {
        network,
        config: header.config,
        seed: header.seed,
    })
}
