//! Parameter checkpoints as JSON.
//!
//! ```json
//! {
//!   "version": 1,
//!   "widths": [2, 50, 50, 50, 50, 1],
//!   "normalization": {"lx": 0.1, "ly": 0.1, "t_offset": 298.0, "t_scale": 50.0},
//!   "layers": [
//!     {"weights": [[w00, w01], [w10, w11], ...], "bias": [b0, b1, ...]},
//!     ...
//!   ]
//! }
//! ```
//!
//! `weights` of layer `l` has `widths[l + 1]` rows of `widths[l]` entries.
//! Floats are written in shortest round-trip form, so reading a checkpoint
//! back reproduces the parameters bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Normalization, NetParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    pub normalization: Normalization,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    widths: Vec<usize>,
    normalization: Normalization,
    layers: Vec<LayerFile>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let p = &self.params;
        let layers = (0..p.n_layers())
            .map(|l| LayerFile {
                weights: p.weight(l).chunks(p.widths()[l]).map(<[f64]>::to_vec).collect(),
                bias: p.bias(l).to_vec(),
            })
            .collect();
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            widths: p.widths().to_vec(),
            normalization: self.normalization,
            layers,
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::parse(
                origin,
                format!("unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})", file.version),
            ));
        }
        let w = &file.widths;
        if file.layers.len() + 1 != w.len() {
            return Err(Error::parse(origin, format!("{} layers for widths {w:?}", file.layers.len())));
        }
        let mut flat = Vec::new();
        for (l, layer) in file.layers.iter().enumerate() {
            if layer.weights.len() != w[l + 1] || layer.weights.iter().any(|r| r.len() != w[l]) {
                return Err(Error::parse(origin, format!("layer {l}: weights must be {} x {}", w[l + 1], w[l])));
            }
            if layer.bias.len() != w[l + 1] {
                return Err(Error::parse(origin, format!("layer {l}: bias must have {} entries", w[l + 1])));
            }
            layer.weights.iter().for_each(|r| flat.extend_from_slice(r));
            flat.extend_from_slice(&layer.bias);
        }
        Ok(Self {
            params: NetParams::from_flat(w, flat)?,
            normalization: file.normalization,
        })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_json()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text, &path.display().to_string())
}
