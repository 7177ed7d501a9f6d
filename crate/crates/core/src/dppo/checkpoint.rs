//! Versioned JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::net::{HeadWidths, Linear, PolicyNet, HEAD_NAMES};

pub const CHECKPOINT_VERSION: u32 = 1;

const LAYER_NAMES: [&str; 6] = ["hidden1", "hidden2", "head_k", "head_power", "head_depth", "value"];

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    name: String,
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config_hash: String,
    input_width: usize,
    hidden: usize,
    head_widths: HeadWidths,
    layers: Vec<LayerFile>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed checkpoint {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint {what} has width {found}, expected {expected}")]
    Shape { what: String, found: usize, expected: usize },
}

/// A loaded network and the hash of the config it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub net: PolicyNet<T>,
    pub config_hash: String,
}

impl<T: Scalar> Checkpoint<T> {
    /// Rejects a network whose input or head widths differ from the
    /// environment's.
    pub fn check_shape(&self, input_width: usize, heads: HeadWidths) -> Result<(), CheckpointError> {
        check_widths(self.net.input_width(), self.net.head_widths(), input_width, heads)
    }
}

pub fn check_widths(
    input: usize,
    heads: HeadWidths,
    expected_input: usize,
    expected_heads: HeadWidths,
) -> Result<(), CheckpointError> {
    if input != expected_input {
        return Err(CheckpointError::Shape {
            what: "input".into(),
            found: input,
            expected: expected_input,
        });
    }
    for ((name, found), expected) in HEAD_NAMES.iter().zip(heads.as_array()).zip(expected_heads.as_array()) {
        if found != expected {
            return Err(CheckpointError::Shape {
                what: format!("head {name}"),
                found,
                expected,
            });
        }
    }
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(net: &PolicyNet<T>, config_hash: &str, path: &Path) -> Result<(), CheckpointError> {
    let layers = net
        .layers()
        .iter()
        .zip(LAYER_NAMES)
        .map(|(l, name)| LayerFile {
            name: name.to_string(),
            rows: l.rows,
            cols: l.cols,
            weights: l.w.iter().map(|x| x.as_f64()).collect(),
            bias: l.b.iter().map(|x| x.as_f64()).collect(),
        })
        .collect();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config_hash: config_hash.to_string(),
        input_width: net.input_width(),
        hidden: net.hidden_width(),
        head_widths: net.head_widths(),
        layers,
    };
    let json = serde_json::to_vec(&file).expect("checkpoint serializes");
    crate::report::write_atomic(path, &json).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: CheckpointFile = serde_json::from_slice(&bytes).map_err(|source| CheckpointError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    if file.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: file.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut net = PolicyNet::<T>::zeros(file.input_width, file.hidden, file.head_widths);
    if file.layers.len() != LAYER_NAMES.len() {
        return Err(CheckpointError::Shape {
            what: "layer count".into(),
            found: file.layers.len(),
            expected: LAYER_NAMES.len(),
        });
    }
    for (slot, layer) in net.layers_mut().into_iter().zip(&file.layers) {
        fill(slot, layer)?;
    }
    Ok(Checkpoint {
        net,
        config_hash: file.config_hash,
    })
}

fn fill<T: Scalar>(slot: &mut Linear<T>, layer: &LayerFile) -> Result<(), CheckpointError> {
    let checks = [
        ("rows", layer.rows, slot.rows),
        ("cols", layer.cols, slot.cols),
        ("weights", layer.weights.len(), slot.w.len()),
        ("bias", layer.bias.len(), slot.b.len()),
    ];
    for (field, found, expected) in checks {
        if found != expected {
            return Err(CheckpointError::Shape {
                what: format!("{} {field}", layer.name),
                found,
                expected,
            });
        }
    }
    slot.w = layer.weights.iter().map(|&x| T::of(x)).collect();
    slot.b = layer.bias.iter().map(|&x| T::of(x)).collect();
    Ok(())
}
