//! Checkpoints: a JSON manifest describing the architecture plus a flat
//! little-endian `f64` file holding every stored tensor in declaration
//! order (weights, biases, batch-norm gamma/beta/running mean/running var).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::layers::{Activation, BatchNorm, Conv2d, Dense, Layer};
use super::network::Network;
use super::NeuralError;

pub const CHECKPOINT_FORMAT: &str = "yieldpaint-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
    },
    MaxPool2x2,
    AvgPool2x2,
    Upsample2x2,
    BatchNorm {
        features: usize,
        eps: f64,
        momentum: f64,
    },
    Activation {
        function: Activation,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub layer: usize,
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub tensors: Vec<TensorEntry>,
    pub total_values: usize,
    pub trainable_parameters: usize,
    /// File name of the parameter array, relative to the manifest.
    pub params_file: String,
    /// Caller-supplied hyperparameters and model metadata.
    pub metadata: serde_json::Value,
}

fn spec_and_tensors(layer: &Layer) -> (LayerSpec, Vec<(&'static str, &[f64])>) {
    match layer {
        Layer::Dense(d) => (
            LayerSpec::Dense {
                in_dim: d.in_dim,
                out_dim: d.out_dim,
            },
            vec![("weight", &d.weight[..]), ("bias", &d.bias[..])],
        ),
        Layer::Conv2d(c) => (
            LayerSpec::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
            },
            vec![("weight", &c.weight[..]), ("bias", &c.bias[..])],
        ),
        Layer::MaxPool2x2 => (LayerSpec::MaxPool2x2, vec![]),
        Layer::AvgPool2x2 => (LayerSpec::AvgPool2x2, vec![]),
        Layer::Upsample2x2 => (LayerSpec::Upsample2x2, vec![]),
        Layer::BatchNorm(b) => (
            LayerSpec::BatchNorm {
                features: b.features,
                eps: b.eps,
                momentum: b.momentum,
            },
            vec![
                ("gamma", &b.gamma[..]),
                ("beta", &b.beta[..]),
                ("running_mean", &b.running_mean[..]),
                ("running_var", &b.running_var[..]),
            ],
        ),
        Layer::Activation { function } => (
            LayerSpec::Activation {
                function: *function,
            },
            vec![],
        ),
    }
}

fn params_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>.bin` (parameters; extension replaced).
pub fn save_checkpoint(
    net: &Network,
    metadata: serde_json::Value,
    json_path: impl AsRef<Path>,
) -> Result<CheckpointManifest, NeuralError> {
    let json_path = json_path.as_ref();
    let bin_path = params_path(json_path);
    let mut specs = Vec::new();
    let mut entries = Vec::new();
    let mut bytes = Vec::new();
    for (k, layer) in net.layers().iter().enumerate() {
        let (spec, tensors) = spec_and_tensors(layer);
        specs.push(spec);
        for (name, values) in tensors {
            entries.push(TensorEntry {
                layer: k,
                name: name.to_string(),
                len: values.len(),
            });
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        input_shape: net.input_shape().to_vec(),
        layers: specs,
        total_values: bytes.len() / 8,
        tensors: entries,
        trainable_parameters: net.parameter_count(),
        params_file: bin_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        metadata,
    };
    fs::write(&bin_path, bytes)?;
    fs::write(json_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(
    json_path: impl AsRef<Path>,
) -> Result<(Network, CheckpointManifest), NeuralError> {
    let json_path = json_path.as_ref();
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(json_path).map_err(|e| {
            NeuralError::Checkpoint(format!("cannot read {}: {e}", json_path.display()))
        })?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(NeuralError::Checkpoint(format!(
            "unsupported format {:?}",
            manifest.format
        )));
    }
    let bin_path = json_path.with_file_name(&manifest.params_file);
    let bytes = fs::read(&bin_path)
        .map_err(|e| NeuralError::Checkpoint(format!("cannot read {}: {e}", bin_path.display())))?;
    if bytes.len() != manifest.total_values * 8 {
        return Err(NeuralError::Checkpoint(format!(
            "{} holds {} bytes, manifest expects {}",
            bin_path.display(),
            bytes.len(),
            manifest.total_values * 8
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |len: usize| -> Result<Vec<f64>, NeuralError> {
        let v: Vec<f64> = values.by_ref().take(len).collect();
        if v.len() != len {
            return Err(NeuralError::Checkpoint("parameter file too short".into()));
        }
        Ok(v)
    };
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for spec in &manifest.layers {
        layers.push(match *spec {
            LayerSpec::Dense { in_dim, out_dim } => Layer::Dense(Dense {
                in_dim,
                out_dim,
                weight: take(in_dim * out_dim)?,
                bias: take(out_dim)?,
            }),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => Layer::Conv2d(Conv2d {
                in_channels,
                out_channels,
                weight: take(in_channels * out_channels * 9)?,
                bias: take(out_channels)?,
            }),
            LayerSpec::MaxPool2x2 => Layer::MaxPool2x2,
            LayerSpec::AvgPool2x2 => Layer::AvgPool2x2,
            LayerSpec::Upsample2x2 => Layer::Upsample2x2,
            LayerSpec::BatchNorm {
                features,
                eps,
                momentum,
            } => Layer::BatchNorm(BatchNorm {
                features,
                gamma: take(features)?,
                beta: take(features)?,
                running_mean: take(features)?,
                running_var: take(features)?,
                eps,
                momentum,
            }),
            LayerSpec::Activation { function } => Layer::Activation { function },
        });
    }
    let net = Network::new(manifest.input_shape.clone(), layers)?;
    Ok((net, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bn = BatchNorm::new(2);
        bn.running_mean = vec![0.1, -0.2];
        bn.running_var = vec![1.5, 0.5];
        let net = Network::new(
            vec![1, 4, 4],
            vec![
                Layer::Conv2d(Conv2d::uniform(1, 2, 0.5, &mut rng)),
                Layer::relu(),
                Layer::BatchNorm(bn),
                Layer::MaxPool2x2,
                Layer::Upsample2x2,
                Layer::Conv2d(Conv2d::uniform(2, 1, 0.5, &mut rng)),
                Layer::sigmoid(),
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let manifest = save_checkpoint(&net, serde_json::json!({"arch": "test"}), &path).unwrap();
        assert_eq!(manifest.params_file, "model.bin");
        let raw = std::fs::read(dir.path().join("model.bin")).unwrap();
        assert_eq!(raw.len(), manifest.total_values * 8);
        // First stored value is the first conv weight, little-endian.
        let first = match &net.layers()[0] {
            Layer::Conv2d(c) => c.weight[0],
            _ => unreachable!(),
        };
        assert_eq!(&raw[..8], &first.to_le_bytes());
        let (back, m2) = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(m2.metadata["arch"], "test");
    }

    #[test]
    fn missing_checkpoint_names_path() {
        let err = load_checkpoint("/nonexistent/dir/model.json").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/model.json"));
    }
}
