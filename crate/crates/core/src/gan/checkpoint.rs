//! JSON checkpoint files.
//!
//! ```text
//! { "format_version": 1,
//!   "dims": { "condition_dim", "target_dim", "noise_dim" },
//!   "train_sigma_range": [lo, hi],
//!   "scaler": { "min", "max" },
//!   "training_meta": { "iterations", "final_critic_loss", "final_generator_loss", "seed" },
//!   "layers": [ { "network": "generator" | "critic", "rows", "cols",
//!                 "activation", "weights": [..row-major..], "bias": [..] }, .. ] }
//! ```
//!
//! Generator layers come first, input to output, then the critic's. Numbers
//! are written in shortest round-trip form, so every `f64` reads back to
//! the same bits.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelCheckpoint, TrainingMeta};
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Layer, MlpParams, Tensor2};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u64,
    dims: Dims,
    train_sigma_range: (f64, f64),
    scaler: Scaler<f64>,
    training_meta: TrainingMeta,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dims {
    condition_dim: usize,
    target_dim: usize,
    noise_dim: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Network {
    Generator,
    Critic,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    network: Network,
    rows: usize,
    cols: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn layer_files<T: Scalar>(network: Network, net: &MlpParams<T>) -> impl Iterator<Item = LayerFile> + '_ {
    net.layers().iter().map(move |l| LayerFile {
        network,
        rows: l.output_dim(),
        cols: l.input_dim(),
        activation: l.activation,
        weights: l.weight.data().iter().map(|v| v.to_f64_lossless()).collect(),
        bias: l.bias.iter().map(|v| v.to_f64_lossless()).collect(),
    })
}

pub fn checkpoint_to_json<T: Scalar>(ck: &ModelCheckpoint<T>) -> Result<String> {
    let file = CheckpointFile {
        format_version: ck.format_version,
        dims: Dims {
            condition_dim: ck.condition_dim,
            target_dim: ck.target_dim,
            noise_dim: ck.noise_dim,
        },
        train_sigma_range: ck.train_sigma_range,
        scaler: Scaler {
            min: ck.scaler.min.to_f64_lossless(),
            max: ck.scaler.max.to_f64_lossless(),
        },
        training_meta: ck.training_meta.clone(),
        layers: layer_files(Network::Generator, &ck.generator)
            .chain(layer_files(Network::Critic, &ck.critic))
            .collect(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Inconsistent(e.to_string()))
}

pub fn checkpoint_from_json<T: Scalar>(text: &str, origin: &Path) -> Result<ModelCheckpoint<T>> {
    let corrupt = |message: String| Error::Corrupt {
        path: origin.to_path_buf(),
        message,
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("missing format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;

    let mut generator = Vec::new();
    let mut critic = Vec::new();
    for (i, l) in file.layers.into_iter().enumerate() {
        let weight = Tensor2::from_vec(l.rows, l.cols, l.weights.into_iter().map(T::from_f64_lossy).collect())
            .map_err(|e| Error::Inconsistent(format!("layer {i}: {e}")))?;
        let layer = Layer {
            weight,
            bias: l.bias.into_iter().map(T::from_f64_lossy).collect(),
            activation: l.activation,
        };
        match l.network {
            Network::Generator if critic.is_empty() => generator.push(layer),
            Network::Generator => return Err(Error::Inconsistent("generator layer after critic layers".into())),
            Network::Critic => critic.push(layer),
        }
    }
    let as_net =
        |layers, name: &str| MlpParams::from_layers(layers).map_err(|e| Error::Inconsistent(format!("{name}: {e}")));
    let ck = ModelCheckpoint {
        generator: as_net(generator, "generator")?,
        critic: as_net(critic, "critic")?,
        scaler: Scaler::new(T::from_f64_lossy(file.scaler.min), T::from_f64_lossy(file.scaler.max))
            .map_err(|e| Error::Inconsistent(e.to_string()))?,
        condition_dim: file.dims.condition_dim,
        target_dim: file.dims.target_dim,
        noise_dim: file.dims.noise_dim,
        train_sigma_range: file.train_sigma_range,
        format_version: file.format_version,
        training_meta: file.training_meta,
    };
    ck.validate()?;
    Ok(ck)
}

pub fn save_checkpoint<T: Scalar>(ck: &ModelCheckpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ck.validate()?;
    let mut text = checkpoint_to_json(ck)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelCheckpoint<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_json(&text, path)
}
