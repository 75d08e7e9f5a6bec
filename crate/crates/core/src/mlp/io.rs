//! Versioned JSON model files with a CRC32 over the parameter bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, FeatureNorm, Layer, MlpModel, Real};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NormFile<T> {
    mean: Vec<T>,
    std: Vec<T>,
    target_mean: Vec<T>,
    target_std: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile<T> {
    /// Row-major `fan_in x fan_out`.
    w: Vec<T>,
    b: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct ModelFile<T> {
    format_version: u32,
    layer_dims: Vec<usize>,
    activation: Activation,
    output_activation: Activation,
    feature_norm: NormFile<T>,
    layers: Vec<LayerFile<T>>,
    checksum: u32,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

fn parameter_checksum<T: Real>(layers: &[Layer<T>]) -> u32 {
    let mut bytes = Vec::new();
    for l in layers {
        for &w in l.weights.iter() {
            w.extend_le_bytes(&mut bytes);
        }
        for &b in l.bias.iter() {
            b.extend_le_bytes(&mut bytes);
        }
    }
    crc32fast::hash(&bytes)
}

/// Writes `model` with free-form string `metadata`.
pub fn save_model<T: Real>(model: &MlpModel<T>, metadata: &BTreeMap<String, String>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    model.validate()?;
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        layer_dims: model.layer_dims(),
        activation: model.hidden_activation,
        output_activation: model.output_activation,
        feature_norm: NormFile {
            mean: model.norm.input_mean.to_vec(),
            std: model.norm.input_std.to_vec(),
            target_mean: model.norm.target_mean.to_vec(),
            target_std: model.norm.target_std.to_vec(),
        },
        layers: model
            .layers
            .iter()
            .map(|l| LayerFile { w: l.weights.iter().copied().collect(), b: l.bias.to_vec() })
            .collect(),
        checksum: parameter_checksum(&model.layers),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&file).map_err(|e| Error::MalformedModel(e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads a model file, checking version, shapes and checksum.
pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<(MlpModel<T>, BTreeMap<String, String>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile<T> = serde_json::from_slice(&bytes).map_err(|e| match e.classify() {
        serde_json::error::Category::Eof => Error::ChecksumMismatch(format!("{}: file is truncated", path.display())),
        _ => Error::MalformedModel(format!("{}: {e}", path.display())),
    })?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: file.format_version, expected: FORMAT_VERSION });
    }
    let dims = &file.layer_dims;
    if dims.len() < 2 || file.layers.len() != dims.len() - 1 {
        return Err(Error::MalformedModel(format!("{} layers for dims {dims:?}", file.layers.len())));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, l) in file.layers.into_iter().enumerate() {
        let weights = Array2::from_shape_vec((dims[i], dims[i + 1]), l.w)
            .map_err(|e| Error::MalformedModel(format!("layer {i} weights: {e}")))?;
        if l.b.len() != dims[i + 1] {
            return Err(Error::MalformedModel(format!("layer {i} bias length {}", l.b.len())));
        }
        layers.push(Layer { weights, bias: Array1::from(l.b) });
    }
    let actual = parameter_checksum(&layers);
    if actual != file.checksum {
        return Err(Error::ChecksumMismatch(format!("stored {:08x}, computed {actual:08x}", file.checksum)));
    }
    let norm = FeatureNorm {
        input_mean: Array1::from(file.feature_norm.mean),
        input_std: Array1::from(file.feature_norm.std),
        target_mean: Array1::from(file.feature_norm.target_mean),
        target_std: Array1::from(file.feature_norm.target_std),
    };
    let model = MlpModel {
        layers,
        hidden_activation: file.activation,
        output_activation: file.output_activation,
        norm,
    };
    model.validate()?;
    Ok((model, file.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_model() -> MlpModel<f32> {
        let mut m = MlpModel::<f32>::init(&[7, 5, 3], 11).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for l in &mut m.layers {
            l.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        m.norm.input_mean.mapv_inplace(|_| rng.random_range(-30.0..0.0));
        m.norm.input_std.mapv_inplace(|_| rng.random_range(0.1..5.0));
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = random_model();
        let meta = BTreeMap::from([("mode".to_string(), "bed".to_string())]);
        save_model(&m, &meta, &p).unwrap();
        let (back, meta_back) = load_model::<f32>(&p).unwrap();
        assert_eq!(meta, meta_back);
        let bits = |m: &MlpModel<f32>| m.flat_parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m), bits(&back));
        assert_eq!(m, back);
    }

    #[test]
    fn truncated_and_tampered_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_model(&random_model(), &BTreeMap::new(), &p).unwrap();
        let bytes = fs::read(&p).unwrap();

        let t = dir.path().join("t.json");
        fs::write(&t, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model::<f32>(&t), Err(Error::ChecksumMismatch(_))));

        let text = String::from_utf8(bytes.clone()).unwrap();
        let v = dir.path().join("v.json");
        fs::write(&v, text.replace("\"format_version\":1", "\"format_version\":0")).unwrap();
        assert!(matches!(load_model::<f32>(&v), Err(Error::VersionMismatch { found: 0, .. })));

        let mut json: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        json["layers"][0]["b"][0] = serde_json::json!(123.5);
        let c = dir.path().join("c.json");
        fs::write(&c, serde_json::to_vec(&json).unwrap()).unwrap();
        assert!(matches!(load_model::<f32>(&c), Err(Error::ChecksumMismatch(_))));

        assert!(matches!(load_model::<f32>(dir.path().join("nope.json")), Err(Error::Io { .. })));
    }
}
