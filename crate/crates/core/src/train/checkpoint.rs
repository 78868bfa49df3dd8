use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::net::{GKanUNetModel, UNetConfig};
use crate::tensor::Tensor;

const FORMAT: &str = "gkan-checkpoint";
const VERSION: u32 = 1;

/// Trained model plus everything needed to resume optimisation.
///
/// On disk: a directory with `manifest.json` and one little-endian `f32`
/// blob per parameter tensor and per Adam moment.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GKanUNetModel<f32>,
    pub train: TrainConfig,
    pub adam_m: Vec<Vec<f32>>,
    pub adam_v: Vec<Vec<f32>>,
    pub iteration: usize,
    pub loss_history: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    network: UNetConfig,
    train: TrainConfig,
    iteration: usize,
    tensors: Vec<TensorEntry>,
    loss_history: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
    adam_m: String,
    adam_v: String,
}

fn write_blob(path: &Path, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

fn read_blob(path: &Path, len: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != 4 * len {
        return Err(Error::Data(format!("{}: expected {} bytes, found {}", path.display(), 4 * len, bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut tensors = Vec::new();
        for (i, (name, p)) in self.model.names().iter().zip(self.model.params()).enumerate() {
            let entry = TensorEntry {
                name: name.clone(),
                shape: p.shape().to_vec(),
                file: format!("{name}.f32"),
                adam_m: format!("{name}.adam_m.f32"),
                adam_v: format!("{name}.adam_v.f32"),
            };
            write_blob(&dir.join(&entry.file), p.data())?;
            write_blob(&dir.join(&entry.adam_m), &self.adam_m[i])?;
            write_blob(&dir.join(&entry.adam_v), &self.adam_v[i])?;
            tensors.push(entry);
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            network: self.model.config().clone(),
            train: self.train.clone(),
            iteration: self.iteration,
            tensors,
            loss_history: self.loss_history.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Data(format!("unsupported checkpoint {} v{}", manifest.format, manifest.version)));
        }
        let mut params = Vec::new();
        let mut adam_m = Vec::new();
        let mut adam_v = Vec::new();
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            params.push(Tensor::new(&e.shape, read_blob(&dir.join(&e.file), n)?)?);
            adam_m.push(read_blob(&dir.join(&e.adam_m), n)?);
            adam_v.push(read_blob(&dir.join(&e.adam_v), n)?);
        }
        let model = GKanUNetModel::from_params(&manifest.network, params)?;
        if model.names().iter().zip(&manifest.tensors).any(|(a, b)| *a != b.name) {
            return Err(Error::Data("checkpoint tensor names do not match the network layout".into()));
        }
        Ok(Checkpoint {
            model,
            train: manifest.train,
            adam_m,
            adam_v,
            iteration: manifest.iteration,
            loss_history: manifest.loss_history,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{train, TrainingPair};

    #[test]
    fn round_trip_is_exact() {
        let cfg = UNetConfig { depth: 2, channels: vec![2, 3], input_size: 8, ..UNetConfig::default() };
        let model = GKanUNetModel::<f32>::build(&cfg, 4).unwrap();
        let pair = TrainingPair { input: vec![0.5; 64], target: vec![0.1; 64], size: 8, view: 0 };
        let tc = TrainConfig { learning_rate: 1e-3, epochs: 2, ..Default::default() };
        let ck = train(model, &[pair], &tc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn truncated_blob_is_a_data_error() {
        let cfg = UNetConfig { depth: 2, channels: vec![2, 3], input_size: 8, ..UNetConfig::default() };
        let model = GKanUNetModel::<f32>::build(&cfg, 4).unwrap();
        let n = model.params().len();
        let ck = Checkpoint {
            adam_m: model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
            adam_v: model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
            model,
            train: TrainConfig::default(),
            iteration: 0,
            loss_history: vec![],
        };
        assert_eq!(ck.adam_m.len(), n);
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        fs::write(dir.path().join("head.bias.f32"), [0u8; 3]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Data(_))));
    }
}
