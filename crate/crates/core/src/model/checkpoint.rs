//! Checkpoint directories.
//!
//! A checkpoint is a directory holding `manifest.toml` (configuration,
//! label set, seed, parameter names and shapes, SHA-256 of the value file)
//! and `params.bin`, every parameter's values as little-endian `f64` in
//! manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::encoders::PerModality;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const PARAMS_FILE: &str = "params.bin";
const FORMAT: &str = "mmdfn-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    class_names: Vec<String>,
    feature_dims: PerModality<usize>,
    /// Lowercase hex SHA-256 of the value file.
    checksum: String,
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `model` into directory `dir`, creating it if needed.
pub fn save(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(model.params.scalar_count() * 8);
    let mut entries = Vec::with_capacity(model.params.len());
    for (name, t) in model.params.iter() {
        entries.push(ParamEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        seed: model.seed,
        class_names: model.class_names.clone(),
        feature_dims: model.feature_dims,
        checksum: hex(&Sha256::digest(&blob)),
        config: model.config.clone(),
        params: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Contract(format!("manifest: {e}")))?;
    let params_path = dir.join(PARAMS_FILE);
    fs::write(&params_path, &blob).map_err(|e| Error::io(&params_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

/// Reads a checkpoint written by [`save`], verifying the checksum and that
/// every declared shape is covered exactly by the value file.
pub fn load(dir: &Path) -> Result<Model> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported checkpoint format {} v{}",
            manifest_path.display(),
            manifest.format,
            manifest.version
        )));
    }
    manifest.config.validate()?;

    let params_path = dir.join(PARAMS_FILE);
    let blob = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    if hex(&Sha256::digest(&blob)) != manifest.checksum {
        return Err(Error::Config(format!("{}: checksum mismatch", params_path.display())));
    }
    let expected: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if blob.len() != expected * 8 {
        return Err(Error::Config(format!(
            "{}: holds {} bytes but the manifest declares {} values",
            params_path.display(),
            blob.len(),
            expected
        )));
    }
    let mut values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let mut params = ParamStore::new();
    for entry in manifest.params {
        let count = entry.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(count).collect();
        let tensor = Tensor::new(entry.shape, data).map_err(|e| Error::Config(format!("{}: {e}", entry.name)))?;
        params.insert(entry.name, tensor);
    }
    Ok(Model {
        config: manifest.config,
        feature_dims: manifest.feature_dims,
        class_names: manifest.class_names,
        seed: manifest.seed,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let config = ModelConfig {
            d: 4,
            k: 3,
            eta: 1.0 / 3.0,
            ..Default::default()
        };
        let names = vec!["calm".to_string(), "tense".to_string()];
        Model::init(config, PerModality::new(3, 2, 5), names, 21).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = model();
        // values whose decimal forms are long or special
        m.params.get_mut("classifier.b").unwrap().data_mut()[0] = 0.1 + 0.2;
        m.params.get_mut("classifier.b").unwrap().data_mut()[1] = -0.0;
        save(&m, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.class_names, m.class_names);
        assert_eq!(back.seed, 21);
        for ((na, a), (nb, b)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b), "{na}");
        }
    }

    #[test]
    fn tampered_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save(&model(), dir.path()).unwrap();
        let path = dir.path().join(PARAMS_FILE);
        let mut blob = fs::read(&path).unwrap();
        blob[3] ^= 1;
        fs::write(&path, blob).unwrap();
        let err = load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn missing_directory_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load(&dir.path().join("nope")), Err(Error::Io { .. })));
    }
}
