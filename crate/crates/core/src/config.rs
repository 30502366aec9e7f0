//! Run configuration files and on-disk model artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetSchema;
use crate::error::{Error, Result};
use crate::metrics::MetricOptions;
use crate::model::{ModelConfig, ModelManifest, TrainConfig, TrainedModel};
use crate::numerics::{checkpoint_bytes, read_checkpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Training CSV, relative to the config file.
    pub data: PathBuf,
    /// Artifact directory, relative to the config file.
    pub output_dir: PathBuf,
}

/// Everything needed to reproduce a training run. `model.seed` is always
/// overwritten by the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub schema: DatasetSchema,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricOptions,
}

impl RunConfig {
    /// Parses and validates; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        cfg.model.seed = cfg.seed;
        cfg.paths.data = base.join(&cfg.paths.data);
        cfg.paths.output_dir = base.join(&cfg.paths.output_dir);
        let problems = cfg.problems();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Every violated constraint.
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.schema.problems();
        out.extend(self.model.problems());
        out.extend(self.train.problems());
        out.extend(self.metrics.problems());
        if !self.paths.data.is_file() {
            out.push(format!(
                "paths.data: {} is not a readable file",
                self.paths.data.display()
            ));
        }
        if self.paths.output_dir.is_file() {
            out.push(format!(
                "paths.output_dir: {} is a file",
                self.paths.output_dir.display()
            ));
        }
        out
    }

    /// TOML with fixed key order and resolved values.
    pub fn canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.canonical()?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Sidecar written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub checkpoint_sha256: String,
    pub config_hash: Option<String>,
    pub schema: DatasetSchema,
    pub metrics: MetricOptions,
    #[serde(flatten)]
    pub model: ModelManifest,
}

/// Writes the checkpoint and manifest into `dir`.
pub fn save_model(
    model: &TrainedModel,
    dir: impl AsRef<Path>,
    schema: &DatasetSchema,
    metrics: &MetricOptions,
    config_hash: Option<String>,
) -> Result<RunManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let bytes = checkpoint_bytes(model.params())?;
    std::fs::write(dir.join(CHECKPOINT_FILE), &bytes)?;
    let manifest = RunManifest {
        checkpoint_sha256: sha256_hex(&bytes),
        config_hash,
        schema: schema.clone(),
        metrics: *metrics,
        model: model.manifest(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

/// Loads a model saved by [`save_model`], verifying the checkpoint hash.
pub fn load_model(dir: impl AsRef<Path>) -> Result<(TrainedModel, RunManifest)> {
    let dir = dir.as_ref();
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let bytes = std::fs::read(dir.join(CHECKPOINT_FILE))?;
    let digest = sha256_hex(&bytes);
    if digest != manifest.checkpoint_sha256 {
        return Err(Error::Checkpoint(format!(
            "checkpoint hash {digest} does not match manifest {}",
            manifest.checkpoint_sha256
        )));
    }
    let store = read_checkpoint(bytes.as_slice())?;
    let model = TrainedModel::from_parts(manifest.model.clone(), store)?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::{Spacing, TimeGrid};

    fn with_data(extra: &str) -> (tempfile::TempDir, Result<RunConfig>) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("d.csv"), "x,time,event\n1,1,1\n").unwrap();
        let text = format!(
            "seed = 3\n{extra}\n[paths]\ndata = \"d.csv\"\noutput_dir = \"out\"\n"
        );
        let cfg = RunConfig::from_toml(&text, dir.path());
        (dir, cfg)
    }

    #[test]
    fn defaults_fill_in() {
        let (_d, cfg) = with_data("");
        let cfg = cfg.unwrap();
        assert_eq!(cfg.train.batch_size, 50);
        assert_eq!(cfg.train.max_epochs, 100);
        assert_eq!(cfg.train.early_stop_patience, 10);
        assert_eq!(cfg.model.dropout_rate, 0.2);
        assert_eq!(cfg.model.seed, 3);
        let again = toml::from_str::<RunConfig>(&cfg.canonical().unwrap()).unwrap();
        assert_eq!(again.canonical().unwrap(), cfg.canonical().unwrap());
    }

    #[test]
    fn all_problems_reported_together() {
        let (_d, cfg) = with_data(
            "[model]\ndropout_rate = 1.5\n[model.loss]\nlambda = -1.0\nsigma = 0.0\n[train]\nbatch_size = 0\n",
        );
        match cfg {
            Err(Error::Config(p)) => assert_eq!(p.len(), 4, "{p:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_data_file_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let text = "seed = 1\n[paths]\ndata = \"nope.csv\"\noutput_dir = \"o\"\n";
        assert!(matches!(RunConfig::from_toml(text, dir.path()), Err(Error::Config(_))));
        let (_d, cfg) = with_data("typo = 1");
        assert!(matches!(cfg, Err(Error::Config(_))));
    }

    #[test]
    fn model_round_trips_through_disk() {
        let cfg = ModelConfig {
            encoder_layers: vec![3],
            decoder_layers: vec![2],
            ..ModelConfig::default()
        };
        let grid = TimeGrid::new(vec![1.0, 2.0, 4.0], Spacing::Logarithmic).unwrap();
        let model = TrainedModel::initial(&cfg, grid, vec!["a".into(), "b".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(
            &model,
            dir.path(),
            &DatasetSchema::default(),
            &MetricOptions::default(),
            Some("abc".into()),
        ).unwrap();
        let (back, manifest) = load_model(dir.path()).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(manifest.config_hash.as_deref(), Some("abc"));
        let rows = vec![vec![0.1, -0.4]];
        assert_eq!(
            back.predict_features(&rows).unwrap(),
            model.predict_features(&rows).unwrap()
        );

        let mut bytes = std::fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(dir.path().join(CHECKPOINT_FILE), bytes).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Checkpoint(_))));
    }
}
