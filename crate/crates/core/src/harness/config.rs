//! Run configuration, read from TOML. Every key has a default and unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::model::ModelConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    /// Evaluate on the training set every this many steps and stop once
    /// both targets below are met (0: never).
    pub early_stop_every: u64,
    pub early_stop_epe: f64,
    pub early_stop_accuracy: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 1000,
            batch_size: 4,
            seed: 0,
            checkpoint_every: 0,
            early_stop_every: 0,
            early_stop_epe: 1.0,
            early_stop_accuracy: 0.95,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Us3d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory of US3D-layout rasters.
    pub root: Option<PathBuf>,
    /// Split manifest; defaults to every sample in `root`.
    pub manifest: Option<PathBuf>,
    /// Number of synthetic training scenes.
    pub synth_count: usize,
    /// First synthetic seed; scene `i` uses `synth_seed + i`.
    pub synth_seed: u64,
    pub synth: SynthConfig,
    /// Training crop side. Samples no larger than this are used whole.
    pub tile: usize,
    /// Raw class code to label table (keys are codes).
    pub class_remap: Option<std::collections::BTreeMap<String, u8>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            root: None,
            manifest: None,
            synth_count: 4,
            synth_seed: 0,
            synth: SynthConfig::default(),
            tile: 512,
            class_remap: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// D1-Error and mIoU-3 threshold in pixels.
    pub threshold: f64,
    /// Evaluation tile side (grid mode).
    pub tile: usize,
    /// Evaluation split for US3D data (defaults to the training samples).
    pub manifest: Option<PathBuf>,
    /// Held-out synthetic scenes for `ablate`.
    pub synth_count: usize,
    pub synth_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, tile: 512, manifest: None, synth_count: 4, synth_seed: 1_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub checkpoint_dir: PathBuf,
    pub report_path: PathBuf,
    /// Loss curve CSV; defaults to `loss_curve.csv` in the checkpoint dir.
    pub loss_curve: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { checkpoint_dir: PathBuf::from("runs/default"), report_path: PathBuf::from("runs/default/report.txt"), loss_curve: None }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let o = &self.optimizer;
        if o.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.data.tile == 0 || self.data.tile % crate::data::SIZE_MULTIPLE != 0 {
            return Err(Error::Config(format!("data.tile must be a positive multiple of {}", crate::data::SIZE_MULTIPLE)));
        }
        if self.eval.tile == 0 || self.eval.tile % crate::data::SIZE_MULTIPLE != 0 {
            return Err(Error::Config(format!("eval.tile must be a positive multiple of {}", crate::data::SIZE_MULTIPLE)));
        }
        if self.data.source == DataSource::Synthetic {
            self.data.synth.validate()?;
            if self.data.synth.num_classes != self.model.num_classes {
                return Err(Error::Config("data.synth.num_classes must equal model.num_classes".into()));
            }
        } else if self.data.root.is_none() {
            return Err(Error::Config("data.root is required for us3d data".into()));
        }
        self.class_remap()?;
        Ok(())
    }

    pub fn class_remap(&self) -> Result<crate::data::ClassRemap> {
        let Some(table) = &self.data.class_remap else { return Ok(Default::default()) };
        let mut out = std::collections::BTreeMap::new();
        for (code, &label) in table {
            let c: u16 = code.parse().map_err(|_| Error::Config(format!("class code {code:?} is not an integer")))?;
            if label as usize >= self.model.num_classes {
                return Err(Error::Config(format!("class code {c} maps to label {label}, beyond num_classes")));
            }
            out.insert(c, label);
        }
        Ok(crate::data::ClassRemap(out))
    }

    pub fn loss_curve_path(&self) -> PathBuf {
        self.output.loss_curve.clone().unwrap_or_else(|| self.output.checkpoint_dir.join("loss_curve.csv"))
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
