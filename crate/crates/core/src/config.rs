//! TOML experiment configuration and scene files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricParams;
use crate::neural::TrainConfig;
use crate::priors::{PriorKind, DEFAULT_AR_ORDER};
use crate::room_sim::{image_source_rir, RoomScene, Rir, DEFAULT_BOUNDARY_MS};
use crate::stft::StftConfig;
use crate::wpe::MclpConfig;

/// Name of the environment variable holding the default config path.
pub const CONFIG_ENV: &str = "DEREVRB_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// `periodogram`, `ar`, `neural-fc` or `neural-lstm`.
    pub name: String,
    pub ar_order: usize,
    /// Model file for the neural priors.
    pub model: Option<PathBuf>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            name: "periodogram".into(),
            ar_order: DEFAULT_AR_ORDER,
            model: None,
        }
    }
}

impl PriorConfig {
    pub fn kind(&self) -> Result<PriorKind> {
        self.name.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Hidden layer widths; the middle entry is the bottleneck.
    pub hidden: Vec<usize>,
    pub activation: String,
    pub fc_context: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: crate::neural::DEFAULT_HIDDEN.to_vec(),
            activation: "elu".into(),
            fc_context: crate::neural::DEFAULT_FC_CONTEXT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Early/late boundary used to build metric references.
    pub early_boundary_ms: f64,
    pub stft: StftConfig,
    pub mclp: MclpConfig,
    pub prior: PriorConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub metrics: MetricParams,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            early_boundary_ms: DEFAULT_BOUNDARY_MS,
            stft: StftConfig::default(),
            mclp: MclpConfig::default(),
            prior: PriorConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricParams::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Structural checks plus existence of referenced input files.
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.mclp.validate()?;
        self.metrics.validate()?;
        self.train.validate()?;
        let kind = self.prior.kind()?;
        if kind.needs_model() {
            match &self.prior.model {
                None => {
                    return Err(Error::InvalidConfig(format!(
                        "prior `{kind}` requires a model path"
                    )))
                }
                Some(p) if !p.is_file() => {
                    return Err(Error::InvalidConfig(format!(
                        "model file {} does not exist",
                        p.display()
                    )))
                }
                _ => {}
            }
        }
        if let Some(p) = &self.paths.input {
            if !p.exists() {
                return Err(Error::InvalidConfig(format!(
                    "input {} does not exist",
                    p.display()
                )));
            }
        }
        self.network
            .activation
            .parse::<crate::neural::Activation>()?;
        Ok(())
    }
}

/// Where a scene's impulse responses come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SceneSource {
    Simulated(RoomScene),
    /// Unit impulses; useful for pipeline checks.
    Identity {
        num_mics: usize,
        #[serde(default = "default_rate")]
        sample_rate_hz: u32,
    },
    /// Multichannel WAV of measured responses, resolved relative to the scene
    /// file.
    Measured { rir_wav: PathBuf },
}

fn default_rate() -> u32 {
    16_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub scene: SceneSource,
    #[serde(default = "default_boundary")]
    pub early_boundary_ms: f64,
}

fn default_boundary() -> f64 {
    DEFAULT_BOUNDARY_MS
}

impl SceneFile {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut scene = Self::from_toml(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        if let SceneSource::Measured { rir_wav } = &mut scene.scene {
            if rir_wav.is_relative() {
                if let Some(dir) = path.parent() {
                    *rir_wav = dir.join(&*rir_wav);
                }
            }
        }
        Ok(scene)
    }

    pub fn rir(&self) -> Result<Rir> {
        let mut rir = match &self.scene {
            SceneSource::Simulated(s) => image_source_rir(s)?,
            SceneSource::Identity {
                num_mics,
                sample_rate_hz,
            } => {
                if *num_mics == 0 {
                    return Err(Error::Scene("identity scene needs microphones".into()));
                }
                Rir::identity(*num_mics, *sample_rate_hz)
            }
            SceneSource::Measured { rir_wav } => Rir::from_audio(crate::io::read_wav(rir_wav)?)?,
        };
        rir.early_late_boundary_ms = self.early_boundary_ms;
        Ok(rir)
    }
}
