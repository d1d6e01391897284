//! Versioned run configuration. A single top-level `seed` drives every
//! random component; section seeds are derived from it.

use std::path::{Path, PathBuf};

use n2n4m::baselines::{CotcatLikeParams, SGParams};
use n2n4m::eval::BandDepthParam;
use n2n4m::nn::{Activation, ModelConfig, Precision, Scaling, TrainConfig};
use n2n4m::preprocess::NoiseParams;
use n2n4m::rng::derive;
use n2n4m::spectral::{WavelengthGrid, N_CHANNELS};
use n2n4m::synthetic::{SceneConfig, TemplateLibrary};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA: &str = "n2n4m-run-config/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { dataset: "data".into(), checkpoints: "checkpoints".into(), reports: "reports".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    /// Template library JSON; the bundled library when absent.
    pub templates: Option<PathBuf>,
    pub n_per_class: usize,
    pub n_bland: usize,
    pub n_groups: u32,
    pub holdout_class_ids: Vec<u32>,
    pub split_fractions: [f64; 3],
    /// Impute bad values and the artifact band before writing clean data.
    pub preprocess: bool,
}

impl Default for SceneSection {
    fn default() -> Self {
        let s = SceneConfig::default();
        Self {
            templates: None,
            n_per_class: s.n_per_class,
            n_bland: s.n_bland,
            n_groups: s.n_groups,
            holdout_class_ids: s.holdout_class_ids,
            split_fractions: s.split_fractions,
            preprocess: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_base: f64,
    pub sigma_uniform_max: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseParams::default();
        Self { sigma_base: n.sigma_base, sigma_uniform_max: n.sigma_uniform_max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub in_length: usize,
    pub pad_to: usize,
    pub kernel_size: usize,
    pub encoder_channels: Vec<usize>,
    pub activation: Activation,
    /// Pins the input standardisation; fitted to the training inputs when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            in_length: m.in_length,
            pad_to: m.pad_to,
            kernel_size: m.kernel_size,
            encoder_channels: m.encoder_channels,
            activation: m.activation,
            scaling: m.scaling,
        }
    }
}

/// What the network is trained to reproduce.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The low-noise spectra themselves.
    #[default]
    Clean,
    /// An independent noisy realisation of the same spectra.
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub precision: Precision,
    pub target: Target,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            early_stop_patience: t.early_stop_patience,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            precision: t.precision,
            target: Target::Clean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandDepthSection {
    pub threshold: f64,
    pub params: Vec<BandDepthParam>,
}

impl Default for BandDepthSection {
    fn default() -> Self {
        Self { threshold: 0.02, params: BandDepthParam::defaults() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sg: SGParams,
    #[serde(default)]
    pub cotcat_like: CotcatLikeParams,
    #[serde(default)]
    pub band_depth: BandDepthSection,
    /// Directory relative paths resolve against; not part of the file.
    #[serde(skip, default = "default_base_dir")]
    pub base_dir: PathBuf,
}

fn default_base_dir() -> PathBuf {
    PathBuf::from(".")
}

fn default_seed() -> u64 {
    42
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA.into(),
            seed: default_seed(),
            paths: Paths::default(),
            scene: SceneSection::default(),
            noise: NoiseSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            sg: SGParams::default(),
            cotcat_like: CotcatLikeParams::default(),
            band_depth: BandDepthSection::default(),
            base_dir: default_base_dir(),
        }
    }
}

fn section<T>(name: &str, r: n2n4m::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::config(format!("{name}: {e}")))
}

impl RunConfig {
    /// Parses JSON text; errors carry the JSON path of the offending field.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        if cfg.schema != SCHEMA {
            return Err(CliError::config(format!("at `schema`: expected \"{SCHEMA}\", found \"{}\"", cfg.schema)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.resolve(&self.paths.dataset)
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.resolve(&self.paths.checkpoints)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.resolve(&self.paths.reports)
    }

    pub fn scene(&self) -> CliResult<SceneConfig> {
        let lib = match &self.scene.templates {
            Some(p) => section("scene.templates", TemplateLibrary::load(&self.resolve(p)))?,
            None => TemplateLibrary::builtin(),
        };
        let s = &self.scene;
        Ok(SceneConfig {
            templates: lib.templates,
            bland: lib.bland,
            n_per_class: s.n_per_class,
            n_bland: s.n_bland,
            n_groups: s.n_groups,
            holdout_class_ids: s.holdout_class_ids.clone(),
            split_fractions: s.split_fractions,
            seed: self.seed,
        })
    }

    pub fn noise(&self) -> NoiseParams {
        NoiseParams {
            sigma_base: self.noise.sigma_base,
            sigma_uniform_max: self.noise.sigma_uniform_max,
            seed: derive(self.seed, "noise"),
        }
    }

    /// Noise for the independent target realisation.
    pub fn target_noise(&self) -> NoiseParams {
        NoiseParams { seed: derive(self.seed, "noise-target"), ..self.noise() }
    }

    pub fn model(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            in_length: m.in_length,
            pad_to: m.pad_to,
            kernel_size: m.kernel_size,
            encoder_channels: m.encoder_channels.clone(),
            activation: m.activation,
            seed: derive(self.seed, "model"),
            scaling: m.scaling,
        }
    }

    pub fn train(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            early_stop_patience: t.early_stop_patience,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            seed: derive(self.seed, "train"),
            precision: t.precision,
        }
    }

    pub fn band_depth_param(&self, name: &str) -> CliResult<&BandDepthParam> {
        self.band_depth.params.iter().find(|p| p.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.band_depth.params.iter().map(|p| p.name.as_str()).collect();
            CliError::config(format!("unknown band-depth parameter `{name}` (configured: {})", known.join(", ")))
        })
    }

    /// Checks every section; messages are prefixed with the section name.
    pub fn validate(&self, grid: &WavelengthGrid) -> CliResult<()> {
        section("scene", self.scene()?.validate(grid))?;
        section("scene", self.scene()?.assign_groups().map(|_| ()))?;
        section("noise", self.noise().validate())?;
        let model = self.model();
        section("model", model.validate())?;
        if model.in_length != N_CHANNELS {
            return Err(CliError::config(format!(
                "model.in_length: spectra have {N_CHANNELS} channels, got {}",
                model.in_length
            )));
        }
        section("train", self.train().validate())?;
        section("sg", self.sg.validate())?;
        section("cotcat_like", self.cotcat_like.validate())?;
        let bd = &self.band_depth;
        if !(bd.threshold.is_finite() && bd.threshold > 0.0) {
            return Err(CliError::config(format!("band_depth.threshold must be positive, got {}", bd.threshold)));
        }
        let mut names = std::collections::BTreeSet::new();
        for p in &bd.params {
            if !names.insert(p.name.as_str()) {
                return Err(CliError::config(format!("band_depth.params: duplicate name `{}`", p.name)));
            }
            section("band_depth.params", p.validate(grid))?;
        }
        Ok(())
    }
}
