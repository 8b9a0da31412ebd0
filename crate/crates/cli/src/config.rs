//! Run configuration: one TOML file, every section optional. Command-line
//! flags override individual keys, and the resolved result is written next to
//! every command's outputs.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use noisomics_core::engine::{parse_order, EngineConfig, PoissonMode, QuantizationMode};
use noisomics_core::model::{EncoderConfig, Schedule};
use noisomics_core::procedural::TextureKind;
use noisomics_core::Primitive;
use serde::{Deserialize, Serialize};

use crate::checkpoint_io::ModelConfig;

pub const RESOLVED_NAME: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Parallel workers for synthesis and inference; 0 means all cores.
    pub workers: usize,
    pub synthesize: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub estimate: EstimateConfig,
    pub analyze: AnalyzeConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            synthesize: SynthConfig::default(),
            model: ModelConfig::from(&EncoderConfig::default()),
            train: TrainConfig::default(),
            estimate: EstimateConfig::default(),
            analyze: AnalyzeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderMode {
    /// Every sample uses `stage_order`.
    Fixed,
    /// Each sample shuffles the six stages from its own stream.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    /// `"procedural"` or a directory of `.png`/`.pgm`/`.nsmt` clean images.
    pub source: String,
    pub size: usize,
    pub channels: usize,
    pub textures: Vec<String>,
    pub order_mode: OrderMode,
    pub stage_order: Vec<String>,
    pub quantization: String,
    pub poisson: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 100,
            source: "procedural".into(),
            size: 16,
            channels: 1,
            textures: vec!["mixed".into()],
            order_mode: OrderMode::Fixed,
            stage_order: Primitive::ALL.iter().map(|p| p.name().to_string()).collect(),
            quantization: "dithered".into(),
            poisson: "literal".into(),
        }
    }
}

impl SynthConfig {
    pub fn engine(&self) -> Result<EngineConfig> {
        let quantization = match self.quantization.as_str() {
            "dithered" => QuantizationMode::Dithered,
            "additive" => QuantizationMode::Additive,
            o => bail!("unknown quantization mode `{}`", o),
        };
        let poisson = match self.poisson.as_str() {
            "literal" => PoissonMode::Literal,
            "centered" => PoissonMode::Centered,
            o => bail!("unknown poisson mode `{}`", o),
        };
        Ok(EngineConfig { quantization, poisson })
    }

    pub fn order(&self) -> Result<Vec<Primitive>> {
        Ok(parse_order(&self.stage_order)?)
    }

    pub fn texture_kinds(&self) -> Result<Vec<TextureKind>> {
        if self.textures.is_empty() {
            bail!("synthesize.textures is empty");
        }
        self.textures.iter().map(|t| parse_texture(t)).collect()
    }
}

pub fn parse_texture(name: &str) -> Result<TextureKind> {
    let all = TextureKind::BASIC.into_iter().chain([TextureKind::Mixed]);
    all.into_iter()
        .find(|k| k.name() == name)
        .with_context(|| format!("unknown texture `{}`", name))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub temperature: f64,
    pub clip_norm: f64,
    /// Positives reuse the anchor's exact noise draws.
    pub shared_realization: bool,
    /// Weight of the regression term in joint training.
    pub joint_weight: f64,
    /// Trailing share of labeled records held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = Schedule::default();
        Self {
            epochs: s.epochs,
            batch_size: s.batch_size,
            learning_rate: s.learning_rate,
            momentum: s.momentum,
            temperature: s.temperature,
            clip_norm: s.clip_norm,
            shared_realization: true,
            joint_weight: 1.0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            temperature: self.temperature,
            clip_norm: self.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub windows: usize,
    /// Zero selects the model's input size.
    pub window_size: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self { windows: 5, window_size: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Any of `metrics`, `classification`, `correlation`, `shapley`, `depth`.
    pub analyses: Vec<String>,
    pub thresholds: Vec<f64>,
    /// Records whose `arm` equals this label form the control arm; all
    /// other labeled records form the intervention arm.
    pub control_arm: String,
    /// Background rows for Shapley values (taken in manifest order).
    pub shapley_background: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            analyses: ["metrics", "classification", "correlation", "shapley", "depth"]
                .map(String::from)
                .to_vec(),
            thresholds: (1..=10).map(|i| i as f64 * 0.05).collect(),
            control_arm: "fixed".into(),
            shapley_background: 100,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(RESOLVED_NAME), self.to_toml())?;
        Ok(())
    }

    /// Encoder shape from `[model]`; weights are initialized from the root seed.
    pub fn encoder(&self) -> Result<EncoderConfig> {
        let mut c = self.model.to_core()?;
        c.init_seed = self.seed;
        Ok(c)
    }
}
