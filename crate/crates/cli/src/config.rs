//! TOML run configuration.
//!
//! ```toml
//! version = 1
//! seed = 42
//! scenes = 10
//! levels = ["rpf", "qff", "bff"]   # any of rpf, qff, bff, adaptive
//!
//! [scene]      # vehicles, objects, world size; see SceneConfig
//! num_vehicles = 4
//!
//! [shape]      # message shapes and frame rate
//! fps = 5
//! [shape.bev]
//! height = 200
//! width = 200
//! channels = 256
//! extent_m = 102.4
//!
//! [channel]
//! capacity_kbps = inf
//! latency_ms = 0.0
//! drop_prob = 0.0
//! coop_range_m = 200.0
//!
//! [selector]
//! hysteresis_fraction = 0.1
//! min_level = "rpf"
//!
//! [noise]      # optional; omit for noiseless runs
//!
//! [eval]
//! occlusion = true
//!
//! [sweep]
//! level = "qff"
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Channel, noise and scene seeds all derive from the top-level `seed`.

use std::path::{Path, PathBuf};

use coopfuse::bev_fusion::FusionOperator;
use coopfuse::channel::{ChannelConfig, DEFAULT_COOP_RANGE_M};
use coopfuse::derive_seed;
use coopfuse::geometry::{NoiseConfig, RotationSigmas, TranslationSigmas};
use coopfuse::metrics::{
    EvalConfig, LevelChoice, DEFAULT_DETECTION_THRESHOLD, DEFAULT_MATCH_THRESHOLD_M,
};
use coopfuse::query_fusion::DEFAULT_MATCH_RADIUS_M;
use coopfuse::scenario::SceneConfig;
use coopfuse::selector::SelectorConfig;
use coopfuse::wire::{FusionLevel, ShapeConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_VERSION: u32 = 1;

const CHANNEL_SEED_TAG: u64 = 1 << 40;
const NOISE_SEED_TAG: u64 = 2 << 40;
const WEIGHT_SEED_TAG: u64 = 3 << 40;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    #[serde(default = "default_scenes")]
    pub scenes: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<String>,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub shape: ShapeConfig,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub selector: SelectorSection,
    #[serde(default)]
    pub noise: Option<NoiseSection>,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_scenes() -> usize {
    10
}

fn default_levels() -> Vec<String> {
    FusionLevel::ALL.iter().map(|l| l.name().to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub capacity_kbps: f64,
    pub latency_ms: f64,
    pub drop_prob: f64,
    pub coop_range_m: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            capacity_kbps: f64::INFINITY,
            latency_ms: 0.0,
            drop_prob: 0.0,
            coop_range_m: DEFAULT_COOP_RANGE_M,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorSection {
    pub hysteresis_fraction: f64,
    pub min_level: FusionLevel,
}

impl Default for SelectorSection {
    fn default() -> Self {
        let d = SelectorConfig::default();
        Self {
            hysteresis_fraction: d.hysteresis_fraction,
            min_level: d.min_level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub loc_trans_sigma: TranslationSigmas,
    pub loc_rot_sigma: RotationSigmas,
    pub calib_rot_sigma: RotationSigmas,
    pub calib_trans_sigma: TranslationSigmas,
    pub intrinsics_focal_jitter: f64,
    pub intrinsics_principal_jitter: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let d = NoiseConfig::default();
        Self {
            loc_trans_sigma: d.loc_trans_sigma,
            loc_rot_sigma: d.loc_rot_sigma,
            calib_rot_sigma: d.calib_rot_sigma,
            calib_trans_sigma: d.calib_trans_sigma,
            intrinsics_focal_jitter: d.intrinsics_focal_jitter,
            intrinsics_principal_jitter: d.intrinsics_principal_jitter,
        }
    }
}

impl NoiseSection {
    fn with_seed(&self, seed: u64) -> NoiseConfig {
        NoiseConfig {
            loc_trans_sigma: self.loc_trans_sigma,
            loc_rot_sigma: self.loc_rot_sigma,
            calib_rot_sigma: self.calib_rot_sigma,
            calib_trans_sigma: self.calib_trans_sigma,
            intrinsics_focal_jitter: self.intrinsics_focal_jitter,
            intrinsics_principal_jitter: self.intrinsics_principal_jitter,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub occlusion: bool,
    pub detection_threshold: f64,
    pub match_threshold_m: f64,
    pub query_match_radius_m: f64,
    pub operator: FusionOperator,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            occlusion: true,
            detection_threshold: DEFAULT_DETECTION_THRESHOLD,
            match_threshold_m: DEFAULT_MATCH_THRESHOLD_M,
            query_match_radius_m: DEFAULT_MATCH_RADIUS_M,
            operator: FusionOperator::ElementwiseMax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub level: FusionLevel,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            level: FusionLevel::Qff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Parses and validates TOML text.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Invalid(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.scenes == 0 {
            return Err(ConfigError::Invalid("scenes must be at least 1".into()));
        }
        self.level_choices()?;
        self.scene
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.eval_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn level_choices(&self) -> Result<Vec<LevelChoice>, ConfigError> {
        parse_levels(&self.levels)
    }

    /// Seed of scene `i`.
    pub fn scene_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, i as u64)
    }

    pub fn noise_config(&self) -> NoiseConfig {
        self.noise
            .unwrap_or_default()
            .with_seed(derive_seed(self.seed, NOISE_SEED_TAG))
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            shape: self.shape,
            channel: ChannelConfig {
                capacity_kbps: self.channel.capacity_kbps,
                latency_ms: self.channel.latency_ms,
                drop_prob: self.channel.drop_prob,
                coop_range_m: self.channel.coop_range_m,
                fps: self.shape.fps,
                seed: derive_seed(self.seed, CHANNEL_SEED_TAG),
            },
            selector: SelectorConfig {
                hysteresis_fraction: self.selector.hysteresis_fraction,
                min_level: self.selector.min_level,
                shape: self.shape,
            },
            occlusion: self.eval.occlusion,
            noise: self.noise.is_some().then(|| self.noise_config()),
            detection_threshold: self.eval.detection_threshold,
            match_threshold_m: self.eval.match_threshold_m,
            query_match_radius_m: self.eval.query_match_radius_m,
            operator: self.eval.operator.clone(),
            weight_seed: derive_seed(self.seed, WEIGHT_SEED_TAG),
        }
    }
}

/// Accepts `rpf`, `qff`, `bff` and `adaptive`, case-insensitively, without
/// duplicates.
pub fn parse_levels<S: AsRef<str>>(names: &[S]) -> Result<Vec<LevelChoice>, ConfigError> {
    if names.is_empty() {
        return Err(ConfigError::Invalid("levels must not be empty".into()));
    }
    let mut out = Vec::with_capacity(names.len());
    for n in names {
        let n = n.as_ref().trim();
        let c = LevelChoice::parse(n).ok_or_else(|| {
            ConfigError::Invalid(format!("unknown level {n:?}; expected rpf, qff, bff or adaptive"))
        })?;
        if out.contains(&c) {
            return Err(ConfigError::Invalid(format!("level {n:?} listed twice")));
        }
        out.push(c);
    }
    Ok(out)
}
