//! Run configuration: TOML file, environment and flags, in increasing precedence.

use std::path::Path;

use serde::{Deserialize, Serialize};
use xstereo::eval::{Bucket, DEFAULT_BUCKETS};
use xstereo::gating::{GatingConfig, SensorNoise};
use xstereo::matching::{MatchConfig, MatchMode};
use xstereo::scenesim::{CameraId, RenderConfig, RigSpec};
use xstereo::tofdecode::DecodeConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Day,
    Night,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Night, Preset::Day];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Day => "day",
            Preset::Night => "night",
        }
    }

    pub fn ambient_level(self) -> f64 {
        match self {
            Preset::Day => 1.0,
            Preset::Night => 0.02,
        }
    }

    /// Gated illuminator amplitude.
    pub fn laser_gain(self) -> f64 {
        match self {
            Preset::Day => 0.3,
            Preset::Night => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub preset: Preset,
    pub frames: usize,
    /// Gated resolution; RCCB cameras use `rccb_ratio` times as many pixels per side.
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub rccb_ratio: usize,
    pub objects: usize,
    pub supersample: usize,
    /// Rig twist `(ω, v)` in rad/s and m/s.
    pub velocity: [f64; 6],
    /// RCCB shutter timing error (s).
    pub time_offset: f64,
    pub delta_t_jitter: f64,
    pub gated_read_sigma: f64,
    pub gated_shot_scale: f64,
    pub rccb_read_sigma: f64,
    pub rccb_shot_scale: f64,
    pub lidar_lines: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Night,
            frames: 10,
            width: 320,
            height: 160,
            focal: 400.0,
            rccb_ratio: 3,
            objects: 12,
            supersample: 3,
            velocity: [0.0, 0.0, 0.0, 0.0, 0.0, 10.0],
            time_offset: 0.02,
            delta_t_jitter: 1e-3,
            gated_read_sigma: 0.002,
            gated_shot_scale: 4000.0,
            rccb_read_sigma: 0.003,
            rccb_shot_scale: 4000.0,
            lidar_lines: 64,
        }
    }
}

impl SimConfig {
    pub fn rig(&self) -> RigSpec {
        let mut rig = RigSpec::standard(self.width, self.height, self.focal, self.rccb_ratio);
        rig.time_offset_truth = self.time_offset;
        rig.rig_velocity = self.velocity;
        rig
    }

    pub fn render_config(&self, preset: Preset, frame_seed: u64) -> RenderConfig {
        let noise = |read_sigma: f64, shot_scale: f64, salt: u64| {
            (read_sigma > 0.0 || shot_scale > 0.0).then_some(SensorNoise { read_sigma, shot_scale, seed: mix(frame_seed, salt) })
        };
        RenderConfig {
            gating: GatingConfig::staggered(preset.laser_gain()),
            gated_noise: noise(self.gated_read_sigma, self.gated_shot_scale, 1),
            rccb_noise: noise(self.rccb_read_sigma, self.rccb_shot_scale, 2),
            lidar_lines: self.lidar_lines,
            delta_t_jitter: self.delta_t_jitter,
            supersample: self.supersample,
            seed: frame_seed,
            ..RenderConfig::default()
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.width == 0 || self.height == 0 || self.rccb_ratio == 0 || self.supersample == 0 {
            return Err("sim: width, height, rccb_ratio and supersample must be positive".into());
        }
        if self.width % 2 == 1 || self.height % 2 == 1 {
            return Err("sim: width and height must be even".into());
        }
        if !(self.focal > 0.0) {
            return Err(format!("sim.focal must be positive, got {}", self.focal));
        }
        Ok(())
    }
}

/// Ground truth used for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    /// Rendered depth of every pixel.
    Dense,
    /// Scanline samples only.
    Lidar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub buckets: Vec<Bucket>,
    /// Camera whose pixels are scored; every mode is reprojected into it.
    pub view: CameraId,
    pub ground_truth: GroundTruth,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { buckets: DEFAULT_BUCKETS.to_vec(), view: CameraId::GatedLeft, ground_truth: GroundTruth::Dense }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub presets: Vec<Preset>,
    pub modes: Vec<MatchMode>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { presets: Preset::ALL.to_vec(), modes: MatchMode::ALL.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; 0 picks one per core.
    pub threads: usize,
    pub sim: SimConfig,
    pub decode: DecodeConfig,
    pub matching: MatchConfig,
    pub eval: EvalConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 2024,
            threads: 0,
            sim: SimConfig::default(),
            decode: DecodeConfig::default(),
            matching: MatchConfig::default(),
            eval: EvalConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|msg| CliError::Config(format!("{}: {msg}", path.display())))
    }

    /// Parses TOML; messages carry the line, column and offending field.
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.sim.validate()?;
        self.matching.validate().map_err(|e| format!("matching: {e}"))?;
        if self.eval.buckets.iter().any(|b| !(b.hi > b.lo)) {
            return Err("eval.buckets: every bucket needs lo < hi".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Seed of frame `index` in a dataset rendered with `preset`.
    pub fn frame_seed(&self, preset: Preset, index: usize) -> u64 {
        mix(mix(self.seed, preset as u64 + 1), index as u64)
    }
}

/// SplitMix64 step of `a ^ b`.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut x = (a ^ b.wrapping_mul(0xd1b5_4a32_d192_ed03)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
