//! Pipeline configuration: one TOML document with `model`, `budgets`,
//! `toolbox`, `eval` and `serve` sections. Credentials never live here;
//! the live backend reads its key from the environment variable named by
//! `model.api_key_env`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use worldprog_core::metrics::{Combiner, MotionParams};
use worldprog_core::prompt::AblationFlags;
use worldprog_core::toolbox::{RansacParams, DEFAULT_MIN_INLIER_RATIO};

use crate::{Error, Result};

pub const DEFAULT_ALLOWED_IMPORTS: [&str; 14] = [
    "numpy",
    "scipy",
    "math",
    "random",
    "re",
    "json",
    "itertools",
    "collections",
    "dataclasses",
    "typing",
    "functools",
    "pybullet",
    "pygame",
    "pymunk",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub budgets: BudgetConfig,
    pub toolbox: ToolboxConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatBackendKind {
    /// Live HTTP calls, nothing stored.
    Live,
    /// Live HTTP calls, every exchange written to the transcript store.
    Record,
    /// Transcript store only; a missing digest is an error.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model_id: String,
    pub temperature: f64,
    pub max_output: u32,
    pub backend: ChatBackendKind,
    pub endpoint: String,
    pub api_key_env: String,
    pub transcripts: PathBuf,
    pub request_timeout_s: f64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_factor: f64,
    pub n_samples: usize,
    /// Prompt template directory; the bundled templates when unset.
    pub templates: Option<PathBuf>,
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_id: "gemini-2.5-pro".into(),
            temperature: 1.0,
            max_output: 32768,
            backend: ChatBackendKind::Replay,
            endpoint: "https://generativelanguage.googleapis.com".into(),
            api_key_env: "GEMINI_API_KEY".into(),
            transcripts: PathBuf::from("transcripts"),
            request_timeout_s: 600.0,
            max_attempts: 5,
            backoff_base_ms: 1000,
            backoff_factor: 2.0,
            n_samples: 1,
            templates: None,
            ablation: AblationFlags::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    /// K: critic rounds per sample.
    pub critic_rounds: usize,
    /// D: debug attempts per execution.
    pub debug_attempts: usize,
    pub wall_clock_s: f64,
    pub memory_mb: u64,
    pub rng_seed: u64,
    pub fps: f64,
    pub duration_s: f64,
    pub frame_size: (usize, usize),
    pub traceback_lines: usize,
    pub python: String,
    pub allowed_imports: Vec<String>,
    /// Concurrent sandbox executions in the service.
    pub workers: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            critic_rounds: 2,
            debug_attempts: 3,
            wall_clock_s: 300.0,
            memory_mb: 4096,
            rng_seed: 0,
            fps: 30.0,
            duration_s: 5.0,
            frame_size: (1024, 576),
            traceback_lines: worldprog_core::prompt::DEFAULT_TRACEBACK_LINES,
            python: "python3".into(),
            allowed_imports: DEFAULT_ALLOWED_IMPORTS.iter().map(|s| s.to_string()).collect(),
            workers: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerceptionBackendKind {
    Live,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSelection {
    pub backend: PerceptionBackendKind,
    /// Base URL of the live service.
    pub endpoint: Option<String>,
    /// Directory holding `labels.png` and `legend.json` for the synthetic backend.
    pub fixture: Option<PathBuf>,
}

impl Default for BackendSelection {
    fn default() -> Self {
        Self { backend: PerceptionBackendKind::Synthetic, endpoint: None, fixture: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolboxConfig {
    pub segment: BackendSelection,
    pub pts3d: BackendSelection,
    pub ransac_iterations: usize,
    pub inlier_threshold: f64,
    pub min_inlier_ratio: f64,
}

impl Default for ToolboxConfig {
    fn default() -> Self {
        Self {
            segment: BackendSelection::default(),
            pts3d: BackendSelection::default(),
            ransac_iterations: 500,
            inlier_threshold: 0.01,
            min_inlier_ratio: DEFAULT_MIN_INLIER_RATIO,
        }
    }
}

impl ToolboxConfig {
    pub fn ransac(&self, seed: u64) -> RansacParams {
        RansacParams {
            iterations: self.ransac_iterations,
            inlier_threshold: self.inlier_threshold,
            seed,
            min_inlier_ratio: self.min_inlier_ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinerKind {
    Mean,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub motion_threshold: f64,
    pub min_blob_px: usize,
    pub combiner: CombinerKind,
    pub gt_fps: f64,
    /// Samples per scene in the physics benchmark.
    pub n_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let m = MotionParams::default();
        Self { motion_threshold: m.threshold, min_blob_px: m.min_blob_px, combiner: CombinerKind::Mean, gt_fps: 30.0, n_samples: 3 }
    }
}

impl EvalConfig {
    pub fn motion(&self) -> MotionParams {
        MotionParams { threshold: self.motion_threshold, min_blob_px: self.min_blob_px }
    }

    pub fn combiner(&self) -> Combiner {
        match self.combiner {
            CombinerKind::Mean => Combiner::Mean,
            CombinerKind::Geometric => Combiner::Geometric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub store: PathBuf,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { host: "127.0.0.1".into(), port: 8080, store: PathBuf::from("runs") }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.model_id.trim().is_empty() {
            return Err(Error::Config("model.model_id is empty".into()));
        }
        if !(m.temperature >= 0.0 && m.temperature.is_finite()) {
            return Err(Error::Config(format!("model.temperature {} must be finite and ≥ 0", m.temperature)));
        }
        if m.n_samples == 0 || self.eval.n_samples == 0 {
            return Err(Error::Config("n_samples must be ≥ 1".into()));
        }
        if m.max_attempts == 0 {
            return Err(Error::Config("model.max_attempts must be ≥ 1".into()));
        }
        let b = &self.budgets;
        if !(b.wall_clock_s > 0.0) || b.memory_mb == 0 || b.workers == 0 {
            return Err(Error::Config("wall_clock_s, memory_mb and workers must be positive".into()));
        }
        if !(b.fps > 0.0 && b.duration_s > 0.0) || b.frame_size.0 == 0 || b.frame_size.1 == 0 {
            return Err(Error::Config("fps, duration_s and frame_size must be positive".into()));
        }
        if !(self.eval.motion_threshold >= 0.0) || !(self.eval.gt_fps > 0.0) {
            return Err(Error::Config("eval.motion_threshold must be ≥ 0 and eval.gt_fps positive".into()));
        }
        Ok(())
    }
}
