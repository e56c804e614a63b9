//! On-disk run directories.
//!
//! Every deterministic artifact of a run lives in its own file; wall-clock
//! data (ids, timestamps, timings) is confined to `meta.json`, which is
//! written first as `running` and last as `complete` or `failed`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use rand::distributions::Alphanumeric;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use worldprog_core::prompt::AblationFlags;

use crate::vlm::store::write_atomic;
use crate::{Error, Result};

pub const META: &str = "meta.json";
pub const SCENE: &str = "scene.json";
pub const INPUT: &str = "input.png";
pub const PROMPT: &str = "prompt.txt";
pub const FRAMES: &str = "frames";
pub const STMAP: &str = "stmap.png";
pub const SCORES: &str = "scores.json";
pub const TRACE: &str = "trace.json";
pub const SAMPLES: &str = "samples";
pub const INTERVENTION_PROGRAM: &str = "program.intervention.src";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Generate,
    Intervention,
}

/// Scene description stored alongside `input.png`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub caption: String,
    pub frame_size: (usize, usize),
    pub fps: f64,
    pub duration_s: f64,
    pub ablation: AblationFlags,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub id: String,
    pub kind: RunKind,
    pub status: RunStatus,
    pub created_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_run: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    /// File name of the program whose frames are at the top level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_program: Option<String>,
    /// Execution status of the final program, when one ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec_status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_sample: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Stage timings in milliseconds.
    #[serde(default)]
    pub timings_ms: BTreeMap<String, u64>,
    #[serde(default)]
    pub config: Value,
}

/// A fresh run id: UTC timestamp plus a random suffix.
pub fn new_run_id() -> String {
    let suffix: String =
        rand::thread_rng().sample_iter(&Alphanumeric).take(6).map(|c| (c as char).to_ascii_lowercase()).collect();
    format!("{}-{suffix}", Utc::now().format("%Y%m%dT%H%M%S%3fZ"))
}

pub fn now_rfc3339() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, id: &str) -> Result<PathBuf> {
        if !valid_id(id) {
            return Err(Error::NotFound(format!("run {id:?}")));
        }
        Ok(self.root.join(id))
    }

    /// Creates a run directory with a `running` meta.
    pub fn create(&self, kind: RunKind, parent_run: Option<String>, request_id: Option<String>, config: Value) -> Result<RunMeta> {
        loop {
            let id = new_run_id();
            let dir = self.root.join(&id);
            match std::fs::create_dir(&dir) {
                Ok(()) => {
                    let meta = RunMeta {
                        id,
                        kind,
                        status: RunStatus::Running,
                        created_at: now_rfc3339(),
                        finished_at: None,
                        parent_run,
                        request_id,
                        final_program: None,
                        exec_status: None,
                        primary_sample: None,
                        error: None,
                        timings_ms: BTreeMap::new(),
                        config,
                    };
                    self.save_meta(&meta)?;
                    return Ok(meta);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn save_meta(&self, meta: &RunMeta) -> Result<()> {
        write_atomic(&self.run_dir(&meta.id)?.join(META), &serde_json::to_vec_pretty(meta)?)
    }

    pub fn meta(&self, id: &str) -> Result<RunMeta> {
        let path = self.run_dir(id)?.join(META);
        if !path.is_file() {
            return Err(Error::NotFound(format!("run {id}")));
        }
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Marks a run finished. Called last, after every artifact is on disk.
    pub fn finish(&self, meta: &mut RunMeta, status: RunStatus, error: Option<String>) -> Result<()> {
        meta.status = status;
        meta.error = error;
        meta.finished_at = Some(now_rfc3339());
        self.save_meta(meta)
    }

    /// All runs, oldest first.
    pub fn list(&self) -> Result<Vec<RunMeta>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.file_type()?.is_dir() && entry.path().join(META).is_file() {
                match self.meta(&name) {
                    Ok(m) => out.push(m),
                    Err(e) => tracing::warn!(run = %name, error = %e, "unreadable run meta"),
                }
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    /// The run previously created for `request_id` under the same parent.
    pub fn find_request(&self, request_id: &str, parent_run: Option<&str>) -> Result<Option<RunMeta>> {
        Ok(self
            .list()?
            .into_iter()
            .find(|m| m.request_id.as_deref() == Some(request_id) && m.parent_run.as_deref() == parent_run))
    }

    /// Marks runs left `running` by a previous process as failed.
    pub fn recover(&self) -> Result<usize> {
        let mut n = 0;
        for mut m in self.list()? {
            if m.status == RunStatus::Running {
                self.finish(&mut m, RunStatus::Failed, Some("interrupted before completion".into()))?;
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn write(&self, id: &str, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.run_dir(id)?.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes)
    }

    pub fn write_json<T: Serialize>(&self, id: &str, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(id, rel, &bytes)
    }

    pub fn read(&self, id: &str, rel: &str) -> Result<Vec<u8>> {
        let path = self.run_dir(id)?.join(rel);
        std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(format!("{rel} in run {id}")),
            _ => e.into(),
        })
    }

    pub fn read_json<T: serde::de::DeserializeOwned>(&self, id: &str, rel: &str) -> Result<T> {
        Ok(serde_json::from_slice(&self.read(id, rel)?)?)
    }
}

/// Recursively copies regular files from `src` into `dst`.
pub fn copy_tree(src: &Path, dst: &Path) -> Result<()> {
    std::fs::create_dir_all(dst)?;
    for entry in std::fs::read_dir(src)? {
        let entry = entry?;
        let to = dst.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &to)?;
        } else {
            std::fs::copy(entry.path(), to)?;
        }
    }
    Ok(())
}
