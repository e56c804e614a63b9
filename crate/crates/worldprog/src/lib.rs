//! Pipeline around the world-program core: VLM client with record/replay,
//! sandboxed execution of generated programs, the critic/refine/debug loop,
//! a run store, benchmarks, and the CLI/REST service.

pub mod bench;
pub mod config;
pub mod imageio;
pub mod params;
pub mod perception;
pub mod refine;
pub mod sandbox;
pub mod server;
pub mod service;
pub mod store;
pub mod vlm;

pub use worldprog_core as core;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] worldprog_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("image: {0}")]
    Image(String),
    #[error("replay miss: {0}")]
    ReplayMiss(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("backend: {0}")]
    Backend(String),
    #[error("sandbox: {0}")]
    Sandbox(String),
    #[error("parameter block: {0}")]
    Params(String),
    #[error("parameter path {path:?} not found; available: {}", available.join(", "))]
    PatchPath { path: String, available: Vec<String> },
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("nothing to evaluate: {0}")]
    NothingToEvaluate(String),
    #[error("run failed: {0}")]
    RunFailed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
