//! Validation and isolated execution of world programs.
//!
//! Each execution gets a fresh temp directory holding the program, a scene
//! payload and the input image, and one Python child process running the
//! bundled runner. The child writes `frames/%05d.png` and exits with a code
//! naming its status class; the host enforces the wall-clock budget and
//! serves toolbox calls over the child's stdio.

mod rpc;

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wait_timeout::ChildExt;
use worldprog_core::prompt::{simulator_class, SceneInput, CONTRACT_METHODS};
use worldprog_core::RgbImage;

pub use rpc::{NdArray, Session};

use crate::config::BudgetConfig;
use crate::imageio::{frame_name, read_png};
use crate::perception::Toolbox;
use crate::{Error, Result};

pub const RUNNER_SOURCE: &str = include_str!("runner.py");

const EXIT_RUNTIME: i32 = 10;
const EXIT_CONTRACT: i32 = 11;
const EXIT_OOM: i32 = 12;
const KILL_GRACE: Duration = Duration::from_secs(2);
const STDERR_KEEP: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    RuntimeError,
    Timeout,
    Oom,
    ContractViolation,
}

impl ExecStatus {
    pub fn is_ok(self) -> bool {
        self == ExecStatus::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionBudget {
    pub wall_clock_s: f64,
    pub memory_mb: u64,
    pub frame_count: usize,
    pub rng_seed: u64,
}

impl ExecutionBudget {
    pub fn for_scene(scene: &SceneInput, cfg: &BudgetConfig) -> Self {
        Self {
            wall_clock_s: cfg.wall_clock_s,
            memory_mb: cfg.memory_mb,
            frame_count: scene.frame_count(),
            rng_seed: cfg.rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wall_clock_s > 0.0 && self.wall_clock_s.is_finite()) || self.memory_mb == 0 || self.frame_count == 0 {
            return Err(Error::Precondition(format!("execution budget must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    /// Present only for `Ok`.
    pub frames: Vec<RgbImage>,
    /// Empty only for `Ok`.
    pub traceback: String,
    pub elapsed_s: f64,
    /// Tail of whatever the program printed.
    pub stderr: String,
}

impl ExecutionResult {
    fn failed(status: ExecStatus, traceback: String, elapsed_s: f64, stderr: String) -> Self {
        Self { status, frames: Vec::new(), traceback, elapsed_s, stderr }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractReport {
    pub class_name: Option<String>,
    pub violations: Vec<String>,
}

impl ContractReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Violations rendered as a pseudo-traceback for the debugger.
    pub fn as_traceback(&self) -> String {
        let mut s = String::from("ContractViolation: the program failed static validation\n");
        for v in &self.violations {
            s.push_str("  - ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

/// Static contract check: a `Simulator` subclass declaring every contract
/// method, and imports only from `allowed`.
pub fn validate_contract(source: &str, allowed: &[String]) -> ContractReport {
    let mut report = ContractReport::default();
    if source.trim().is_empty() {
        report.violations.push("program source is empty".into());
        return report;
    }
    match simulator_class(source) {
        None => report.violations.push("no class deriving from Simulator".into()),
        Some(name) => {
            let declared = class_methods(source, &name);
            for m in CONTRACT_METHODS {
                if !declared.iter().any(|d| d == m) {
                    report.violations.push(format!("class {name} does not declare {m}"));
                }
            }
            report.class_name = Some(name);
        }
    }
    for (lineno, module) in imported_modules(source) {
        if module.starts_with('.') {
            report.violations.push(format!("disallowed import: relative import {module} (line {lineno})"));
        } else {
            let top = module.split('.').next().unwrap_or_default();
            if !allowed.iter().any(|a| a == top) {
                report.violations.push(format!("disallowed import: {top} (line {lineno})"));
            }
        }
    }
    report
}

fn indent_of(line: &str) -> usize {
    line.len() - line.trim_start().len()
}

/// Method names defined directly in the body of class `name`.
fn class_methods(source: &str, name: &str) -> Vec<String> {
    let lines: Vec<&str> = source.lines().collect();
    let Some(start) = lines.iter().position(|l| {
        l.trim_start()
            .strip_prefix("class ")
            .and_then(|r| r.trim_start().strip_prefix(name))
            .is_some_and(|r| r.trim_start().starts_with(['(', ':']))
    }) else {
        return Vec::new();
    };
    let class_indent = indent_of(lines[start]);
    let mut body_indent = None;
    let mut out = Vec::new();
    for l in &lines[start + 1..] {
        let t = l.trim_start();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let ind = indent_of(l);
        if ind <= class_indent {
            break;
        }
        let bi = *body_indent.get_or_insert(ind);
        if ind == bi {
            if let Some(rest) = t.strip_prefix("def ").or_else(|| t.strip_prefix("async def ")) {
                let n: String = rest.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
                out.push(n);
            }
        }
    }
    out
}

/// `(line number, module)` for every import statement.
fn imported_modules(source: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let t = line.trim();
        let t = t.split('#').next().unwrap_or_default().trim();
        if let Some(rest) = t.strip_prefix("import ") {
            for item in rest.split(',') {
                if let Some(m) = item.split_whitespace().next() {
                    out.push((i + 1, m.to_string()));
                }
            }
        } else if let Some(rest) = t.strip_prefix("from ") {
            if let Some(m) = rest.split_whitespace().next() {
                out.push((i + 1, m.to_string()));
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    pub python: String,
    pub allowed_imports: Vec<String>,
    /// Parent of per-execution temp dirs; the system temp dir when unset.
    pub temp_root: Option<PathBuf>,
}

impl Sandbox {
    pub fn new(python: impl Into<String>, allowed_imports: Vec<String>) -> Self {
        Self { python: python.into(), allowed_imports, temp_root: None }
    }

    pub fn from_config(cfg: &BudgetConfig) -> Self {
        Self::new(cfg.python.clone(), cfg.allowed_imports.clone())
    }

    pub fn validate_contract(&self, source: &str) -> ContractReport {
        validate_contract(source, &self.allowed_imports)
    }

    /// Runs `source` against `scene`. `toolbox = None` injects `api=None`.
    /// Errors are reserved for host-side failures; program failures come
    /// back as a non-ok status.
    pub fn execute(
        &self,
        source: &str,
        scene: &SceneInput,
        budget: &ExecutionBudget,
        toolbox: Option<&Toolbox>,
    ) -> Result<ExecutionResult> {
        budget.validate()?;
        let started = Instant::now();
        let dir = match &self.temp_root {
            Some(root) => {
                std::fs::create_dir_all(root)?;
                tempfile::Builder::new().prefix("exec-").tempdir_in(root)?
            }
            None => tempfile::Builder::new().prefix("worldprog-exec-").tempdir()?,
        };
        let work = dir.path();
        let (fw, fh) = scene.frame_size;
        let payload = json!({
            "frame_size": [fw, fh],
            "fps": scene.fps,
            "frame_count": budget.frame_count,
            "caption": scene.caption,
            "seed": budget.rng_seed,
            "memory_mb": budget.memory_mb,
            "allowed_imports": self.allowed_imports,
            "class_name": simulator_class(source),
            "image_width": scene.image.width,
            "image_height": scene.image.height,
            "api": toolbox.is_some(),
        });
        std::fs::write(work.join("program.py"), source)?;
        std::fs::write(work.join("scene.json"), serde_json::to_vec_pretty(&payload)?)?;
        std::fs::write(work.join("input.rgb"), &scene.image.data)?;
        std::fs::write(work.join("runner.py"), RUNNER_SOURCE)?;

        let mut child = Command::new(&self.python)
            .arg("-I")
            .arg("-B")
            .arg(work.join("runner.py"))
            .arg(work)
            .current_dir(work)
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONIOENCODING", "utf-8")
            .env("OPENBLAS_NUM_THREADS", "1")
            .env("OMP_NUM_THREADS", "1")
            .env("MKL_NUM_THREADS", "1")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Sandbox(format!("cannot start {}: {e}", self.python)))?;

        let stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let mut stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr_thread = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let mut chunk = [0u8; 8192];
            while let Ok(n) = stderr.read(&mut chunk) {
                if n == 0 {
                    break;
                }
                buf.extend_from_slice(&chunk[..n]);
                if buf.len() > 2 * STDERR_KEEP {
                    buf.drain(..buf.len() - STDERR_KEEP);
                }
            }
            let start = buf.len().saturating_sub(STDERR_KEEP);
            String::from_utf8_lossy(&buf[start..]).into_owned()
        });

        let deadline = started + Duration::from_secs_f64(budget.wall_clock_s);
        let mut session = toolbox.map(|tb| Session::new(work, &scene.image, tb));
        let mut timed_out = false;
        loop {
            let now = Instant::now();
            if now >= deadline {
                timed_out = true;
                break;
            }
            match rx.recv_timeout(deadline - now) {
                Ok(Ok(line)) => {
                    if let Some(reply) = handle_message(&line, session.as_mut()) {
                        if let Some(w) = stdin.as_mut() {
                            if writeln!(w, "{reply}").and_then(|_| w.flush()).is_err() {
                                stdin = None;
                            }
                        }
                    }
                }
                Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => break,
                Err(RecvTimeoutError::Timeout) => {
                    timed_out = true;
                    break;
                }
            }
        }
        drop(stdin);
        let exit = if timed_out {
            None
        } else {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match child.wait_timeout(remaining)? {
                Some(s) => Some(s),
                None => {
                    timed_out = true;
                    None
                }
            }
        };
        if timed_out {
            let _ = child.kill();
            let _ = child.wait_timeout(KILL_GRACE)?;
        }
        let stderr_tail = stderr_thread.join().unwrap_or_default();
        let elapsed_s = started.elapsed().as_secs_f64();
        let reported = read_result(work);

        if timed_out {
            let msg = format!("TimeoutError: execution exceeded the wall-clock budget of {} s\n", budget.wall_clock_s);
            return Ok(ExecutionResult::failed(ExecStatus::Timeout, msg, elapsed_s, stderr_tail));
        }
        let status = exit.expect("exit status present when not timed out");
        let fallback = |what: &str| {
            let tail: Vec<&str> = stderr_tail.lines().rev().take(40).collect();
            let tail: Vec<&str> = tail.into_iter().rev().collect();
            if tail.is_empty() {
                format!("{what}\n")
            } else {
                format!("{what}\n{}\n", tail.join("\n"))
            }
        };
        let tb = |what: &str| reported.clone().filter(|t| !t.trim().is_empty()).unwrap_or_else(|| fallback(what));
        let result = match status.code() {
            Some(0) => return Ok(self.collect_frames(work, scene, budget, elapsed_s, stderr_tail)),
            Some(EXIT_RUNTIME) => ExecutionResult::failed(ExecStatus::RuntimeError, tb("program failed"), elapsed_s, stderr_tail),
            Some(EXIT_CONTRACT) => {
                ExecutionResult::failed(ExecStatus::ContractViolation, tb("contract violation"), elapsed_s, stderr_tail)
            }
            Some(EXIT_OOM) => {
                let msg = format!("MemoryError: exceeded the memory budget of {} MB", budget.memory_mb);
                let t = match reported {
                    Some(t) if !t.trim().is_empty() => format!("{t}{msg}\n"),
                    _ => format!("{msg}\n"),
                };
                ExecutionResult::failed(ExecStatus::Oom, t, elapsed_s, stderr_tail)
            }
            Some(code) => {
                ExecutionResult::failed(ExecStatus::RuntimeError, fallback(&format!("runner exited with status {code}")), elapsed_s, stderr_tail)
            }
            None => {
                let sig = signal_of(&status);
                let st = if sig == Some(9) { ExecStatus::Oom } else { ExecStatus::RuntimeError };
                let msg = format!("program terminated by signal {}", sig.map_or("?".into(), |s| s.to_string()));
                ExecutionResult::failed(st, fallback(&msg), elapsed_s, stderr_tail)
            }
        };
        Ok(result)
    }

    fn collect_frames(
        &self,
        work: &Path,
        scene: &SceneInput,
        budget: &ExecutionBudget,
        elapsed_s: f64,
        stderr: String,
    ) -> ExecutionResult {
        let mut frames = Vec::with_capacity(budget.frame_count);
        for k in 0..budget.frame_count {
            match read_png(work.join("frames").join(frame_name(k))) {
                Ok(f) if f.dims() == scene.frame_size => frames.push(f),
                Ok(f) => {
                    let msg = format!(
                        "ContractViolation: frame {k} is {}x{}, expected {}x{}\n",
                        f.width, f.height, scene.frame_size.0, scene.frame_size.1
                    );
                    return ExecutionResult::failed(ExecStatus::ContractViolation, msg, elapsed_s, stderr);
                }
                Err(e) => {
                    let msg = format!("ContractViolation: expected {} frames, frame {k} unreadable: {e}\n", budget.frame_count);
                    return ExecutionResult::failed(ExecStatus::ContractViolation, msg, elapsed_s, stderr);
                }
            }
        }
        ExecutionResult { status: ExecStatus::Ok, frames, traceback: String::new(), elapsed_s, stderr }
    }
}

fn handle_message(line: &str, session: Option<&mut Session<'_>>) -> Option<Value> {
    let msg: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => {
            tracing::warn!(error = %e, "unparseable message from runner");
            return None;
        }
    };
    match msg["type"].as_str() {
        Some("frame") => {
            tracing::trace!(index = msg["index"].as_u64(), "frame rendered");
            None
        }
        Some("call") => {
            let id = msg["id"].clone();
            let op = msg["op"].as_str().unwrap_or_default();
            let outcome = match session {
                Some(s) => s.handle(op, &msg["args"]),
                None => Err("the toolbox API is disabled for this run".to_string()),
            };
            Some(match outcome {
                Ok(result) => json!({ "id": id, "ok": true, "result": result }),
                Err(error) => {
                    tracing::debug!(op, %error, "toolbox call failed");
                    json!({ "id": id, "ok": false, "error": error })
                }
            })
        }
        _ => None,
    }
}

fn read_result(work: &Path) -> Option<String> {
    let text = std::fs::read_to_string(work.join("result.json")).ok()?;
    let v: Value = serde_json::from_str(&text).ok()?;
    v["traceback"].as_str().map(str::to_string)
}

#[cfg(unix)]
fn signal_of(status: &std::process::ExitStatus) -> Option<i32> {
    use std::os::unix::process::ExitStatusExt;
    status.signal()
}

#[cfg(not(unix))]
fn signal_of(_: &std::process::ExitStatus) -> Option<i32> {
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DEFAULT_ALLOWED_IMPORTS;

    fn allowed() -> Vec<String> {
        DEFAULT_ALLOWED_IMPORTS.iter().map(|s| s.to_string()).collect()
    }

    const GOOD: &str = "import numpy as np\nfrom collections import deque\n\nclass VideoSimulation(Simulator):\n    PARAMS = {\"g\": 1}\n\n    def __init__(self, frame_size=(1024, 576), api=None, fps=30):\n        super().__init__(frame_size, api, fps)\n\n    def fit(self, image, text):\n        pass\n\n    def update_simulation(self, dt):\n        def helper():\n            pass\n\n    def render_frame(self):\n        return np.zeros((self.frame_size[1], self.frame_size[0], 3), np.uint8)\n";

    #[test]
    fn conforming_source_has_no_violations() {
        let r = validate_contract(GOOD, &allowed());
        assert!(r.is_ok(), "{:?}", r.violations);
        assert_eq!(r.class_name.as_deref(), Some("VideoSimulation"));
    }

    #[test]
    fn missing_method_is_one_violation() {
        let src = GOOD.replace("def render_frame(self):", "def draw(self):");
        let r = validate_contract(&src, &allowed());
        assert_eq!(r.violations, vec!["class VideoSimulation does not declare render_frame".to_string()]);
    }

    #[test]
    fn nested_def_does_not_count_as_method() {
        let src = GOOD.replace("def update_simulation(self, dt):\n        def helper():", "def step(self, dt):\n        def update_simulation():");
        let r = validate_contract(&src, &allowed());
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn network_import_is_disallowed() {
        for line in ["import socket", "import os, urllib.request", "from http.client import HTTPConnection", "from . import x"] {
            let src = format!("{line}\n{GOOD}");
            let r = validate_contract(&src, &allowed());
            assert!(r.violations.iter().any(|v| v.starts_with("disallowed import")), "{line}: {:?}", r.violations);
        }
    }

    #[test]
    fn no_class_and_empty_source() {
        assert_eq!(validate_contract("x = 1\n", &allowed()).violations, vec!["no class deriving from Simulator".to_string()]);
        assert_eq!(validate_contract("  \n", &allowed()).violations.len(), 1);
    }
}
