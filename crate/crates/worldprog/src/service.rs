//! The pipeline as a service: generate, evaluate and intervene on runs kept
//! in a [`RunStore`]. Used by both the CLI and the REST server.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use worldprog_core::metrics::{best_of_n, score_video, ScoreReport};
use worldprog_core::prompt::{AblationFlags, EnvironmentSpec, SceneInput, Templates, ToolSpec};
use worldprog_core::stmap::spatiotemporal_map;
use worldprog_core::RgbImage;

use crate::config::PipelineConfig;
use crate::imageio::{decode_png, encode_png, frame_name, read_frames, read_png};
use crate::params::{apply_patches, list_parameters, Parameter};
use crate::perception::{Toolbox, FIXTURE_LABELS, FIXTURE_LEGEND};
use crate::refine::{
    refine_loop, Agent, Budgets, CreatedBy, ExecutionRecord, Executor, Lineage, LoopEvent, RefinementRecord,
    WorldProgram,
};
use crate::sandbox::{ExecStatus, ExecutionBudget, ExecutionResult, Sandbox};
use crate::store::{
    RunKind, RunMeta, RunStatus, RunStore, SceneRecord, FRAMES, INPUT, INTERVENTION_PROGRAM, PROMPT, SAMPLES, SCENE,
    SCORES, STMAP, TRACE,
};
use crate::vlm::{backend_from_config, ChatBackend, ChatRequest, ChatResponse};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateRequest {
    pub image: RgbImage,
    pub caption: String,
    pub ablation: AblationFlags,
    /// Overrides `model.n_samples`.
    pub n_samples: Option<usize>,
    pub request_id: Option<String>,
    /// Directory holding a perception fixture (`labels.png`, `legend.json`).
    pub fixture_dir: Option<PathBuf>,
}

impl GenerateRequest {
    pub fn new(image: RgbImage, caption: impl Into<String>) -> Self {
        Self {
            image,
            caption: caption.into(),
            ablation: AblationFlags::default(),
            n_samples: None,
            request_id: None,
            fixture_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intervention {
    /// Dotted parameter paths to new values, applied in key order.
    ParameterPatch { patches: BTreeMap<String, Value> },
    SourceEdit { source: String },
    CaptionEdit { caption: String },
}

impl Intervention {
    pub fn kind(&self) -> &'static str {
        match self {
            Intervention::ParameterPatch { .. } => "parameter_patch",
            Intervention::SourceEdit { .. } => "source_edit",
            Intervention::CaptionEdit { .. } => "caption_edit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramEntry {
    pub file: String,
    pub lineage: Lineage,
    pub created_by: CreatedBy,
}

/// Deterministic record of one sample's path through the loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub sample_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<ExecStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_program: Option<String>,
    pub frame_count: usize,
    pub programs: Vec<ProgramEntry>,
    pub executions: Vec<ExecutionRecord>,
    pub refinements: Vec<RefinementRecord>,
    pub debug_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    /// Set when no program was produced at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresFile {
    pub best: ScoreReport,
    pub samples: Vec<ScoreReport>,
}

/// Sums latency over every chat call made through it.
struct Metered {
    inner: Arc<dyn ChatBackend>,
    latency_ms: AtomicU64,
}

impl ChatBackend for Metered {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let r = self.inner.complete(request)?;
        self.latency_ms.fetch_add(r.latency_ms, Ordering::Relaxed);
        Ok(r)
    }
}

fn ms_since(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

pub struct Pipeline {
    pub config: PipelineConfig,
    chat: Arc<dyn ChatBackend>,
    templates: Templates,
    sandbox: Sandbox,
    store: RunStore,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, chat: Arc<dyn ChatBackend>, store: RunStore) -> Result<Self> {
        config.validate()?;
        let templates = match &config.model.templates {
            Some(dir) => Templates::load(dir)?,
            None => Templates::bundled()?,
        };
        let sandbox = Sandbox::from_config(&config.budgets);
        Ok(Self { config, chat, templates, sandbox, store })
    }

    /// Chat backend and run store as configured.
    pub fn from_config(config: PipelineConfig) -> Result<Self> {
        let chat = backend_from_config(&config.model)?;
        let store = RunStore::open(&config.serve.store)?;
        Self::new(config, chat, store)
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    fn config_snapshot(&self) -> Value {
        serde_json::to_value(&self.config).unwrap_or(Value::Null)
    }

    fn scene_input(&self, image: RgbImage, record: &SceneRecord) -> SceneInput {
        SceneInput {
            image,
            caption: record.caption.clone(),
            frame_size: record.frame_size,
            fps: record.fps,
            duration_s: record.duration_s,
            gt_video: None,
        }
    }

    /// The stored scene of a run.
    pub fn load_scene(&self, id: &str) -> Result<(SceneRecord, SceneInput)> {
        let record: SceneRecord = self.store.read_json(id, SCENE)?;
        let image = decode_png(&self.store.read(id, INPUT)?)?;
        let scene = self.scene_input(image, &record);
        Ok((record, scene))
    }

    fn toolbox_for(&self, id: &str, ablation: &AblationFlags) -> Result<Option<Toolbox>> {
        if ablation.no_api {
            return Ok(None);
        }
        let dir = self.store.run_dir(id)?;
        Ok(Some(Toolbox::from_config(&self.config.toolbox, Some(&dir), self.config.budgets.rng_seed)?))
    }

    fn copy_fixture(&self, from: &Path, id: &str) -> Result<()> {
        for name in [FIXTURE_LABELS, FIXTURE_LEGEND] {
            let src = from.join(name);
            if src.is_file() {
                self.store.write(id, name, &std::fs::read(src)?)?;
            }
        }
        Ok(())
    }

    /// Runs the full pipeline synchronously.
    pub fn generate(&self, req: &GenerateRequest) -> Result<RunMeta> {
        let (meta, existing) = self.begin_generate(req, RunKind::Generate, None)?;
        if existing {
            return Ok(meta);
        }
        Ok(self.run_generate(meta))
    }

    /// Validates the request and creates the run directory; returns an
    /// existing run instead when `request_id` was seen before.
    pub fn begin_generate(&self, req: &GenerateRequest, kind: RunKind, parent: Option<&str>) -> Result<(RunMeta, bool)> {
        if let Some(rid) = &req.request_id {
            if let Some(m) = self.store.find_request(rid, parent)? {
                return Ok((m, true));
            }
        }
        let n_samples = req.n_samples.unwrap_or(self.config.model.n_samples);
        if n_samples == 0 {
            return Err(Error::Precondition("n_samples must be ≥ 1".into()));
        }
        let b = &self.config.budgets;
        let record = SceneRecord {
            caption: if req.ablation.no_caption { String::new() } else { req.caption.clone() },
            frame_size: b.frame_size,
            fps: b.fps,
            duration_s: b.duration_s,
            ablation: req.ablation,
            n_samples,
        };
        self.scene_input(req.image.clone(), &record).validate(&req.ablation)?;
        let meta = self.store.create(kind, parent.map(str::to_string), req.request_id.clone(), self.config_snapshot())?;
        self.store.write_json(&meta.id, SCENE, &record)?;
        self.store.write(&meta.id, INPUT, &encode_png(&req.image)?)?;
        if let Some(dir) = &req.fixture_dir {
            self.copy_fixture(dir, &meta.id)?;
        }
        Ok((meta, false))
    }

    /// Completes a run created by [`Pipeline::begin_generate`]. Failures are
    /// recorded in the returned meta.
    pub fn run_generate(&self, mut meta: RunMeta) -> RunMeta {
        let started = Instant::now();
        let metered = Metered { inner: self.chat.clone(), latency_ms: AtomicU64::new(0) };
        let result = self.generate_samples(&mut meta, &metered);
        meta.timings_ms.insert("total".into(), ms_since(started));
        meta.timings_ms.insert("vlm_latency".into(), metered.latency_ms.load(Ordering::Relaxed));
        self.conclude(meta, result)
    }

    fn conclude(&self, mut meta: RunMeta, result: Result<()>) -> RunMeta {
        let (status, error) = match result {
            Ok(()) => (RunStatus::Complete, None),
            Err(e) => {
                tracing::error!(run = %meta.id, error = %e, "run failed");
                (RunStatus::Failed, Some(e.to_string()))
            }
        };
        if let Err(e) = self.store.finish(&mut meta, status, error) {
            tracing::error!(run = %meta.id, error = %e, "could not write run meta");
        }
        meta
    }

    fn generate_samples(&self, meta: &mut RunMeta, chat: &dyn ChatBackend) -> Result<()> {
        let id = meta.id.clone();
        let (record, scene) = self.load_scene(&id)?;
        let toolbox = self.toolbox_for(&id, &record.ablation)?;
        let allowed = self.config.budgets.allowed_imports.clone();
        let env = EnvironmentSpec::from_templates(&self.templates, allowed)?;
        let tools = ToolSpec::from_templates(&self.templates)?;
        let exec = Executor {
            sandbox: &self.sandbox,
            scene: &scene,
            budget: ExecutionBudget::for_scene(&scene, &self.config.budgets),
            toolbox: toolbox.as_ref(),
        };
        let budgets =
            Budgets { critic_rounds: self.config.budgets.critic_rounds, debug_attempts: self.config.budgets.debug_attempts };
        let mut primary: Option<(usize, SampleTrace)> = None;
        let mut first: Option<SampleTrace> = None;
        for k in 0..record.n_samples {
            let agent = Agent {
                chat,
                templates: &self.templates,
                env: env.clone(),
                tools: tools.clone(),
                model_id: self.config.model.model_id.clone(),
                temperature: self.config.model.temperature,
                max_output: self.config.model.max_output,
                sample_index: k as u32,
                ablation: record.ablation,
                traceback_lines: self.config.budgets.traceback_lines,
            };
            if k == 0 {
                self.store.write(&id, PROMPT, agent.generation_prompt(&scene)?.render_text().as_bytes())?;
            }
            let started = Instant::now();
            let trace = self.run_sample(&id, k, &agent, &exec, budgets)?;
            meta.timings_ms.insert(format!("sample{k}"), ms_since(started));
            if primary.is_none() && trace.status == Some(ExecStatus::Ok) {
                primary = Some((k, trace.clone()));
            }
            if first.is_none() {
                first = Some(trace);
            }
        }
        let (k, trace) = match (primary, first) {
            (Some(p), _) => p,
            (None, Some(t)) => (0, t),
            (None, None) => unreachable!("n_samples ≥ 1"),
        };
        let dir = self.store.run_dir(&id)?;
        crate::store::copy_tree(&dir.join(SAMPLES).join(format!("s{k}")), &dir)?;
        meta.primary_sample = Some(k);
        meta.final_program = trace.final_program.clone();
        meta.exec_status = trace.status.map(|s| status_name(s).to_string());
        Ok(())
    }

    fn run_sample(
        &self,
        id: &str,
        k: usize,
        agent: &Agent<'_>,
        exec: &Executor<'_>,
        budgets: Budgets,
    ) -> Result<SampleTrace> {
        let base = format!("{SAMPLES}/s{k}");
        let mut trace = SampleTrace {
            sample_index: k,
            status: None,
            final_program: None,
            frame_count: 0,
            programs: Vec::new(),
            executions: Vec::new(),
            refinements: Vec::new(),
            debug_steps: 0,
            aborted: None,
            error: None,
        };
        let initial = match agent.generate(exec.scene) {
            Ok(p) => p,
            Err(e @ (Error::Io(_) | Error::Json(_))) => return Err(e),
            Err(e) => {
                tracing::warn!(run = %id, sample = k, error = %e, "generation failed");
                trace.error = Some(format!("generation failed: {e}"));
                self.store.write_json(id, &format!("{base}/{TRACE}"), &trace)?;
                return Ok(trace);
            }
        };
        let write_errors: Mutex<Vec<Error>> = Mutex::new(Vec::new());
        let mut observer = |ev: LoopEvent<'_>| {
            let r = match ev {
                LoopEvent::Program(p) => self.store.write(id, &format!("{base}/{}", p.lineage.file_name()), p.source.as_bytes()),
                LoopEvent::Execution(p, res) => {
                    tracing::info!(run = %id, sample = k, program = %p.lineage.file_name(), status = ?res.status, "executed");
                    Ok(())
                }
                LoopEvent::Critique { round, critique, st_map } => self
                    .store
                    .write_json(id, &format!("{base}/critique.round{round}.json"), critique)
                    .and_then(|_| self.store.write(id, &format!("{base}/stmap.round{round}.png"), &encode_png(st_map)?)),
            };
            if let Err(e) = r {
                write_errors.lock().expect("error list poisoned").push(e);
            }
        };
        let outcome = refine_loop(agent, exec, initial, budgets, self.config.eval.motion_threshold, &mut observer)?;
        if let Some(e) = write_errors.into_inner().expect("error list poisoned").into_iter().next() {
            return Err(e);
        }
        if outcome.result.status.is_ok() {
            self.write_frames(id, &base, &outcome.result.frames)?;
        }
        trace.status = Some(outcome.result.status);
        trace.final_program = Some(outcome.program.lineage.file_name());
        trace.frame_count = outcome.result.frames.len();
        trace.programs = outcome
            .history
            .iter()
            .map(|p| ProgramEntry { file: p.lineage.file_name(), lineage: p.lineage, created_by: p.created_by })
            .collect();
        trace.executions = outcome.executions;
        trace.refinements = outcome.records;
        trace.debug_steps = outcome.debug_steps;
        trace.aborted = outcome.aborted;
        self.store.write_json(id, &format!("{base}/{TRACE}"), &trace)?;
        Ok(trace)
    }

    fn write_frames(&self, id: &str, base: &str, frames: &[RgbImage]) -> Result<()> {
        let prefix = if base.is_empty() { String::new() } else { format!("{base}/") };
        for (i, f) in frames.iter().enumerate() {
            self.store.write(id, &format!("{prefix}{FRAMES}/{}", frame_name(i)), &encode_png(f)?)?;
        }
        let map = spatiotemporal_map(frames, self.config.eval.motion_threshold)?;
        self.store.write(id, &format!("{prefix}{STMAP}"), &encode_png(&map.image)?)
    }

    /// Frame directories to score: one per sample, or the top level for
    /// runs without samples.
    fn frame_sets(&self, id: &str) -> Result<Vec<(usize, PathBuf)>> {
        let dir = self.store.run_dir(id)?;
        let samples = dir.join(SAMPLES);
        let mut out = Vec::new();
        if samples.is_dir() {
            let mut k = 0;
            while samples.join(format!("s{k}")).is_dir() {
                let frames = samples.join(format!("s{k}")).join(FRAMES);
                if frames.is_dir() {
                    out.push((k, frames));
                }
                k += 1;
            }
        } else if dir.join(FRAMES).is_dir() {
            out.push((0, dir.join(FRAMES)));
        }
        Ok(out)
    }

    /// Scores every successful sample against ground truth, keeps the best,
    /// and writes `scores.json`.
    pub fn evaluate(&self, id: &str, gt: &[RgbImage], gt_fps: f64, category: &str) -> Result<ScoresFile> {
        let meta = self.store.meta(id)?;
        if meta.status != RunStatus::Complete {
            return Err(Error::NothingToEvaluate(format!("run {id} is {:?}", meta.status)));
        }
        let (record, _) = self.load_scene(id)?;
        let sets = self.frame_sets(id)?;
        if sets.is_empty() {
            return Err(Error::NothingToEvaluate(format!("run {id} produced no frames")));
        }
        let mut samples = Vec::new();
        for (k, dir) in sets {
            let frames = read_frames(&dir)?;
            let mut r = score_video(&frames, record.fps, gt, gt_fps, self.config.eval.motion(), self.config.eval.combiner())?;
            r.sample_index = k;
            r.category = category.to_string();
            samples.push(r);
        }
        let scores = ScoresFile { best: best_of_n(&samples)?, samples };
        self.store.write_json(id, SCORES, &scores)?;
        Ok(scores)
    }

    pub fn scores(&self, id: &str) -> Result<ScoresFile> {
        self.store.read_json(id, SCORES)
    }

    /// Source of the program whose frames the run reports.
    pub fn program(&self, id: &str) -> Result<(String, String)> {
        let meta = self.store.meta(id)?;
        let file = meta.final_program.ok_or_else(|| Error::NotFound(format!("run {id} has no program")))?;
        let source = String::from_utf8_lossy(&self.store.read(id, &file)?).into_owned();
        Ok((file, source))
    }

    pub fn parameters(&self, id: &str) -> Result<Vec<Parameter>> {
        list_parameters(&self.program(id)?.1)
    }

    pub fn frame_count(&self, id: &str) -> Result<usize> {
        let dir = self.store.run_dir(id)?.join(FRAMES);
        Ok(if dir.is_dir() { crate::imageio::frame_paths(dir)?.len() } else { 0 })
    }

    /// PNG bytes of frame `k`.
    pub fn frame_png(&self, id: &str, k: usize) -> Result<Vec<u8>> {
        self.store.meta(id)?;
        let n = self.frame_count(id)?;
        if k >= n {
            return Err(Error::NotFound(format!("frame {k} of run {id} ({n} frames)")));
        }
        self.store.read(id, &format!("{FRAMES}/{}", frame_name(k)))
    }

    pub fn frames(&self, id: &str) -> Result<Vec<RgbImage>> {
        let dir = self.store.run_dir(id)?.join(FRAMES);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        read_frames(dir)
    }

    pub fn stmap_png(&self, id: &str) -> Result<Vec<u8>> {
        self.store.meta(id)?;
        self.store.read(id, STMAP)
    }

    /// Runs an intervention synchronously.
    pub fn intervene(&self, parent: &str, intervention: &Intervention, request_id: Option<String>) -> Result<RunMeta> {
        match self.begin_intervention(parent, intervention, request_id)? {
            (meta, Prepared::Existing) => Ok(meta),
            (meta, prepared) => Ok(self.run_intervention(meta, prepared)),
        }
    }

    /// Checks the intervention against the parent and creates the child run.
    pub fn begin_intervention(
        &self,
        parent: &str,
        intervention: &Intervention,
        request_id: Option<String>,
    ) -> Result<(RunMeta, Prepared)> {
        let parent_meta = self.store.meta(parent)?;
        if parent_meta.status != RunStatus::Complete {
            return Err(Error::Precondition(format!("run {parent} is {:?}", parent_meta.status)));
        }
        if let Some(rid) = &request_id {
            if let Some(m) = self.store.find_request(rid, Some(parent))? {
                return Ok((m, Prepared::Existing));
            }
        }
        let (record, scene) = self.load_scene(parent)?;
        let prepared = match intervention {
            Intervention::ParameterPatch { patches } => {
                let (_, source) = self.program(parent)?;
                let patches: Vec<(String, Value)> = patches.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                Prepared::Execute(apply_patches(&source, &patches)?)
            }
            Intervention::SourceEdit { source } => {
                let report = self.sandbox.validate_contract(source);
                if !report.is_ok() {
                    return Err(Error::Validation(report.violations));
                }
                Prepared::Execute(source.clone())
            }
            Intervention::CaptionEdit { caption } => {
                let req = GenerateRequest {
                    image: scene.image.clone(),
                    caption: caption.clone(),
                    ablation: record.ablation,
                    n_samples: Some(record.n_samples),
                    request_id,
                    fixture_dir: Some(self.store.run_dir(parent)?),
                };
                let (meta, existing) = self.begin_generate(&req, RunKind::Intervention, Some(parent))?;
                return Ok((meta, if existing { Prepared::Existing } else { Prepared::Regenerate }));
            }
        };
        let meta = self.store.create(RunKind::Intervention, Some(parent.into()), request_id, self.config_snapshot())?;
        for name in [SCENE, INPUT, FIXTURE_LABELS, FIXTURE_LEGEND] {
            match self.store.read(parent, name) {
                Ok(bytes) => self.store.write(&meta.id, name, &bytes)?,
                Err(Error::NotFound(_)) => {}
                Err(e) => return Err(e),
            }
        }
        self.store.write_json(&meta.id, "intervention.json", intervention)?;
        Ok((meta, prepared))
    }

    pub fn run_intervention(&self, meta: RunMeta, prepared: Prepared) -> RunMeta {
        match prepared {
            Prepared::Existing => meta,
            Prepared::Regenerate => self.run_generate(meta),
            Prepared::Execute(source) => {
                let mut meta = meta;
                let started = Instant::now();
                let result = self.execute_intervention(&mut meta, &source);
                meta.timings_ms.insert("total".into(), ms_since(started));
                self.conclude(meta, result)
            }
        }
    }

    fn execute_intervention(&self, meta: &mut RunMeta, source: &str) -> Result<()> {
        let id = meta.id.clone();
        self.store.write(&id, INTERVENTION_PROGRAM, source.as_bytes())?;
        let (record, scene) = self.load_scene(&id)?;
        let toolbox = self.toolbox_for(&id, &record.ablation)?;
        let exec = Executor {
            sandbox: &self.sandbox,
            scene: &scene,
            budget: ExecutionBudget::for_scene(&scene, &self.config.budgets),
            toolbox: toolbox.as_ref(),
        };
        let program =
            WorldProgram { source: source.to_string(), lineage: Lineage::default(), created_by: CreatedBy::HumanIntervention };
        let (result, executed): (ExecutionResult, bool) = exec.run(&program)?;
        if result.status.is_ok() {
            self.write_frames(&id, "", &result.frames)?;
        }
        let trace = SampleTrace {
            sample_index: 0,
            status: Some(result.status),
            final_program: Some(INTERVENTION_PROGRAM.into()),
            frame_count: result.frames.len(),
            programs: Vec::new(),
            executions: vec![ExecutionRecord {
                program: program.lineage,
                status: result.status,
                frames: result.frames.len(),
                traceback: result.traceback.clone(),
                executed,
            }],
            refinements: Vec::new(),
            debug_steps: 0,
            aborted: None,
            error: None,
        };
        self.store.write_json(&id, TRACE, &trace)?;
        meta.final_program = Some(INTERVENTION_PROGRAM.into());
        meta.exec_status = Some(status_name(result.status).into());
        Ok(())
    }

    pub fn trace(&self, id: &str) -> Result<SampleTrace> {
        self.store.read_json(id, TRACE)
    }
}

/// Work decided when an intervention is accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prepared {
    Existing,
    Execute(String),
    Regenerate,
}

pub fn status_name(s: ExecStatus) -> &'static str {
    match s {
        ExecStatus::Ok => "ok",
        ExecStatus::RuntimeError => "runtime_error",
        ExecStatus::Timeout => "timeout",
        ExecStatus::Oom => "oom",
        ExecStatus::ContractViolation => "contract_violation",
    }
}

/// Reads an input image from disk.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    read_png(path)
}
