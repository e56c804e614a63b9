//! Generation, critique, refinement and traceback-driven debugging of world
//! programs, and the budgeted loop tying them together.

use serde::{Deserialize, Serialize};
use worldprog_core::prompt::{
    assemble_critic_prompt, assemble_debugger_prompt, assemble_generation_prompt, assemble_refiner_prompt,
    extract_critique, extract_program, AblationFlags, Critique, EnvironmentSpec, PromptBundle, SceneInput, Templates,
    ToolSpec,
};
use worldprog_core::stmap::spatiotemporal_map;
use worldprog_core::RgbImage;

use crate::perception::Toolbox;
use crate::sandbox::{ExecStatus, ExecutionBudget, ExecutionResult, Sandbox};
use crate::vlm::{ChatBackend, ChatRequest};
use crate::{Error, Result};

pub const DEBUG_BUDGET_EXHAUSTED: &str = "debug budget exhausted";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Lineage {
    pub generation: u32,
    pub refine: u32,
    pub debug: u32,
}

impl Lineage {
    pub fn file_name(&self) -> String {
        format!("program.g{}.r{}.d{}.src", self.generation, self.refine, self.debug)
    }

    /// True when `next` differs from `self` by exactly one index incremented by one.
    pub fn is_single_step_to(&self, next: &Lineage) -> bool {
        let d = [
            next.generation as i64 - self.generation as i64,
            next.refine as i64 - self.refine as i64,
            next.debug as i64 - self.debug as i64,
        ];
        d.iter().filter(|x| **x == 1).count() == 1 && d.iter().filter(|x| **x == 0).count() == 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CreatedBy {
    Generator,
    Refiner,
    Debugger,
    HumanIntervention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldProgram {
    pub source: String,
    pub lineage: Lineage,
    pub created_by: CreatedBy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub round: usize,
    pub critique: Critique,
    pub program_before: Lineage,
    pub program_after: Lineage,
}

/// Outcome of one execution attempt, without timing so records stay reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub program: Lineage,
    pub status: ExecStatus,
    pub frames: usize,
    pub traceback: String,
    /// False when static validation failed and nothing ran.
    pub executed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    /// K
    pub critic_rounds: usize,
    /// D
    pub debug_attempts: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self { critic_rounds: 2, debug_attempts: 3 }
    }
}

/// The VLM-facing roles for one sample.
pub struct Agent<'a> {
    pub chat: &'a dyn ChatBackend,
    pub templates: &'a Templates,
    pub env: EnvironmentSpec,
    pub tools: ToolSpec,
    pub model_id: String,
    pub temperature: f64,
    pub max_output: u32,
    pub sample_index: u32,
    pub ablation: AblationFlags,
    pub traceback_lines: usize,
}

impl Agent<'_> {
    fn ask(&self, bundle: PromptBundle) -> Result<String> {
        let req = ChatRequest {
            bundle,
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            max_output: self.max_output,
            sample_index: self.sample_index,
        };
        Ok(self.chat.complete(&req)?.text)
    }

    pub fn generation_prompt(&self, scene: &SceneInput) -> Result<PromptBundle> {
        Ok(assemble_generation_prompt(self.templates, scene, &self.env, &self.tools, &self.ablation)?)
    }

    pub fn generate(&self, scene: &SceneInput) -> Result<WorldProgram> {
        let text = self.ask(self.generation_prompt(scene)?)?;
        Ok(WorldProgram { source: extract_program(&text)?, lineage: Lineage::default(), created_by: CreatedBy::Generator })
    }

    /// Critiques ok frames; returns the verdict and the map shown to the critic.
    pub fn critique(&self, frames: &[RgbImage], caption: &str, motion_threshold: f64) -> Result<(Critique, RgbImage)> {
        let first = frames.first().ok_or_else(|| Error::Precondition("critique needs frames".into()))?;
        let map = spatiotemporal_map(frames, motion_threshold)?;
        let bundle = assemble_critic_prompt(self.templates, first, &map.image, caption, &self.ablation)?;
        Ok((extract_critique(&self.ask(bundle)?)?, map.image))
    }

    pub fn refine(&self, program: &WorldProgram, critique: &Critique) -> Result<WorldProgram> {
        if critique.accurate {
            return Err(Error::Precondition("refine called with an approving critique".into()));
        }
        let text = self.ask(assemble_refiner_prompt(self.templates, &program.source, &critique.suggestions)?)?;
        let mut lineage = program.lineage;
        lineage.refine += 1;
        Ok(WorldProgram { source: extract_program(&text)?, lineage, created_by: CreatedBy::Refiner })
    }

    pub fn auto_debug(&self, program: &WorldProgram, traceback: &str) -> Result<WorldProgram> {
        if traceback.trim().is_empty() {
            return Err(Error::Precondition("auto_debug needs a non-empty traceback".into()));
        }
        let bundle = assemble_debugger_prompt(
            self.templates,
            &program.source,
            traceback,
            &self.env,
            &self.tools,
            self.traceback_lines,
        )?;
        let text = self.ask(bundle)?;
        let mut lineage = program.lineage;
        lineage.debug += 1;
        Ok(WorldProgram { source: extract_program(&text)?, lineage, created_by: CreatedBy::Debugger })
    }
}

/// Everything needed to run a program once.
pub struct Executor<'a> {
    pub sandbox: &'a Sandbox,
    pub scene: &'a SceneInput,
    pub budget: ExecutionBudget,
    pub toolbox: Option<&'a Toolbox>,
}

impl Executor<'_> {
    /// Validates, then runs. A failed validation yields a contract-violation
    /// result without starting a process.
    pub fn run(&self, program: &WorldProgram) -> Result<(ExecutionResult, bool)> {
        let report = self.sandbox.validate_contract(&program.source);
        if !report.is_ok() {
            let r = ExecutionResult {
                status: ExecStatus::ContractViolation,
                frames: Vec::new(),
                traceback: report.as_traceback(),
                elapsed_s: 0.0,
                stderr: String::new(),
            };
            return Ok((r, false));
        }
        Ok((self.sandbox.execute(&program.source, self.scene, &self.budget, self.toolbox)?, true))
    }
}

/// Progress notifications, e.g. for persisting artifacts as they appear.
pub enum LoopEvent<'a> {
    Program(&'a WorldProgram),
    Execution(&'a WorldProgram, &'a ExecutionResult),
    Critique { round: usize, critique: &'a Critique, st_map: &'a RgbImage },
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub program: WorldProgram,
    pub result: ExecutionResult,
    pub history: Vec<WorldProgram>,
    pub records: Vec<RefinementRecord>,
    pub critiques: Vec<Critique>,
    pub executions: Vec<ExecutionRecord>,
    pub debug_steps: usize,
    /// Why the loop stopped early, if it did.
    pub aborted: Option<String>,
}

struct LoopState<'o> {
    history: Vec<WorldProgram>,
    executions: Vec<ExecutionRecord>,
    debug_steps: usize,
    aborted: Option<String>,
    observer: &'o mut dyn FnMut(LoopEvent<'_>),
}

impl LoopState<'_> {
    /// Executes, debugging up to `d` times until a run succeeds.
    fn chain(
        &mut self,
        agent: &Agent<'_>,
        exec: &Executor<'_>,
        mut program: WorldProgram,
        d: usize,
    ) -> Result<(WorldProgram, ExecutionResult)> {
        let mut attempts = 0;
        loop {
            let (result, executed) = exec.run(&program)?;
            self.executions.push(ExecutionRecord {
                program: program.lineage,
                status: result.status,
                frames: result.frames.len(),
                traceback: result.traceback.clone(),
                executed,
            });
            (self.observer)(LoopEvent::Execution(&program, &result));
            if result.status.is_ok() {
                return Ok((program, result));
            }
            if attempts >= d {
                self.aborted = Some(DEBUG_BUDGET_EXHAUSTED.into());
                return Ok((program, result));
            }
            attempts += 1;
            match agent.auto_debug(&program, &result.traceback) {
                Ok(fixed) => {
                    self.debug_steps += 1;
                    (self.observer)(LoopEvent::Program(&fixed));
                    self.history.push(fixed.clone());
                    program = fixed;
                }
                Err(e) => {
                    self.aborted = Some(format!("debugger failed: {e}"));
                    return Ok((program, result));
                }
            }
        }
    }
}

/// Execute, debug on failure, critique on success, refine on rejection;
/// at most `critic_rounds` critiques. Returns the last ok result if any,
/// otherwise the last failure. Errors only for host-side failures.
pub fn refine_loop(
    agent: &Agent<'_>,
    exec: &Executor<'_>,
    initial: WorldProgram,
    budgets: Budgets,
    motion_threshold: f64,
    observer: &mut dyn FnMut(LoopEvent<'_>),
) -> Result<LoopOutcome> {
    observer(LoopEvent::Program(&initial));
    let mut st = LoopState {
        history: vec![initial.clone()],
        executions: Vec::new(),
        debug_steps: 0,
        aborted: None,
        observer,
    };
    let (mut program, mut result) = st.chain(agent, exec, initial, budgets.debug_attempts)?;
    let mut last_ok = result.status.is_ok().then(|| (program.clone(), result.clone()));
    let mut records = Vec::new();
    let mut critiques = Vec::new();
    let rounds = if agent.ablation.no_critic { 0 } else { budgets.critic_rounds };

    for round in 1..=rounds {
        if !result.status.is_ok() {
            break;
        }
        let caption = if agent.ablation.no_caption { "" } else { exec.scene.caption.as_str() };
        let (critique, st_map) = match agent.critique(&result.frames, caption, motion_threshold) {
            Ok(c) => c,
            Err(e) => {
                st.aborted = Some(format!("critic failed: {e}"));
                break;
            }
        };
        (st.observer)(LoopEvent::Critique { round, critique: &critique, st_map: &st_map });
        critiques.push(critique.clone());
        if critique.accurate {
            break;
        }
        let refined = match agent.refine(&program, &critique) {
            Ok(p) => p,
            Err(e) => {
                st.aborted = Some(format!("refiner failed: {e}"));
                break;
            }
        };
        records.push(RefinementRecord {
            round,
            critique,
            program_before: program.lineage,
            program_after: refined.lineage,
        });
        (st.observer)(LoopEvent::Program(&refined));
        st.history.push(refined.clone());
        (program, result) = st.chain(agent, exec, refined, budgets.debug_attempts)?;
        if result.status.is_ok() {
            last_ok = Some((program.clone(), result.clone()));
        }
    }

    let (program, result) = match (result.status.is_ok(), last_ok) {
        (false, Some(ok)) => ok,
        _ => (program, result),
    };
    Ok(LoopOutcome {
        program,
        result,
        history: st.history,
        records,
        critiques,
        executions: st.executions,
        debug_steps: st.debug_steps,
        aborted: st.aborted,
    })
}
