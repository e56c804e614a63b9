//! Prompt assembly for the generator, critic, refiner and debugger roles, and
//! parsing of their responses.
//!
//! Template text lives in `prompts/*.txt` and is loaded at runtime so prompt
//! wording can change without a rebuild. The task template carries a literal
//! `[CAPTION]` placeholder.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, RgbImage};

pub const CAPTION_PLACEHOLDER: &str = "[CAPTION]";
pub const TEMPLATE_NAMES: [&str; 6] = ["task", "environment", "tools", "critic", "refiner", "debugger"];
/// Methods every world program must implement.
pub const CONTRACT_METHODS: [&str; 4] = ["__init__", "fit", "update_simulation", "render_frame"];
pub const DEFAULT_TRACEBACK_LINES: usize = 80;

/// The single external input: one image, one caption and output timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInput {
    pub image: RgbImage,
    pub caption: String,
    /// `(width, height)` of rendered frames.
    pub frame_size: (usize, usize),
    pub fps: f64,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_video: Option<Vec<RgbImage>>,
}

impl SceneInput {
    pub fn new(image: RgbImage, caption: impl Into<String>) -> Self {
        Self {
            image,
            caption: caption.into(),
            frame_size: (1024, 576),
            fps: 30.0,
            duration_s: 5.0,
            gt_video: None,
        }
    }

    pub fn validate(&self, ablation: &AblationFlags) -> Result<()> {
        let (w, h) = self.frame_size;
        if w == 0 || h == 0 {
            return Err(Error::InvalidInput(format!("frame size {w}x{h}")));
        }
        if self.image.width == 0 || self.image.height == 0 {
            return Err(Error::InvalidInput("input image is empty".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidInput(format!("fps must be positive, got {}", self.fps)));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidInput(format!("duration must be positive, got {}", self.duration_s)));
        }
        if self.caption.trim().is_empty() && !ablation.no_caption {
            return Err(Error::InvalidInput("caption is empty and the no-caption ablation is off".into()));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.fps * self.duration_s).round() as usize
    }
}

/// The four ablations: drop the tool API, skip the critic, withhold the image,
/// withhold the caption.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub no_api: bool,
    pub no_critic: bool,
    pub no_image: bool,
    pub no_caption: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Generate,
    Critic,
    Refine,
    Debug,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Content {
    Text { text: String },
    Image { image: RgbImage },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub role: Role,
    pub content: Content,
}

impl Part {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self { role, content: Content::Text { text: text.into() } }
    }

    pub fn image(image: RgbImage) -> Self {
        Self { role: Role::User, content: Content::Image { image } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub purpose: Purpose,
    pub parts: Vec<Part>,
}

impl PromptBundle {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(|p| match &p.content {
            Content::Text { text } => Some(text.as_str()),
            Content::Image { .. } => None,
        })
    }

    pub fn images(&self) -> impl Iterator<Item = &RgbImage> {
        self.parts.iter().filter_map(|p| match &p.content {
            Content::Image { image } => Some(image),
            Content::Text { .. } => None,
        })
    }

    /// All text parts joined by blank lines, for logs and run records.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.parts.iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            match &p.content {
                Content::Text { text } => out.push_str(text),
                Content::Image { image } => {
                    out.push_str(&format!("[image {}x{}]", image.width, image.height))
                }
            }
        }
        out
    }
}

/// Prompt templates keyed by name (`task`, `environment`, ...).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Templates {
    pub version: String,
    texts: BTreeMap<String, String>,
}

impl Templates {
    /// Loads whichever of the known templates exist in `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::MissingTemplate(format!("template directory {} not found", dir.display())));
        }
        let mut texts = BTreeMap::new();
        for name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if path.is_file() {
                texts.insert(name.to_string(), std::fs::read_to_string(&path)?);
            }
        }
        let version = std::fs::read_to_string(dir.join("VERSION"))
            .map(|v| v.trim().to_string())
            .unwrap_or_else(|_| "unversioned".into());
        Ok(Self { version, texts })
    }

    /// The templates shipped with this crate.
    pub fn bundled_dir() -> PathBuf {
        PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/prompts"))
    }

    pub fn bundled() -> Result<Self> {
        Self::load(Self::bundled_dir())
    }

    pub fn from_map(version: &str, texts: BTreeMap<String, String>) -> Self {
        Self { version: version.into(), texts }
    }

    pub fn get(&self, name: &str) -> Result<&str> {
        self.texts
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::MissingTemplate(format!("{name}.txt")))
    }
}

/// Structural template for generated code plus the importable libraries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub base_contract_source: String,
    pub allowed_libraries: Vec<String>,
}

impl EnvironmentSpec {
    pub fn from_templates(templates: &Templates, allowed_libraries: Vec<String>) -> Result<Self> {
        Ok(Self { base_contract_source: templates.get("environment")?.to_string(), allowed_libraries })
    }

    pub fn render(&self) -> String {
        format!(
            "{}\n# Available libraries: {}\n",
            self.base_contract_source.trim_end(),
            self.allowed_libraries.join(", ")
        )
    }

    /// Method names declared by the contract, in order.
    pub fn contract_methods(&self) -> Vec<String> {
        def_names(&self.base_contract_source)
    }
}

/// Documentation for the toolbox API offered to generated programs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub api_doc_source: String,
}

impl ToolSpec {
    pub fn from_templates(templates: &Templates) -> Result<Self> {
        Ok(Self { api_doc_source: templates.get("tools")?.to_string() })
    }

    /// Documented toolbox operation names, in order.
    pub fn operations(&self) -> Vec<String> {
        def_names(&self.api_doc_source).into_iter().filter(|n| n != "__init__").collect()
    }
}

fn def_names(source: &str) -> Vec<String> {
    source
        .lines()
        .filter_map(|l| {
            let rest = l.trim_start().strip_prefix("def ")?;
            let name: String = rest.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
            (!name.is_empty()).then_some(name)
        })
        .collect()
}

fn scene_settings(scene: &SceneInput) -> String {
    format!(
        "# SCENE SETTINGS\n# frame_size=({}, {}), fps={}, duration_s={} ({} frames)\n",
        scene.frame_size.0,
        scene.frame_size.1,
        scene.fps,
        scene.duration_s,
        scene.frame_count()
    )
}

pub fn assemble_generation_prompt(
    templates: &Templates,
    scene: &SceneInput,
    env: &EnvironmentSpec,
    tools: &ToolSpec,
    ablation: &AblationFlags,
) -> Result<PromptBundle> {
    scene.validate(ablation)?;
    let caption = if ablation.no_caption { "" } else { scene.caption.as_str() };
    let task = templates.get("task")?.replace(CAPTION_PLACEHOLDER, caption);
    let mut parts = vec![
        Part::text(Role::System, task),
        Part::text(Role::User, format!("{}\n{}", env.render(), scene_settings(scene))),
    ];
    if !ablation.no_api {
        parts.push(Part::text(Role::User, tools.api_doc_source.clone()));
    }
    if !ablation.no_image {
        parts.push(Part::image(scene.image.clone()));
    }
    Ok(PromptBundle { purpose: Purpose::Generate, parts })
}

pub fn assemble_critic_prompt(
    templates: &Templates,
    first_frame: &RgbImage,
    st_map: &RgbImage,
    caption: &str,
    ablation: &AblationFlags,
) -> Result<PromptBundle> {
    if first_frame.dims() != st_map.dims() {
        return Err(Error::SizeMismatch(format!(
            "first frame {}x{} vs spatiotemporal map {}x{}",
            first_frame.width, first_frame.height, st_map.width, st_map.height
        )));
    }
    let mut text = templates.get("critic")?.trim_end().to_string();
    if !ablation.no_caption {
        text.push_str(&format!("\n\nCaption: \"{caption}\""));
    }
    text.push_str("\n\nImage 1: first simulated frame. Image 2: spatiotemporal colormap.");
    Ok(PromptBundle {
        purpose: Purpose::Critic,
        parts: vec![
            Part::text(Role::System, text),
            Part::image(first_frame.clone()),
            Part::image(st_map.clone()),
        ],
    })
}

/// Fences `source` with a backtick run longer than any inside it.
pub fn fence(source: &str, lang: &str) -> String {
    let longest = longest_backtick_run(source);
    let ticks = "`".repeat(longest.max(2) + 1);
    format!("{ticks}{lang}\n{source}\n{ticks}")
}

fn longest_backtick_run(s: &str) -> usize {
    let mut best = 0;
    let mut cur = 0;
    for c in s.chars() {
        if c == '`' {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best
}

/// Neutralises fence markers inside free text so it cannot open or close a code block.
fn defuse_fences(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut run = 0;
    for c in text.chars() {
        if c == '`' {
            run += 1;
            continue;
        }
        push_ticks(&mut out, run);
        run = 0;
        out.push(c);
    }
    push_ticks(&mut out, run);
    out
}

fn push_ticks(out: &mut String, run: usize) {
    if run >= 3 {
        out.push_str(&"'".repeat(run));
    } else {
        out.push_str(&"`".repeat(run));
    }
}

pub fn assemble_refiner_prompt(templates: &Templates, program_source: &str, suggestions: &[String]) -> Result<PromptBundle> {
    if suggestions.is_empty() {
        return Err(Error::InvalidInput("refinement needs at least one suggestion".into()));
    }
    let mut list = String::from("Suggested improvements:\n");
    for (i, s) in suggestions.iter().enumerate() {
        list.push_str(&format!("{}. {}\n", i + 1, defuse_fences(s.trim())));
    }
    Ok(PromptBundle {
        purpose: Purpose::Refine,
        parts: vec![
            Part::text(Role::System, templates.get("refiner")?.to_string()),
            Part::text(Role::User, format!("Original program:\n{}", fence(program_source, "python"))),
            Part::text(Role::User, list),
        ],
    })
}

/// Keeps the last `max_lines` lines, noting how many were dropped.
pub fn truncate_traceback(traceback: &str, max_lines: usize) -> String {
    let lines: Vec<&str> = traceback.trim_end().lines().collect();
    if lines.len() <= max_lines {
        return lines.join("\n");
    }
    let omitted = lines.len() - max_lines;
    format!("[... {omitted} earlier lines omitted ...]\n{}", lines[omitted..].join("\n"))
}

pub fn assemble_debugger_prompt(
    templates: &Templates,
    program_source: &str,
    traceback: &str,
    env: &EnvironmentSpec,
    tools: &ToolSpec,
    max_traceback_lines: usize,
) -> Result<PromptBundle> {
    if traceback.trim().is_empty() {
        return Err(Error::InvalidInput("debugging needs a non-empty traceback".into()));
    }
    let tb = truncate_traceback(traceback, max_traceback_lines);
    Ok(PromptBundle {
        purpose: Purpose::Debug,
        parts: vec![
            Part::text(Role::System, templates.get("debugger")?.to_string()),
            Part::text(Role::User, format!("Flawed program:\n{}", fence(program_source, "python"))),
            Part::text(Role::User, format!("Traceback:\n{}", fence(&tb, ""))),
            Part::text(Role::User, env.render()),
            Part::text(Role::User, tools.api_doc_source.clone()),
        ],
    })
}

/// A fenced block found in a response, with its info string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock<'a> {
    pub lang: &'a str,
    pub body: &'a str,
}

/// Fenced code blocks in order of appearance. An unterminated block runs to the end.
pub fn code_blocks(text: &str) -> Vec<CodeBlock<'_>> {
    let mut blocks = Vec::new();
    let mut offset = 0;
    let mut open: Option<(usize, usize, &str)> = None; // (fence len, body start, lang)
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let trimmed = line.trim_start().trim_end_matches(['\n', '\r']);
        let ticks = trimmed.chars().take_while(|c| *c == '`').count();
        match open {
            None if ticks >= 3 => open = Some((ticks, offset, trimmed[ticks..].trim())),
            Some((len, body_start, lang)) if ticks >= len && trimmed[ticks..].trim().is_empty() => {
                let body_end = start.saturating_sub(1).max(body_start);
                let body = text[body_start..body_end].trim_end_matches('\r');
                blocks.push(CodeBlock { lang, body });
                open = None;
            }
            _ => {}
        }
    }
    if let Some((_, body_start, lang)) = open {
        blocks.push(CodeBlock { lang, body: text[body_start.min(text.len())..].trim_end() });
    }
    blocks
}

/// Name of the first class deriving from `Simulator` in `source`, if any.
pub fn simulator_class(source: &str) -> Option<String> {
    source.lines().find_map(|l| {
        let rest = l.strip_prefix("class ")?;
        let (name, rest) = rest.split_once('(')?;
        let bases = rest.split_once(')')?.0;
        bases
            .split(',')
            .any(|b| b.trim().rsplit('.').next() == Some("Simulator"))
            .then(|| name.trim().to_string())
    })
}

/// The largest fenced block that defines a `Simulator` subclass.
pub fn extract_program(response_text: &str) -> Result<String> {
    if response_text.trim().is_empty() {
        return Err(Error::NoProgram("empty response".into()));
    }
    let blocks = code_blocks(response_text);
    if blocks.is_empty() {
        return Err(Error::NoProgram("response has no fenced code block".into()));
    }
    blocks
        .iter()
        .filter(|b| simulator_class(b.body).is_some())
        .max_by_key(|b| b.body.len())
        .map(|b| b.body.to_string())
        .ok_or_else(|| Error::NoProgram("no code block defines a Simulator subclass".into()))
}

/// The critic's verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub accurate: bool,
    #[serde(default)]
    pub suggestions: Vec<String>,
}

/// Parses the first well-formed JSON object in the response.
pub fn extract_critique(response_text: &str) -> Result<Critique> {
    if response_text.trim().is_empty() {
        return Err(Error::MalformedCritique("empty response".into()));
    }
    let obj = response_text
        .char_indices()
        .filter(|(_, c)| *c == '{')
        .find_map(|(i, _)| {
            let mut it = serde_json::Deserializer::from_str(&response_text[i..]).into_iter::<serde_json::Value>();
            match it.next() {
                Some(Ok(v @ serde_json::Value::Object(_))) => Some(v),
                _ => None,
            }
        })
        .ok_or_else(|| Error::MalformedCritique("no JSON object in response".into()))?;

    let accurate = obj
        .get("accurate")
        .and_then(serde_json::Value::as_bool)
        .ok_or_else(|| Error::MalformedCritique("missing boolean field \"accurate\"".into()))?;
    let suggestions = match obj.get("suggestions") {
        None | Some(serde_json::Value::Null) => Vec::new(),
        Some(serde_json::Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                serde_json::Value::String(s) => s.trim().to_string(),
                other => other.to_string(),
            })
            .filter(|s| !s.is_empty())
            .collect(),
        Some(other) => {
            return Err(Error::MalformedCritique(format!("\"suggestions\" must be a list, got {other}")))
        }
    };
    Ok(Critique { accurate, suggestions })
}
