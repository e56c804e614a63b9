//! Benchmarks: Game of Life rollouts scored by per-cell F1, and physical
//! scenes scored by motion overlap against ground-truth video.
//!
//! Anything that turns a scene into frames implements [`FramePipeline`]:
//! a fixed program, the full agent, ground-truth replay, or a static frame.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use worldprog_core::conway::{evolve, extract_grid, f1, render_board, BinaryGrid, Rules};
use worldprog_core::metrics::{best_of_n, resize_nearest, score_video, Combiner, MotionParams, ScoreReport};
use worldprog_core::prompt::SceneInput;
use worldprog_core::RgbImage;

use crate::config::{EvalConfig, PipelineConfig};
use crate::imageio::{frame_name, read_frames, read_png, write_png};
use crate::perception::Toolbox;
use crate::sandbox::{ExecutionBudget, Sandbox};
use crate::service::{status_name, GenerateRequest, Pipeline};
use crate::{Error, Result};

pub const CONWAY_PROGRAM: &str = include_str!("../programs/conway.py");
pub const FALLING_BALL_PROGRAM: &str = include_str!("../programs/falling_ball.py");

/// A scene as handed to a pipeline under benchmark.
#[derive(Debug, Clone)]
pub struct BenchScene {
    pub category: String,
    pub name: String,
    pub input: SceneInput,
    pub fixture_dir: Option<PathBuf>,
}

/// Frames per sample plus a status label.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub samples: Vec<Vec<RgbImage>>,
    pub status: String,
}

impl PipelineOutput {
    pub fn ok(frames: Vec<RgbImage>) -> Self {
        Self { samples: vec![frames], status: "ok".into() }
    }

    pub fn failed(status: impl Into<String>) -> Self {
        Self { samples: Vec::new(), status: status.into() }
    }
}

pub trait FramePipeline {
    fn name(&self) -> &str;
    /// Up to `n_samples` independent samples; deterministic pipelines may return one.
    fn run(&self, scene: &BenchScene, n_samples: usize) -> Result<PipelineOutput>;
}

/// Executes one fixed program in the sandbox.
pub struct ProgramPipeline {
    pub label: String,
    pub source: String,
    pub sandbox: Sandbox,
    pub config: PipelineConfig,
    pub use_api: bool,
}

impl ProgramPipeline {
    pub fn new(label: impl Into<String>, source: impl Into<String>, config: PipelineConfig) -> Self {
        Self { label: label.into(), source: source.into(), sandbox: Sandbox::from_config(&config.budgets), config, use_api: true }
    }
}

impl FramePipeline for ProgramPipeline {
    fn name(&self) -> &str {
        &self.label
    }

    fn run(&self, scene: &BenchScene, _n_samples: usize) -> Result<PipelineOutput> {
        let toolbox = if self.use_api {
            Some(Toolbox::from_config(&self.config.toolbox, scene.fixture_dir.as_deref(), self.config.budgets.rng_seed)?)
        } else {
            None
        };
        let budget = ExecutionBudget::for_scene(&scene.input, &self.config.budgets);
        let r = self.sandbox.execute(&self.source, &scene.input, &budget, toolbox.as_ref())?;
        if r.status.is_ok() {
            Ok(PipelineOutput::ok(r.frames))
        } else {
            tracing::warn!(scene = %scene.name, status = ?r.status, traceback = %r.traceback, "program failed");
            Ok(PipelineOutput::failed(status_name(r.status)))
        }
    }
}

/// The full generate/critique/refine agent. The pipeline's budgets supply
/// fps and frame size, so they are overridden per scene.
pub struct AgentPipeline {
    pub config: PipelineConfig,
    pub chat: std::sync::Arc<dyn crate::vlm::ChatBackend>,
    pub store: crate::store::RunStore,
}

impl FramePipeline for AgentPipeline {
    fn name(&self) -> &str {
        "agent"
    }

    fn run(&self, scene: &BenchScene, n_samples: usize) -> Result<PipelineOutput> {
        let mut cfg = self.config.clone();
        cfg.budgets.frame_size = scene.input.frame_size;
        cfg.budgets.fps = scene.input.fps;
        cfg.budgets.duration_s = scene.input.duration_s;
        let pipeline = Pipeline::new(cfg, self.chat.clone(), self.store.clone())?;
        let mut req = GenerateRequest::new(scene.input.image.clone(), scene.input.caption.clone());
        req.n_samples = Some(n_samples.max(1));
        req.fixture_dir = scene.fixture_dir.clone();
        let meta = pipeline.generate(&req)?;
        let dir = self.store.run_dir(&meta.id)?;
        let mut samples = Vec::new();
        for k in 0..n_samples.max(1) {
            let frames = dir.join(crate::store::SAMPLES).join(format!("s{k}")).join(crate::store::FRAMES);
            if frames.is_dir() {
                samples.push(read_frames(frames)?);
            }
        }
        let status = meta.exec_status.unwrap_or_else(|| meta.error.unwrap_or_else(|| "failed".into()));
        Ok(PipelineOutput { samples, status })
    }
}

/// Returns the ground-truth frames it was built with.
pub struct GtReplay {
    pub gt: std::collections::BTreeMap<String, Vec<RgbImage>>,
}

impl FramePipeline for GtReplay {
    fn name(&self) -> &str {
        "gt-replay"
    }

    fn run(&self, scene: &BenchScene, _n_samples: usize) -> Result<PipelineOutput> {
        let key = format!("{}/{}", scene.category, scene.name);
        let frames = self.gt.get(&key).ok_or_else(|| Error::NotFound(format!("ground truth for {key}")))?;
        Ok(PipelineOutput::ok(frames.clone()))
    }
}

/// Repeats the input image: the no-motion baseline.
pub struct StaticFrame;

impl FramePipeline for StaticFrame {
    fn name(&self) -> &str {
        "static"
    }

    fn run(&self, scene: &BenchScene, _n_samples: usize) -> Result<PipelineOutput> {
        let (w, h) = scene.input.frame_size;
        let f = resize_nearest(&scene.input.image, w, h);
        Ok(PipelineOutput::ok(vec![f; scene.input.frame_count()]))
    }
}

/// Reads a plaintext `.cells` board (`O` live, `.` dead, `!` comments).
pub fn parse_cells(text: &str) -> Result<BinaryGrid> {
    let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.starts_with('!')).collect();
    let lines: Vec<&str> = {
        let end = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
        lines[..end].to_vec()
    };
    let rows = lines.len();
    let cols = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Err(Error::Precondition("empty .cells board".into()));
    }
    let mut cells = vec![false; rows * cols];
    for (r, line) in lines.iter().enumerate() {
        for (c, ch) in line.chars().enumerate() {
            cells[r * cols + c] = match ch {
                'O' | 'o' | '*' => true,
                '.' => false,
                other => return Err(Error::Precondition(format!("unexpected {other:?} at row {r}, column {c}"))),
            };
        }
    }
    Ok(BinaryGrid::from_cells(rows, cols, cells)?)
}

pub fn format_cells(grid: &BinaryGrid, name: &str) -> String {
    let mut out = format!("!Name: {name}\n");
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            out.push(if grid.get(r, c) { 'O' } else { '.' });
        }
        out.push('\n');
    }
    out
}

/// Writes `n` random boards as `board{k:02}.cells`.
pub fn write_random_boards(dir: &Path, n: usize, rows: usize, cols: usize, density: f64, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (0..n)
        .map(|k| {
            let g = BinaryGrid::random(rows, cols, density, seed.wrapping_add(k as u64))?;
            let path = dir.join(format!("board{k:02}.cells"));
            std::fs::write(&path, format_cells(&g, &format!("board{k:02}")))?;
            Ok(path)
        })
        .collect()
}

pub const CONWAY_CELL_PX: usize = 16;

pub fn conway_caption(rows: usize, cols: usize) -> String {
    format!(
        "Conway's Game of Life on a {rows}x{cols} board with dead borders. White cells are alive, black cells are dead. \
         Show the board evolving one generation per frame."
    )
}

/// The scene for one board rolled forward `steps` generations, one per frame.
pub fn conway_scene(name: &str, board: &BinaryGrid, steps: usize) -> BenchScene {
    let image = render_board(board, CONWAY_CELL_PX, [255, 255, 255], [0, 0, 0]);
    let frame_size = image.dims();
    let input = SceneInput {
        image,
        caption: conway_caption(board.rows(), board.cols()),
        frame_size,
        fps: 1.0,
        duration_s: steps as f64,
        gt_video: None,
    };
    BenchScene { category: "conway".into(), name: name.into(), input, fixture_dir: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConwayBoardScore {
    pub board: String,
    pub status: String,
    pub f1_per_step: Vec<f64>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConwayReport {
    pub pipeline: String,
    pub steps: usize,
    /// Mean F1 over boards at each timestep.
    pub f1_curve: Vec<f64>,
    pub boards: Vec<ConwayBoardScore>,
    pub mean_f1: f64,
    pub perfect_boards: usize,
}

/// Frame `t` of the output is compared with the board after `t + 1`
/// generations. Missing frames and failed extractions count as all-dead.
pub fn run_conway_benchmark(boards: &[(String, BinaryGrid)], pipeline: &dyn FramePipeline, steps: usize, rules: &Rules) -> Result<ConwayReport> {
    if steps == 0 || boards.is_empty() {
        return Err(Error::Precondition("need at least one board and one step".into()));
    }
    let mut out = Vec::new();
    for (name, board) in boards {
        let scene = conway_scene(name, board, steps);
        let oracle = evolve(board, rules, steps);
        let result = pipeline.run(&scene, 1)?;
        let frames = result.samples.first().map(Vec::as_slice).unwrap_or_default();
        let f1s = (0..steps)
            .map(|t| {
                let predicted = frames
                    .get(t)
                    .and_then(|f| extract_grid(f, board.rows(), board.cols()).ok())
                    .map(|e| e.grid)
                    .unwrap_or(BinaryGrid::dead(board.rows(), board.cols())?);
                Ok(f1(&predicted, &oracle[t])?)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean = f1s.iter().sum::<f64>() / steps as f64;
        out.push(ConwayBoardScore { board: name.clone(), status: result.status, f1_per_step: f1s, mean_f1: mean });
    }
    let n = out.len() as f64;
    let f1_curve = (0..steps).map(|t| out.iter().map(|b| b.f1_per_step[t]).sum::<f64>() / n).collect();
    let mean_f1 = out.iter().map(|b| b.mean_f1).sum::<f64>() / n;
    let perfect_boards = out.iter().filter(|b| b.mean_f1 == 1.0).count();
    Ok(ConwayReport { pipeline: pipeline.name().into(), steps, f1_curve, boards: out, mean_f1, perfect_boards })
}

/// `.cells` files in `dir`, sorted by name.
pub fn load_boards(dir: &Path) -> Result<Vec<(String, BinaryGrid)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cells"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, parse_cells(&std::fs::read_to_string(p)?)?))
        })
        .collect()
}

pub fn conway_table(report: &ConwayReport) -> String {
    let mut s = format!("Game of Life ({}, {} steps)\n{:<16} {:>8} {:>10}\n", report.pipeline, report.steps, "board", "status", "mean F1");
    for b in &report.boards {
        let _ = writeln!(s, "{:<16} {:>8} {:>10.4}", b.board, b.status, b.mean_f1);
    }
    let _ = writeln!(s, "{:<16} {:>8} {:>10.4}  ({} of {} perfect)", "overall", "", report.mean_f1, report.perfect_boards, report.boards.len());
    let curve: Vec<String> = report.f1_curve.iter().map(|v| format!("{v:.3}")).collect();
    let _ = writeln!(s, "F1 per timestep: {}", curve.join(" "));
    s
}

/// One physical scene on disk: `input.png`, `caption.txt`, `gt/%05d.png`
/// and an optional perception fixture.
#[derive(Debug, Clone)]
pub struct PhysicsScene {
    pub scene: BenchScene,
    pub gt: Vec<RgbImage>,
}

/// Scenes under `<dataset>/<category>/<scene>/`, sorted by path.
pub fn load_physics_dataset(root: &Path, gt_fps: f64) -> Result<Vec<PhysicsScene>> {
    let mut out = Vec::new();
    let mut cats: Vec<PathBuf> = std::fs::read_dir(root)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    cats.sort();
    for cat in cats {
        let mut scenes: Vec<PathBuf> =
            std::fs::read_dir(&cat)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("input.png").is_file()).collect();
        scenes.sort();
        for dir in scenes {
            let gt_dir = dir.join("gt");
            if !gt_dir.is_dir() {
                return Err(Error::NotFound(format!("ground truth for {}", dir.display())));
            }
            let gt = read_frames(gt_dir)?;
            if gt.len() < 2 {
                return Err(Error::Precondition(format!("{} needs at least two ground-truth frames", dir.display())));
            }
            let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let input = SceneInput {
                image: read_png(dir.join("input.png"))?,
                caption: std::fs::read_to_string(dir.join("caption.txt"))?.trim().to_string(),
                frame_size: gt[0].dims(),
                fps: gt_fps,
                duration_s: gt.len() as f64 / gt_fps,
                gt_video: None,
            };
            let fixture_dir = dir.join(crate::perception::FIXTURE_LEGEND).is_file().then(|| dir.clone());
            out.push(PhysicsScene { scene: BenchScene { category: name(&cat), name: name(&dir), input, fixture_dir }, gt });
        }
    }
    if out.is_empty() {
        return Err(Error::NotFound(format!("no scenes under {}", root.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsSceneScore {
    pub category: String,
    pub scene: String,
    pub status: String,
    pub report: ScoreReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsReport {
    pub pipeline: String,
    pub combiner: String,
    pub scenes: Vec<PhysicsSceneScore>,
    /// Mean combined score per category.
    pub categories: Vec<(String, f64)>,
    pub overall: f64,
}

fn zero_report(category: &str, combiner: Combiner) -> ScoreReport {
    ScoreReport {
        spatial_iou: 0.0,
        weighted_spatial_iou: 0.0,
        spatiotemporal_iou: 0.0,
        combined: 0.0,
        n_samples: 0,
        category: category.into(),
        sample_index: 0,
        combiner: combiner.label().into(),
        resampled: false,
    }
}

/// Loads `dataset` and scores it with [`score_physics`].
pub fn run_physics_benchmark(dataset: &Path, pipeline: &dyn FramePipeline, n_samples: usize, eval: &EvalConfig) -> Result<PhysicsReport> {
    let scenes = load_physics_dataset(dataset, eval.gt_fps)?;
    score_physics(pipeline, &scenes, n_samples, eval.gt_fps, eval.motion(), eval.combiner())
}

/// Best-of-N score per scene, mean per category; scenes without frames score zero.
pub fn score_physics(
    pipeline: &dyn FramePipeline,
    scenes: &[PhysicsScene],
    n_samples: usize,
    gt_fps: f64,
    motion: MotionParams,
    combiner: Combiner,
) -> Result<PhysicsReport> {
    let mut rows = Vec::new();
    for s in scenes {
        let out = pipeline.run(&s.scene, n_samples)?;
        let mut reports = Vec::new();
        for (k, frames) in out.samples.iter().enumerate().filter(|(_, f)| !f.is_empty()) {
            let mut r = score_video(frames, s.scene.input.fps, &s.gt, gt_fps, motion, combiner)?;
            r.sample_index = k;
            r.category = s.scene.category.clone();
            reports.push(r);
        }
        let report = if reports.is_empty() { zero_report(&s.scene.category, combiner) } else { best_of_n(&reports)? };
        rows.push(PhysicsSceneScore { category: s.scene.category.clone(), scene: s.scene.name.clone(), status: out.status, report });
    }
    let mut categories: Vec<(String, f64)> = Vec::new();
    for cat in rows.iter().map(|r| r.category.clone()).collect::<std::collections::BTreeSet<_>>() {
        let v: Vec<f64> = rows.iter().filter(|r| r.category == cat).map(|r| r.report.combined).collect();
        categories.push((cat, v.iter().sum::<f64>() / v.len() as f64));
    }
    let overall = rows.iter().map(|r| r.report.combined).sum::<f64>() / rows.len().max(1) as f64;
    Ok(PhysicsReport { pipeline: pipeline.name().into(), combiner: combiner.label().into(), scenes: rows, categories, overall })
}

pub fn physics_table(report: &PhysicsReport) -> String {
    let mut s = format!(
        "Physics ({}, combiner: {})\n{:<14} {:<18} {:>14} {:>8} {:>8} {:>8} {:>8}\n",
        report.pipeline, report.combiner, "category", "scene", "status", "S-IoU", "WS-IoU", "ST-IoU", "score"
    );
    for r in &report.scenes {
        let _ = writeln!(
            s,
            "{:<14} {:<18} {:>14} {:>8.4} {:>8.4} {:>8.4} {:>8.2}",
            r.category, r.scene, r.status, r.report.spatial_iou, r.report.weighted_spatial_iou, r.report.spatiotemporal_iou, r.report.combined
        );
    }
    for (cat, v) in &report.categories {
        let _ = writeln!(s, "{:<14} {:<18} {:>14} {:>8} {:>8} {:>8} {:>8.2}", cat, "(mean)", "", "", "", "", v);
    }
    let _ = writeln!(s, "{:<14} {:<18} {:>14} {:>8} {:>8} {:>8} {:>8.2}", "overall", "", "", "", "", "", report.overall);
    s
}

fn draw_disk(img: &mut RgbImage, cx: f64, cy: f64, r: f64, color: [u8; 3]) {
    let (w, h) = img.dims();
    for y in 0..h {
        for x in 0..w {
            if (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy) <= r {
                img.put(x, y, color);
            }
        }
    }
}

/// Writes a small synthetic dataset of balls dropped from random heights,
/// with analytic ground truth, one category per entry of `categories`.
pub fn write_toy_dataset(root: &Path, categories: &[&str], per_category: usize, frames: usize, seed: u64) -> Result<()> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let (w, h) = (64usize, 48usize);
    for cat in categories {
        for k in 0..per_category {
            let dir = root.join(cat).join(format!("scene{k:02}"));
            std::fs::create_dir_all(dir.join("gt"))?;
            let r = rng.gen_range(3.0..6.0);
            let cx = rng.gen_range(10.0..(w as f64 - 10.0));
            let y0 = rng.gen_range(r..20.0);
            let g = rng.gen_range(200.0..600.0);
            let bg = [30, 30, 60];
            let render = |cy: f64| {
                let mut img = RgbImage::filled(w, h, bg);
                draw_disk(&mut img, cx, cy, r, [220, 40, 40]);
                img
            };
            write_png(dir.join("input.png"), &render(y0))?;
            std::fs::write(dir.join("caption.txt"), "A red ball falls to the floor.\n")?;
            for t in 0..frames {
                let time = (t + 1) as f64 / 30.0;
                let cy = (y0 + 0.5 * g * time * time).min(h as f64 - r);
                write_png(dir.join("gt").join(frame_name(t)), &render(cy))?;
            }
        }
    }
    Ok(())
}
