//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use worldprog::bench::{
    conway_caption, run_conway_benchmark, run_physics_benchmark, write_random_boards, load_boards, load_physics_dataset,
    write_toy_dataset, GtReplay, ProgramPipeline, CONWAY_CELL_PX, CONWAY_PROGRAM,
};
use worldprog::config::{EvalConfig, PipelineConfig};
use worldprog::core::conway::{evolve, extract_grid, render_board, BinaryGrid, Rules};
use worldprog::core::metrics::{
    motion_masks, spatial_iou, spatiotemporal_iou, weighted_spatial_iou, MotionMaskSet, MotionParams,
};
use worldprog::core::prompt::Purpose;
use worldprog::core::stmap::{hue_of, spatiotemporal_map, DEFAULT_MOTION_THRESHOLD};
use worldprog::core::toolbox::{fit_3d_shape, predict_ground_plane, RansacParams, ShapeParams};
use worldprog::core::{Field, Mask, RgbImage};
use worldprog::service::{GenerateRequest, Intervention, Pipeline};
use worldprog::store::{RunStatus, RunStore};
use worldprog::vlm::store::TranscriptStore;
use worldprog::vlm::{network_calls, ChatBackend, RecordingBackend, ReplayBackend, ScriptedBackend};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn tmp() -> Result<tempfile::TempDir, String> {
    tempfile::tempdir().map_err(e2s)
}

// ---------------------------------------------------------------- Conway

fn conway_benchmark() -> Check {
    let dir = tmp()?;
    write_random_boards(dir.path(), 10, 12, 12, 0.35, 2024).map_err(e2s)?;
    let boards = load_boards(dir.path()).map_err(e2s)?;
    ensure(boards.len() == 10, || format!("{} boards", boards.len()))?;
    let pipeline = ProgramPipeline::new("reference", CONWAY_PROGRAM, PipelineConfig::default());
    let report = run_conway_benchmark(&boards, &pipeline, 10, &Rules::conway()).map_err(e2s)?;
    ensure(report.f1_curve == vec![1.0; 10], || format!("f1 curve {:?}", report.f1_curve))?;
    Ok(format!("10 boards x 10 steps, f1 curve all 1.0, {} perfect boards", report.perfect_boards))
}

// ---------------------------------------------------------------- metrics

struct Instance {
    mask: Vec<Vec<Vec<bool>>>,
    mag: Vec<Vec<Vec<f64>>>,
}

fn random_instance(rng: &mut StdRng) -> Instance {
    let (t, h, w) = (4, 8, 8);
    let density: f64 = rng.gen_range(0.0..1.0);
    let mask = (0..t).map(|_| (0..h).map(|_| (0..w).map(|_| rng.gen_bool(density)).collect()).collect()).collect();
    let mag = (0..t).map(|_| (0..h).map(|_| (0..w).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()).collect();
    Instance { mask, mag }
}

fn to_set(inst: &Instance) -> Result<MotionMaskSet, String> {
    let (h, w) = (inst.mask[0].len(), inst.mask[0][0].len());
    let masks = inst.mask.iter().map(|m| Mask::from_fn(w, h, |x, y| m[y][x])).collect();
    let fields: Vec<Field> =
        inst.mag.iter().map(|f| Field { width: w, height: h, values: f.iter().flatten().copied().collect() }).collect();
    MotionMaskSet::from_parts(masks, &fields).map_err(e2s)
}

fn naive_spatial(p: &Instance, g: &Instance) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..8 {
        for x in 0..8 {
            let a = p.mask.iter().any(|m| m[y][x]);
            let b = g.mask.iter().any(|m| m[y][x]);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn naive_weighted(p: &Instance, g: &Instance) -> f64 {
    let acc = |i: &Instance, x: usize, y: usize| {
        let mut s = 0.0;
        for t in 0..i.mask.len() {
            if i.mask[t][y][x] {
                s += i.mag[t][y][x].abs();
            }
        }
        s
    };
    let (mut num, mut den) = (0.0, 0.0);
    for y in 0..8 {
        for x in 0..8 {
            let (a, b) = (acc(p, x, y), acc(g, x, y));
            num += a.min(b);
            den += a.max(b);
        }
    }
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

fn naive_spatiotemporal(p: &Instance, g: &Instance) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for t in 0..p.mask.len() {
        let (mut inter, mut union) = (0usize, 0usize);
        for y in 0..8 {
            for x in 0..8 {
                inter += (p.mask[t][y][x] && g.mask[t][y][x]) as usize;
                union += (p.mask[t][y][x] || g.mask[t][y][x]) as usize;
            }
        }
        if union > 0 {
            sum += inter as f64 / union as f64;
            n += 1;
        }
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

fn metric_oracle() -> Check {
    let mut rng = StdRng::seed_from_u64(0x10u64);
    for i in 0..1000 {
        let (p, g) = (random_instance(&mut rng), random_instance(&mut rng));
        let (ps, gs) = (to_set(&p)?, to_set(&g)?);
        let pairs = [
            ("spatial_iou", spatial_iou(&ps, &gs).map_err(e2s)?, naive_spatial(&p, &g)),
            ("weighted_spatial_iou", weighted_spatial_iou(&ps, &gs).map_err(e2s)?, naive_weighted(&p, &g)),
            ("spatiotemporal_iou", spatiotemporal_iou(&ps, &gs).map_err(e2s)?, naive_spatiotemporal(&p, &g)),
        ];
        for (name, got, want) in pairs {
            ensure(got.to_bits() == want.to_bits(), || format!("instance {i}: {name} {got} vs naive {want}"))?;
        }
    }
    Ok("1000 random 8x8x4 instances bit-equal to naive loops".into())
}

// ---------------------------------------------------------------- self-score

fn self_score() -> Check {
    let dir = tmp()?;
    write_toy_dataset(dir.path(), &["fall"], 3, 12, 11).map_err(e2s)?;
    let eval = EvalConfig::default();
    let scenes = load_physics_dataset(dir.path(), eval.gt_fps).map_err(e2s)?;
    ensure(scenes.len() == 3, || format!("{} scenes", scenes.len()))?;
    let gt = scenes.iter().map(|s| (format!("{}/{}", s.scene.category, s.scene.name), s.gt.clone())).collect();
    let report = run_physics_benchmark(dir.path(), &GtReplay { gt }, 1, &eval).map_err(e2s)?;
    for s in &report.scenes {
        ensure((s.report.combined - 100.0).abs() <= 1e-9, || format!("{}: {}", s.scene, s.report.combined))?;
    }
    ensure((report.overall - 100.0).abs() <= 1e-9, || format!("overall {}", report.overall))?;
    Ok(format!("GT replay scores {:.12} on 3 scenes", report.overall))
}

// ---------------------------------------------------------------- RANSAC

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn normalize(a: V3) -> V3 {
    scale(a, 1.0 / dot(a, a).sqrt())
}

fn random_unit(rng: &mut StdRng) -> V3 {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = dot(v, v).sqrt();
        if n > 0.1 && n <= 1.0 {
            return scale(v, 1.0 / n);
        }
    }
}

/// 700 noisy inliers on a random plane plus 300 uniform outliers.
fn plane_cloud(seed: u64) -> (Vec<V3>, V3) {
    let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(7919).wrapping_add(17));
    let n = random_unit(&mut rng);
    let u = normalize(cross(n, if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] }));
    let w = cross(n, u);
    let mut pts = Vec::with_capacity(1000);
    for _ in 0..700 {
        let p = add(add(scale(u, rng.gen_range(-1.0..1.0)), scale(w, rng.gen_range(-1.0..1.0))), scale(n, rng.gen_range(-0.003..0.003)));
        pts.push(p);
    }
    for _ in 0..300 {
        pts.push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
    }
    (pts, n)
}

fn hemisphere(seed: u64, radius: f64) -> Vec<V3> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..800)
        .map(|_| {
            let z: f64 = rng.gen_range(0.0..1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            let r = radius + rng.gen_range(-0.002..=0.002);
            [-0.4 + r * s * phi.cos(), 0.3 + r * s * phi.sin(), 2.5 - r * z]
        })
        .collect()
}

/// Front, top and left faces of an axis-aligned box turned by `yaw` about y.
fn box_faces(half: V3, center: V3, yaw: f64, step: f64) -> Vec<V3> {
    let grid = |lo: f64, hi: f64| {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(move |i| lo + (hi - lo) * i as f64 / n as f64)
    };
    let mut local = Vec::new();
    for a in grid(-half[0], half[0]) {
        for b in grid(-half[1], half[1]) {
            local.push([a, b, -half[2]]);
        }
    }
    for a in grid(-half[0], half[0]) {
        for b in grid(-half[2], half[2]) {
            local.push([a, half[1], b]);
        }
    }
    for a in grid(-half[1], half[1]) {
        for b in grid(-half[2], half[2]) {
            local.push([-half[0], a, b]);
        }
    }
    let (s, c) = yaw.sin_cos();
    local.into_iter().map(|p| add([c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]], center)).collect()
}

fn ransac() -> Check {
    let mut within = 0;
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (pts, truth) = plane_cloud(seed);
        let fit = predict_ground_plane(&pts, &RansacParams::new(500, 0.01, seed)).map_err(e2s)?;
        let angle = dot(normalize(fit.normal), truth).abs().min(1.0).acos().to_degrees();
        worst = worst.max(angle);
        within += (angle <= 2.0) as usize;
    }
    ensure(within >= 99, || format!("plane: {within}/100 seeds within 2 degrees"))?;

    let mut sphere_err = 0.0f64;
    for seed in 0..10 {
        let fit = fit_3d_shape(&hemisphere(seed, 0.5), "sphere", &RansacParams::new(500, 0.01, seed)).map_err(e2s)?;
        let ShapeParams::Sphere { radius, .. } = fit.parameters else {
            return Err(format!("sphere fit returned {:?}", fit.parameters));
        };
        let rel = (radius - 0.5).abs() / 0.5;
        sphere_err = sphere_err.max(rel);
        ensure(rel <= 0.02, || format!("hemisphere seed {seed}: radius {radius}"))?;
    }

    let half = [0.3, 0.2, 0.15];
    let mut cuboid_err = 0.0f64;
    for (yaw, seed) in [(0.0f64, 1u64), (25.0, 2), (58.0, 3)] {
        let pts = box_faces(half, [0.1, -0.2, 2.0], yaw.to_radians(), 0.01);
        let fit = fit_3d_shape(&pts, "cuboid", &RansacParams::new(300, 0.005, seed)).map_err(e2s)?;
        let ShapeParams::Cuboid { half_extents, .. } = fit.parameters else {
            return Err(format!("cuboid fit returned {:?}", fit.parameters));
        };
        let (mut got, mut want) = (half_extents, half);
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for k in 0..3 {
            let rel = (got[k] - want[k]).abs() / want[k];
            cuboid_err = cuboid_err.max(rel);
            ensure(rel <= 0.03, || format!("cuboid yaw {yaw}: {got:?} vs {want:?}"))?;
        }
    }
    Ok(format!(
        "plane {within}/100 within 2 deg (worst {worst:.3}), sphere radius err {:.3}%, cuboid err {:.3}%",
        100.0 * sphere_err,
        100.0 * cuboid_err
    ))
}

// ---------------------------------------------------------------- replay

fn replay_pipeline(dir: &Path, transcripts: &TranscriptStore) -> Result<Pipeline, String> {
    let cfg = config(dir);
    let store = RunStore::open(&cfg.serve.store).map_err(e2s)?;
    Pipeline::new(cfg, Arc::new(ReplayBackend::new(transcripts.clone())), store).map_err(e2s)
}

fn replay_determinism() -> Check {
    let root = tmp()?;
    let transcripts = TranscriptStore::open(root.path().join("transcripts")).map_err(e2s)?;

    let scripted = Arc::new(ScriptedBackend::new());
    script_debug_then_refine(&scripted);
    let recorder: Arc<dyn ChatBackend> = Arc::new(RecordingBackend::new(scripted, transcripts.clone()));
    let author_dir = root.path().join("author");
    let cfg = config(&author_dir);
    let author = Pipeline::new(cfg.clone(), recorder, RunStore::open(&cfg.serve.store).map_err(e2s)?).map_err(e2s)?;
    let authored = author.generate(&GenerateRequest::new(input_image(), CAPTION)).map_err(e2s)?;
    ensure(authored.status == RunStatus::Complete, || format!("authoring run {:?}", authored.error))?;

    let mut purposes = Vec::new();
    let mut saw_traceback = false;
    let (mut rejects, mut accepts) = (0, 0);
    for d in transcripts.digests().map_err(e2s)? {
        let t = transcripts.get(&d).map_err(e2s)?.ok_or("digest listed but missing")?;
        purposes.push(t.purpose);
        if t.purpose == Purpose::Debug {
            saw_traceback = serde_json::to_string(&t.parts).map_err(e2s)?.contains("ZeroDivisionError");
        }
        if t.purpose == Purpose::Critic {
            if t.response.text.contains("\"accurate\": false") {
                rejects += 1;
            } else {
                accepts += 1;
            }
        }
    }
    let count = |p: Purpose| purposes.iter().filter(|q| **q == p).count();
    ensure(
        count(Purpose::Generate) == 1 && count(Purpose::Debug) == 1 && count(Purpose::Refine) == 1 && count(Purpose::Critic) == 2,
        || format!("transcripts {purposes:?}"),
    )?;
    ensure(saw_traceback, || "debug transcript carries no traceback".into())?;
    ensure(rejects == 1 && accepts == 1, || format!("critic rejects {rejects}, accepts {accepts}"))?;

    let calls_before = network_calls();
    let mut snapshots = Vec::new();
    for k in 0..2 {
        let dir = root.path().join(format!("replay{k}"));
        let p = replay_pipeline(&dir, &transcripts)?;
        let meta = p.generate(&GenerateRequest::new(input_image(), CAPTION)).map_err(e2s)?;
        ensure(meta.status == RunStatus::Complete, || format!("replay {k}: {:?}", meta.error))?;
        let trace = p.trace(&meta.id).map_err(e2s)?;
        ensure(trace.debug_steps == 1 && trace.refinements.len() == 1, || {
            format!("replay {k}: {} debug steps, {} refinements", trace.debug_steps, trace.refinements.len())
        })?;
        snapshots.push(snapshot(&p.store().run_dir(&meta.id).map_err(e2s)?, &["meta.json"]));
    }
    ensure(network_calls() == calls_before, || format!("{} network calls", network_calls() - calls_before))?;
    ensure(!snapshots[0].is_empty() && snapshots[0] == snapshots[1], || "replayed run dirs differ".into())?;
    let authored_snapshot = snapshot(&author.store().run_dir(&authored.id).map_err(e2s)?, &["meta.json"]);
    ensure(authored_snapshot == snapshots[0], || "replay differs from the authoring run".into())?;
    Ok(format!("{} files byte-identical across 2 replays, 1 debug step, 1 refinement, 0 network calls", snapshots[0].len()))
}

// ---------------------------------------------------------------- stmap

fn stmap_checks() -> Check {
    for (t_total, t_star) in [(5usize, 1usize), (10, 4), (30, 29), (17, 8)] {
        let frames: Vec<RgbImage> = (0..t_total)
            .map(|t| {
                let mut f = RgbImage::new(9, 7);
                if t >= t_star {
                    f.put(3, 2, [255, 255, 255]);
                }
                f
            })
            .collect();
        let map = spatiotemporal_map(&frames, DEFAULT_MOTION_THRESHOLD).map_err(e2s)?;
        let want = t_star as f64 / (t_total - 1) as f64;
        ensure(map.time_at(3, 2) == Some(want), || format!("T={t_total} t*={t_star}: {:?} vs {want}", map.time_at(3, 2)))?;
        ensure(map.colored_pixels() == 1, || format!("{} coloured pixels", map.colored_pixels()))?;
    }

    let (w, h, t_total) = (96usize, 24usize, 30usize);
    let frames: Vec<RgbImage> = (0..t_total)
        .map(|t| {
            let cx = -5.0 + (w as f64 + 10.0) * t as f64 / (t_total - 1) as f64;
            let mut f = RgbImage::filled(w, h, [20, 20, 20]);
            for y in 0..h {
                for x in 0..w {
                    if (x as f64 - cx).hypot(y as f64 - 12.0) <= 4.0 {
                        f.put(x, y, [240, 240, 240]);
                    }
                }
            }
            f
        })
        .collect();
    let map = spatiotemporal_map(&frames, DEFAULT_MOTION_THRESHOLD).map_err(e2s)?;
    ensure(map.colored_pixels() > 0, || "ball left no trace".into())?;
    for y in 0..h {
        let hues: Vec<f64> =
            (0..w).filter_map(|x| map.time_at(x, y).and_then(|_| hue_of(map.image.get(x, y)))).collect();
        for pair in hues.windows(2) {
            ensure(pair[1] <= pair[0] + 1e-9, || format!("row {y}: hue rises with x {hues:?}"))?;
        }
    }
    Ok(format!("single pixel time exact for 4 (T, t*) pairs, ball hue monotone over {} pixels", map.colored_pixels()))
}

// ---------------------------------------------------------------- interventions

fn conway_intervention() -> Result<String, String> {
    let dir = tmp()?;
    let (rows, cols, steps) = (12usize, 12usize, 10usize);
    let board = BinaryGrid::random(rows, cols, 0.3, 99).map_err(e2s)?;
    let image = render_board(&board, CONWAY_CELL_PX, [255, 255, 255], [0, 0, 0]);
    let mut cfg = config(dir.path());
    cfg.budgets.frame_size = image.dims();
    cfg.budgets.fps = 1.0;
    cfg.budgets.duration_s = steps as f64;
    let chat = Arc::new(ScriptedBackend::new());
    chat.push(Purpose::Generate, fenced(CONWAY_PROGRAM)).push(Purpose::Critic, ACCEPT);
    let p = Pipeline::new(cfg.clone(), chat, RunStore::open(&cfg.serve.store).map_err(e2s)?).map_err(e2s)?;
    let parent = p.generate(&GenerateRequest::new(image, conway_caption(rows, cols))).map_err(e2s)?;
    ensure(parent.exec_status.as_deref() == Some("ok"), || format!("parent {:?} {:?}", parent.exec_status, parent.error))?;

    let edited = CONWAY_PROGRAM.replace("\"survive\": [2, 3]", "\"survive\": [1, 2, 3]");
    ensure(edited != CONWAY_PROGRAM, || "rule text not found in the reference program".into())?;
    let child = p.intervene(&parent.id, &Intervention::SourceEdit { source: edited }, None).map_err(e2s)?;
    ensure(child.exec_status.as_deref() == Some("ok"), || format!("child {:?} {:?}", child.exec_status, child.error))?;

    let standard = evolve(&board, &Rules::conway(), steps);
    let variant = evolve(&board, &Rules::new(&[3], &[1, 2, 3]).map_err(e2s)?, steps);
    let extract = |id: &str| -> Result<Vec<BinaryGrid>, String> {
        let frames = p.frames(id).map_err(e2s)?;
        ensure(frames.len() == steps, || format!("{} frames", frames.len()))?;
        frames.iter().map(|f| extract_grid(f, rows, cols).map(|e| e.grid).map_err(e2s)).collect()
    };
    let parent_grids = extract(&parent.id)?;
    let child_grids = extract(&child.id)?;
    ensure(parent_grids == standard, || "parent does not follow B3/S23".into())?;
    ensure(child_grids == variant, || "edited program does not follow B3/S123".into())?;
    let diverged = (0..steps).filter(|&t| child_grids[t] != standard[t]).count();
    ensure(diverged > 0, || "edited program never diverges from B3/S23".into())?;
    Ok(format!("B3/S123 edit matches its oracle over {steps} steps, diverges from B3/S23 on {diverged}"))
}

/// Sign of the vertical drift of the motion-mask centroid over the first moving frames.
fn vertical_drift(input: &RgbImage, frames: &[RgbImage]) -> Result<f64, String> {
    let mut all = vec![input.clone()];
    all.extend_from_slice(&frames[..frames.len().min(4)]);
    let masks = motion_masks(&all, MotionParams::default()).map_err(e2s)?;
    let ys: Vec<f64> = masks.centroids().into_iter().flatten().map(|(_, y)| y).collect();
    ensure(ys.len() >= 2, || format!("only {} frames with motion", ys.len()))?;
    Ok(ys[ys.len() - 1] - ys[0])
}

fn gravity_intervention() -> Result<String, String> {
    let dir = tmp()?;
    let mut cfg = config(dir.path());
    cfg.budgets.frame_size = (64, 192);
    let input = ball_image(64, 192, 96.0);
    let chat = Arc::new(ScriptedBackend::new());
    chat.push(Purpose::Generate, fenced(&ball_program())).push(Purpose::Critic, ACCEPT);
    let p = Pipeline::new(cfg.clone(), chat, RunStore::open(&cfg.serve.store).map_err(e2s)?).map_err(e2s)?;
    let parent = p.generate(&GenerateRequest::new(input.clone(), CAPTION)).map_err(e2s)?;
    ensure(parent.exec_status.as_deref() == Some("ok"), || format!("parent {:?} {:?}", parent.exec_status, parent.error))?;
    let patch = Intervention::ParameterPatch { patches: [("gravity".to_string(), serde_json::json!(-9.81))].into() };
    let child = p.intervene(&parent.id, &patch, None).map_err(e2s)?;
    ensure(child.exec_status.as_deref() == Some("ok"), || format!("child {:?} {:?}", child.exec_status, child.error))?;
    let down = vertical_drift(&input, &p.frames(&parent.id).map_err(e2s)?)?;
    let up = vertical_drift(&input, &p.frames(&child.id).map_err(e2s)?)?;
    ensure(down > 0.0 && up < 0.0, || format!("centroid drift parent {down:+.2} px, patched {up:+.2} px"))?;
    Ok(format!("gravity flip reverses centroid drift ({down:+.1} px -> {up:+.1} px)"))
}

fn interventions() -> Check {
    let a = conway_intervention()?;
    let b = gravity_intervention()?;
    Ok(format!("{a}; {b}"))
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [(&str, Duration, fn() -> Check); 7] = [
        ("conway-reference-f1", Duration::from_secs(60), conway_benchmark),
        ("metric-naive-oracle", Duration::from_secs(30), metric_oracle),
        ("gt-self-score", Duration::from_secs(60), self_score),
        ("ransac-primitives", Duration::from_secs(120), ransac),
        ("replay-determinism", Duration::from_secs(60), replay_determinism),
        ("stmap-timing", Duration::from_secs(30), stmap_checks),
        ("interventions", Duration::from_secs(60), interventions),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs())),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name} ({:.2}s): {detail}", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({:.2}s): {why}", elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
