#![allow(dead_code)]

use std::path::{Path, PathBuf};

use worldprog::bench::FALLING_BALL_PROGRAM;
use worldprog::config::PipelineConfig;
use worldprog::core::prompt::Purpose;
use worldprog::core::RgbImage;
use worldprog::vlm::ScriptedBackend;

pub const REJECT: &str = r#"The ball barely bounces. {"accurate": false, "suggestions": ["Make the ball bounce higher."]}"#;
pub const ACCEPT: &str = r#"{"accurate": true, "suggestions": []}"#;
pub const CAPTION: &str = "A red ball falls and bounces on the floor.";

pub fn ball_image(w: usize, h: usize, cy: f64) -> RgbImage {
    let mut img = RgbImage::filled(w, h, [30, 30, 60]);
    let cx = w as f64 / 2.0;
    for y in 0..h {
        for x in 0..w {
            if (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy) <= 5.0 {
                img.put(x, y, [220, 40, 40]);
            }
        }
    }
    img
}

pub fn input_image() -> RgbImage {
    ball_image(64, 48, 20.0)
}

/// Small, fast pipeline settings rooted at `dir`.
pub fn config(dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.budgets.frame_size = (64, 48);
    cfg.budgets.fps = 10.0;
    cfg.budgets.duration_s = 1.0;
    cfg.budgets.wall_clock_s = 60.0;
    cfg.budgets.memory_mb = 2048;
    cfg.serve.store = dir.join("runs");
    cfg.model.transcripts = dir.join("transcripts");
    cfg
}

pub fn fenced(source: &str) -> String {
    format!("Here is the program.\n```python\n{source}\n```\n")
}

pub fn ball_program() -> String {
    FALLING_BALL_PROGRAM.to_string()
}

pub fn buggy_ball_program() -> String {
    let s = FALLING_BALL_PROGRAM.replace("self.vy += PARAMS", "self.vy += 1 / 0 + PARAMS");
    assert_ne!(s, FALLING_BALL_PROGRAM);
    s
}

pub fn bouncier_ball_program() -> String {
    let s = FALLING_BALL_PROGRAM.replace("\"restitution\": 0.6", "\"restitution\": 0.8");
    assert_ne!(s, FALLING_BALL_PROGRAM);
    s
}

/// Generate a buggy program, fix it once, get rejected once, refine, get accepted.
pub fn script_debug_then_refine(b: &ScriptedBackend) {
    b.push(Purpose::Generate, fenced(&buggy_ball_program()))
        .push(Purpose::Debug, fenced(&ball_program()))
        .push(Purpose::Critic, REJECT)
        .push(Purpose::Refine, fenced(&bouncier_ball_program()))
        .push(Purpose::Critic, ACCEPT);
}

/// Every file under `dir` with its bytes, relative paths sorted.
pub fn snapshot(dir: &Path, skip: &[&str]) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, skip: &[&str], out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, skip, out);
            } else if !skip.iter().any(|s| p.file_name().is_some_and(|n| n == *s)) {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, skip, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Mean row of red pixels per frame.
pub fn red_centroid_y(frame: &RgbImage) -> Option<f64> {
    let (w, h) = frame.dims();
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = frame.get(x, y);
            if r > 150 && g < 100 && b < 100 {
                sum += y as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}
