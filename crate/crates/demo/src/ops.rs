//! Demo operations in plain Rust so they can be tested natively.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldprog_core::conway::{f1, render_board, step, BinaryGrid, Rules};
use worldprog_core::stmap::{spatiotemporal_map, DEFAULT_MOTION_THRESHOLD};
use worldprog_core::toolbox::{predict_ground_plane, RansacParams};
use worldprog_core::{Result, RgbImage};

pub const LIVE: [u8; 3] = [255, 255, 255];
pub const DEAD: [u8; 3] = [0, 0, 0];

/// Parses a digit list such as "23" or "1,2,3" into neighbour counts.
pub fn parse_counts(text: &str) -> Vec<u8> {
    text.chars().filter_map(|c| c.to_digit(10)).map(|d| d as u8).collect()
}

/// A board evolved under an edited rule next to a shadow board under B3/S23.
#[derive(Debug, Clone)]
pub struct RuleEdit {
    pub edited: BinaryGrid,
    pub standard: BinaryGrid,
    pub rules: Rules,
    pub generation: usize,
}

impl RuleEdit {
    pub fn new(rows: usize, cols: usize, density: f64, seed: u64, birth: &str, survive: &str) -> Result<Self> {
        let board = BinaryGrid::random(rows, cols, density, seed)?;
        let rules = Rules::new(&parse_counts(birth), &parse_counts(survive))?;
        Ok(Self { edited: board.clone(), standard: board, rules, generation: 0 })
    }

    pub fn advance(&mut self) {
        self.edited = step(&self.edited, &self.rules);
        self.standard = step(&self.standard, &Rules::conway());
        self.generation += 1;
    }

    /// F1 of the edited board against the standard oracle.
    pub fn f1_vs_standard(&self) -> Result<f64> {
        f1(&self.edited, &self.standard)
    }

    pub fn render(&self, cell_px: usize) -> RgbImage {
        render_board(&self.edited, cell_px, LIVE, DEAD)
    }
}

/// Frames of a disc crossing the canvas from left to right.
pub fn ball_crossing(width: usize, height: usize, frames: usize, radius: f64) -> Vec<RgbImage> {
    let span = frames.saturating_sub(1).max(1) as f64;
    (0..frames)
        .map(|t| {
            let cx = -radius + (width as f64 + 2.0 * radius) * t as f64 / span;
            let cy = height as f64 / 2.0;
            let mut f = RgbImage::filled(width, height, [20, 20, 20]);
            for y in 0..height {
                for x in 0..width {
                    if (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy) <= radius {
                        f.put(x, y, [240, 240, 240]);
                    }
                }
            }
            f
        })
        .collect()
}

/// Spatiotemporal map of [`ball_crossing`].
pub fn crossing_map(width: usize, height: usize, frames: usize, radius: f64) -> Result<RgbImage> {
    Ok(spatiotemporal_map(&ball_crossing(width, height, frames, radius), DEFAULT_MOTION_THRESHOLD)?.image)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneDemo {
    pub truth: [f64; 3],
    pub normal: [f64; 3],
    pub angle_deg: f64,
    pub inlier_ratio: f64,
}

/// Plants a random plane among uniform outliers and fits it back.
pub fn plane_fit(seed: u64, n_points: usize, outlier_fraction: f64, threshold: f64) -> Result<PlaneDemo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = dot(v, v).sqrt();
        if n > 0.1 && n <= 1.0 {
            break v.map(|c| c / n);
        }
    };
    let helper = if truth[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = unit(cross(truth, helper));
    let w = cross(truth, u);
    let outliers = ((n_points as f64) * outlier_fraction.clamp(0.0, 0.95)).round() as usize;
    let mut pts = Vec::with_capacity(n_points);
    for _ in 0..n_points - outliers.min(n_points) {
        let (a, b, e) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.003..0.003));
        pts.push(std::array::from_fn(|k| u[k] * a + w[k] * b + truth[k] * e));
    }
    for _ in 0..outliers.min(n_points) {
        pts.push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
    }
    let fit = predict_ground_plane(&pts, &RansacParams::new(500, threshold, seed))?;
    let angle_deg = dot(fit.normal, truth).abs().min(1.0).acos().to_degrees();
    Ok(PlaneDemo { truth, normal: fit.normal, angle_deg, inlier_ratio: fit.inlier_ratio })
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    a.map(|c| c / n)
}
