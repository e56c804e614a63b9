//! Spatiotemporal colormap: one still image showing where and when a
//! simulation moved, blue for early motion through to red for late.

use serde::{Deserialize, Serialize};

use crate::{Error, Field, Result, RgbImage};

pub const DEFAULT_MOTION_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatiotemporalMap {
    pub image: RgbImage,
    /// Normalised time of peak motion, `None` where the pixel never moved.
    pub motion_time: Vec<Option<f64>>,
    /// Peak luma change over the sequence.
    pub motion_mag: Field,
}

impl SpatiotemporalMap {
    pub fn time_at(&self, x: usize, y: usize) -> Option<f64> {
        self.motion_time[y * self.image.width + x]
    }

    pub fn colored_pixels(&self) -> usize {
        self.motion_time.iter().filter(|t| t.is_some()).count()
    }
}

/// Colour for normalised time `t`: hue runs linearly from 240° (blue) to 0° (red).
pub fn ramp_color(t: f64) -> [u8; 3] {
    hsv_to_rgb(240.0 * (1.0 - t.clamp(0.0, 1.0)), 1.0, 1.0)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h / 60.0) % 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// Hue in degrees [0, 360) of an RGB colour; `None` for greys.
pub fn hue_of(rgb: [u8; 3]) -> Option<f64> {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return None;
    }
    let h = if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    Some(h)
}

/// Builds the map from a rendered sequence.
///
/// Per-pixel change is `|gray(f_t) − gray(f_{t−1})|`. A pixel moves if its peak
/// change exceeds `motion_threshold`; its time is the first argmax `t`,
/// normalised by `T − 1`. The backdrop is the first frame in grey at half
/// intensity.
pub fn spatiotemporal_map(frames: &[RgbImage], motion_threshold: f64) -> Result<SpatiotemporalMap> {
    if frames.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 frames, got {}", frames.len())));
    }
    let (w, h) = frames[0].dims();
    if frames.iter().any(|f| f.dims() != (w, h)) {
        return Err(Error::SizeMismatch("frames differ in size".into()));
    }
    let last = (frames.len() - 1) as f64;
    let mut peak = Field::zeros(w, h);
    let mut peak_t = vec![0usize; w * h];
    let mut prev = frames[0].to_gray();
    for (t, frame) in frames.iter().enumerate().skip(1) {
        let cur = frame.to_gray();
        for i in 0..w * h {
            let m = (cur.values[i] - prev.values[i]).abs();
            if m > peak.values[i] {
                peak.values[i] = m;
                peak_t[i] = t;
            }
        }
        prev = cur;
    }

    let mut image = RgbImage::new(w, h);
    let mut motion_time = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if peak.values[i] > motion_threshold {
                let t = peak_t[i] as f64 / last;
                motion_time[i] = Some(t);
                image.put(x, y, ramp_color(t));
            } else {
                let v = (frames[0].gray_at(x, y) * 255.0 * 0.5).round() as u8;
                image.put(x, y, [v, v, v]);
            }
        }
    }
    Ok(SpatiotemporalMap { image, motion_time, motion_mag: peak })
}
