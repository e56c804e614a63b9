//! Game of Life rule oracle, grid extraction from rendered frames, and F1.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, RgbImage};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryGrid {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn dead(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!("grid must be at least 1x1, got {rows}x{cols}")));
        }
        Ok(Self { rows, cols, cells: vec![false; rows * cols] })
    }

    pub fn from_cells(rows: usize, cols: usize, cells: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 || cells.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "{} cells do not form a {rows}x{cols} grid",
                cells.len()
            )));
        }
        Ok(Self { rows, cols, cells })
    }

    /// Parses the plaintext `.cells` layout: `!` comment lines, `O`/`*`/`#` live, anything else dead.
    /// Ragged rows are padded with dead cells.
    pub fn parse_plaintext(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.starts_with('!'))
            .collect();
        let lines: Vec<&str> = {
            let end = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
            lines[..end].to_vec()
        };
        let rows = lines.len();
        let cols = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0);
        let mut grid = Self::dead(rows, cols)?;
        for (r, line) in lines.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                grid.set(r, c, matches!(ch, 'O' | '*' | '#'));
            }
        }
        Ok(grid)
    }

    pub fn to_plaintext(&self) -> String {
        let mut s = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                s.push(if self.get(r, c) { 'O' } else { '.' });
            }
            s.push('\n');
        }
        s
    }

    /// Uniform random board with the given live-cell probability.
    pub fn random(rows: usize, cols: usize, density: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..rows * cols).map(|_| rng.gen::<f64>() < density).collect();
        Self::from_cells(rows, cols, cells)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, live: bool) {
        self.cells[r * self.cols + c] = live;
    }

    pub fn live_count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    fn live_neighbours(&self, r: usize, c: usize) -> u32 {
        let mut n = 0;
        for dr in [-1i64, 0, 1] {
            for dc in [-1i64, 0, 1] {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < self.rows && (cc as usize) < self.cols {
                    n += self.get(rr as usize, cc as usize) as u32;
                }
            }
        }
        n
    }
}

/// Birth/survival neighbour counts, stored as bitmasks over 0..=8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rules {
    birth: u16,
    survive: u16,
}

impl Rules {
    pub fn new(birth: &[u8], survive: &[u8]) -> Result<Self> {
        let mask = |counts: &[u8]| -> Result<u16> {
            counts.iter().try_fold(0u16, |m, &n| {
                if n > 8 {
                    Err(Error::InvalidInput(format!("neighbour count {n} outside 0..=8")))
                } else {
                    Ok(m | 1 << n)
                }
            })
        };
        Ok(Self { birth: mask(birth)?, survive: mask(survive)? })
    }

    /// Standard B3/S23.
    pub fn conway() -> Self {
        Self { birth: 1 << 3, survive: 1 << 2 | 1 << 3 }
    }

    pub fn births_on(&self, n: u32) -> bool {
        self.birth >> n & 1 == 1
    }

    pub fn survives_on(&self, n: u32) -> bool {
        self.survive >> n & 1 == 1
    }

    pub fn birth_counts(&self) -> Vec<u8> {
        (0..=8).filter(|&n| self.births_on(n as u32)).collect()
    }

    pub fn survive_counts(&self) -> Vec<u8> {
        (0..=8).filter(|&n| self.survives_on(n as u32)).collect()
    }
}

impl Default for Rules {
    fn default() -> Self {
        Self::conway()
    }
}

impl fmt::Display for Rules {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B")?;
        for n in self.birth_counts() {
            write!(f, "{n}")?;
        }
        write!(f, "/S")?;
        for n in self.survive_counts() {
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

impl FromStr for Rules {
    type Err = Error;

    /// Accepts `B3/S23` style rule strings (case-insensitive).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("rule string {s:?} is not of the form B.../S..."));
        let upper = s.trim().to_ascii_uppercase();
        let (b, s_part) = upper.split_once('/').ok_or_else(bad)?;
        let digits = |part: &str, prefix: char| -> Result<Vec<u8>> {
            let rest = part.strip_prefix(prefix).ok_or_else(bad)?;
            rest.chars()
                .map(|c| c.to_digit(10).map(|d| d as u8).ok_or_else(bad))
                .collect()
        };
        Rules::new(&digits(b, 'B')?, &digits(s_part, 'S')?)
    }
}

/// One synchronous update with a Moore neighbourhood; cells outside the grid are dead.
pub fn step(grid: &BinaryGrid, rules: &Rules) -> BinaryGrid {
    let mut next = grid.clone();
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let n = grid.live_neighbours(r, c);
            let live = if grid.get(r, c) { rules.survives_on(n) } else { rules.births_on(n) };
            next.set(r, c, live);
        }
    }
    next
}

/// `steps` successive states after `grid` (the initial board is not included).
pub fn evolve(grid: &BinaryGrid, rules: &Rules, steps: usize) -> Vec<BinaryGrid> {
    let mut out = Vec::with_capacity(steps);
    let mut cur = grid.clone();
    for _ in 0..steps {
        cur = step(&cur, rules);
        out.push(cur.clone());
    }
    out
}

/// Draws the board with solid `cell_px`-sized tiles.
pub fn render_board(grid: &BinaryGrid, cell_px: usize, live: [u8; 3], dead: [u8; 3]) -> RgbImage {
    let mut img = RgbImage::filled(grid.cols * cell_px, grid.rows * cell_px, dead);
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            if grid.get(r, c) {
                for y in r * cell_px..(r + 1) * cell_px {
                    for x in c * cell_px..(c + 1) * cell_px {
                        img.put(x, y, live);
                    }
                }
            }
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub grid: BinaryGrid,
    pub warning: Option<String>,
}

/// Tile-mean spread below which a frame counts as a single intensity.
const MIN_CLUSTER_SEPARATION: f64 = 1e-3;

/// Recovers a `rows`×`cols` board from a rendered frame.
///
/// Each tile is summarised by the mean luma of its central half. Tile means are
/// split by 1-D 2-means; the live cluster is the minority one, or the brighter
/// one when both clusters hold the same number of tiles. A frame with a single
/// intensity yields an all-dead board and a warning.
pub fn extract_grid(frame: &RgbImage, rows: usize, cols: usize) -> Result<Extraction> {
    if rows == 0 || cols == 0 || frame.width < cols || frame.height < rows {
        return Err(Error::InvalidInput(format!(
            "{}x{} frame cannot be tiled into {rows}x{cols} cells",
            frame.width, frame.height
        )));
    }
    let mut means = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (y0, y1) = (r * frame.height / rows, (r + 1) * frame.height / rows);
        let (iy0, iy1) = inner_span(y0, y1);
        for c in 0..cols {
            let (x0, x1) = (c * frame.width / cols, (c + 1) * frame.width / cols);
            let (ix0, ix1) = inner_span(x0, x1);
            let mut sum = 0.0;
            for y in iy0..iy1 {
                for x in ix0..ix1 {
                    sum += frame.gray_at(x, y);
                }
            }
            means.push(sum / ((iy1 - iy0) * (ix1 - ix0)) as f64);
        }
    }

    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < MIN_CLUSTER_SEPARATION {
        return Ok(Extraction {
            grid: BinaryGrid::dead(rows, cols)?,
            warning: Some("frame has a single intensity; reporting an all-dead board".into()),
        });
    }

    let bright = two_means(&means, lo, hi);
    let n_bright = bright.iter().filter(|b| **b).count();
    let n_dark = bright.len() - n_bright;
    let live_is_bright = n_bright <= n_dark;
    let cells = bright.iter().map(|&b| b == live_is_bright).collect();
    Ok(Extraction { grid: BinaryGrid::from_cells(rows, cols, cells)?, warning: None })
}

fn inner_span(a: usize, b: usize) -> (usize, usize) {
    let len = b - a;
    let margin = len / 4;
    if len - 2 * margin == 0 {
        (a, b)
    } else {
        (a + margin, b - margin)
    }
}

/// Assignment to the brighter of two 1-D clusters.
fn two_means(values: &[f64], lo: f64, hi: f64) -> Vec<bool> {
    let (mut c0, mut c1) = (lo, hi);
    let mut assign: Vec<bool> = values.iter().map(|&v| (v - c1).abs() < (v - c0).abs()).collect();
    for _ in 0..100 {
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for (&v, &a) in values.iter().zip(&assign) {
            if a {
                s1 += v;
                n1 += 1;
            } else {
                s0 += v;
                n0 += 1;
            }
        }
        if n0 > 0 {
            c0 = s0 / n0 as f64;
        }
        if n1 > 0 {
            c1 = s1 / n1 as f64;
        }
        let next: Vec<bool> = values.iter().map(|&v| (v - c1).abs() < (v - c0).abs()).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

pub fn confusion(pred: &BinaryGrid, gt: &BinaryGrid) -> Result<Confusion> {
    if pred.rows != gt.rows || pred.cols != gt.cols {
        return Err(Error::SizeMismatch(format!(
            "pred {}x{} vs gt {}x{}",
            pred.rows, pred.cols, gt.rows, gt.cols
        )));
    }
    let mut m = Confusion::default();
    for (&p, &g) in pred.cells.iter().zip(&gt.cells) {
        match (p, g) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
            (false, false) => m.tn += 1,
        }
    }
    Ok(m)
}

impl Confusion {
    /// F1 with live cells as positives; no positives anywhere scores 1.0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn f1(pred: &BinaryGrid, gt: &BinaryGrid) -> Result<f64> {
    Ok(confusion(pred, gt)?.f1())
}
