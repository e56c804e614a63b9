//! Disk and polygon fits on binary masks.
//!
//! Pixel `(x, y)` is the unit square centred on `(x, y)`. The mask boundary is
//! the set of crack edges between set and unset pixels; disks are fitted to
//! crack-edge midpoints, polygons by simplifying the traced outer crack contour.

use std::collections::BTreeMap;

use super::geom::fit_circle;
use super::{PrimitiveFit, ShapeClass, ShapeParams};
use crate::{Error, Mask, Result};

pub const MAX_POLYGON_VERTICES: usize = 12;
pub const POLYGON_TOLERANCE_PX: f64 = 1.0;

/// Lattice corner `(i, j)` is the point `(i - 0.5, j - 0.5)`.
type Corner = (i64, i64);

struct Boundary {
    edges: Vec<(Corner, Corner)>,
    pixels: Vec<usize>,
}

fn corner_point(c: Corner) -> [f64; 2] {
    [c.0 as f64 - 0.5, c.1 as f64 - 0.5]
}

/// Directed crack edges, clockwise on screen around each set pixel.
fn boundary(mask: &Mask) -> Boundary {
    let mut edges = Vec::new();
    let mut pixels = Vec::new();
    for y in 0..mask.height as i64 {
        for x in 0..mask.width as i64 {
            if !mask.get_signed(x, y) {
                continue;
            }
            let before = edges.len();
            if !mask.get_signed(x, y - 1) {
                edges.push(((x, y), (x + 1, y)));
            }
            if !mask.get_signed(x + 1, y) {
                edges.push(((x + 1, y), (x + 1, y + 1)));
            }
            if !mask.get_signed(x, y + 1) {
                edges.push(((x + 1, y + 1), (x, y + 1)));
            }
            if !mask.get_signed(x - 1, y) {
                edges.push(((x, y + 1), (x, y)));
            }
            if edges.len() > before {
                pixels.push(y as usize * mask.width + x as usize);
            }
        }
    }
    Boundary { edges, pixels }
}

/// Chains crack edges into closed rings of corners.
fn trace_rings(edges: &[(Corner, Corner)]) -> Vec<Vec<Corner>> {
    let mut outgoing: BTreeMap<Corner, Vec<usize>> = BTreeMap::new();
    for (i, (a, _)) in edges.iter().enumerate() {
        outgoing.entry(*a).or_default().push(i);
    }
    let mut used = vec![false; edges.len()];
    let mut rings = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut ring = vec![edges[start].0];
        let mut cur = start;
        used[start] = true;
        loop {
            let (a, b) = edges[cur];
            if b == ring[0] && outgoing[&b].iter().all(|&e| used[e]) {
                break;
            }
            ring.push(b);
            let din = (b.0 - a.0, b.1 - a.1);
            // At a diagonal touch there are two ways on; turn right (screen coords).
            let right = (-din.1, din.0);
            let next = outgoing[&b]
                .iter()
                .copied()
                .filter(|&e| !used[e])
                .max_by_key(|&e| {
                    let d = (edges[e].1 .0 - b.0, edges[e].1 .1 - b.1);
                    (d == right, d == din)
                });
            match next {
                Some(e) => {
                    used[e] = true;
                    cur = e;
                }
                None => break,
            }
        }
        if ring.len() > 1 && ring.last() == ring.first() {
            ring.pop();
        }
        rings.push(ring);
    }
    rings
}

fn signed_area(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    (0..n).map(|i| pts[i][0] * pts[(i + 1) % n][1] - pts[(i + 1) % n][0] * pts[i][1]).sum::<f64>() / 2.0
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Douglas-Peucker on the open chain `pts[lo..=hi]` (indices modulo the ring).
fn dp(pts: &[[f64; 2]], lo: usize, hi: usize, tol: f64, keep: &mut Vec<usize>) {
    let n = pts.len();
    let span = (hi + n - lo) % n;
    if span < 2 {
        return;
    }
    let (a, b) = (pts[lo], pts[hi % n]);
    let (mut worst, mut at) = (0.0, lo);
    for k in 1..span {
        let i = (lo + k) % n;
        let d = segment_distance(pts[i], a, b);
        if d > worst {
            worst = d;
            at = i;
        }
    }
    if worst > tol {
        keep.push(at);
        dp(pts, lo, at, tol, keep);
        dp(pts, at, hi, tol, keep);
    }
}

/// Simplifies a closed ring, returning kept vertices in ring order.
pub fn simplify_ring(pts: &[[f64; 2]], tol: f64) -> Vec<[f64; 2]> {
    let n = pts.len();
    if n <= 3 {
        return pts.to_vec();
    }
    let far = |from: [f64; 2]| {
        (0..n)
            .max_by(|&i, &j| {
                let di = (pts[i][0] - from[0]).hypot(pts[i][1] - from[1]);
                let dj = (pts[j][0] - from[0]).hypot(pts[j][1] - from[1]);
                di.total_cmp(&dj).then(j.cmp(&i))
            })
            .unwrap()
    };
    let a = far(pts[0]);
    let b = far(pts[a]);
    let mut keep = vec![a, b];
    dp(pts, a, b, tol, &mut keep);
    dp(pts, b, a, tol, &mut keep);
    keep.sort_unstable();
    keep.dedup();
    keep.into_iter().map(|i| pts[i]).collect()
}

fn fit_disk(b: &Boundary) -> Result<PrimitiveFit> {
    let mids: Vec<[f64; 2]> = b
        .edges
        .iter()
        .map(|(p, q)| {
            let (p, q) = (corner_point(*p), corner_point(*q));
            [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0]
        })
        .collect();
    let (center, radius) =
        fit_circle(&mids).ok_or_else(|| Error::FitFailed("boundary points admit no circle".into()))?;
    let rms = (mids.iter().map(|m| ((m[0] - center[0]).hypot(m[1] - center[1]) - radius).powi(2)).sum::<f64>()
        / mids.len() as f64)
        .sqrt();
    Ok(PrimitiveFit {
        shape_class: ShapeClass::Disk,
        parameters: ShapeParams::Disk { center, radius },
        inliers: b.pixels.clone(),
        rms_residual: rms,
    })
}

fn fit_polygon(b: &Boundary) -> Result<PrimitiveFit> {
    let ring = trace_rings(&b.edges)
        .into_iter()
        .map(|r| r.into_iter().map(corner_point).collect::<Vec<_>>())
        .max_by(|x, y| signed_area(x).abs().total_cmp(&signed_area(y).abs()))
        .ok_or_else(|| Error::FitFailed("mask has no boundary".into()))?;
    let mut tol = POLYGON_TOLERANCE_PX;
    let mut vertices = simplify_ring(&ring, tol);
    while vertices.len() > MAX_POLYGON_VERTICES {
        tol *= 1.25;
        vertices = simplify_ring(&ring, tol);
    }
    let m = vertices.len();
    let rms = (ring
        .iter()
        .map(|p| (0..m).map(|i| segment_distance(*p, vertices[i], vertices[(i + 1) % m])).fold(f64::INFINITY, f64::min))
        .map(|d| d * d)
        .sum::<f64>()
        / ring.len() as f64)
        .sqrt();
    Ok(PrimitiveFit {
        shape_class: ShapeClass::Polygon,
        parameters: ShapeParams::Polygon { vertices },
        inliers: b.pixels.clone(),
        rms_residual: rms,
    })
}

/// Fits a disk or polygon to a mask. Inliers are the flat indices of boundary pixels.
pub fn fit_2d_shape(mask: &Mask, shape_class: &str) -> Result<PrimitiveFit> {
    let class: ShapeClass = shape_class.parse()?;
    if mask.is_empty() {
        return Err(Error::InvalidInput("mask has no set pixels".into()));
    }
    let b = boundary(mask);
    match class {
        ShapeClass::Disk => fit_disk(&b),
        ShapeClass::Polygon => fit_polygon(&b),
        other => Err(Error::UnknownShape(format!("{other} is a 3-D class; use fit_3d_shape"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_disk_has_half_pixel_radius() {
        let mut m = Mask::new(5, 5);
        m.set(2, 3, true);
        let fit = fit_2d_shape(&m, "disk").unwrap();
        let ShapeParams::Disk { center, radius } = fit.parameters else { panic!() };
        assert!((radius - 0.5).abs() < 1e-12);
        assert!((center[0] - 2.0).abs() < 1e-12 && (center[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn square_simplifies_to_corners() {
        let m = Mask::from_fn(40, 40, |x, y| (10..30).contains(&x) && (10..30).contains(&y));
        let fit = fit_2d_shape(&m, "polygon").unwrap();
        let ShapeParams::Polygon { vertices } = fit.parameters else { panic!() };
        assert_eq!(vertices.len(), 4);
        for want in [[9.5, 9.5], [29.5, 9.5], [29.5, 29.5], [9.5, 29.5]] {
            assert!(vertices.iter().any(|v| (v[0] - want[0]).abs() <= 1.0 && (v[1] - want[1]).abs() <= 1.0));
        }
        assert!(fit.rms_residual < 1e-12);
    }

    #[test]
    fn polygon_vertex_budget() {
        let m = Mask::from_fn(120, 120, |x, y| ((x as f64 - 60.0).powi(2) + (y as f64 - 60.0).powi(2)).sqrt() <= 50.0);
        let fit = fit_2d_shape(&m, "polygon").unwrap();
        let ShapeParams::Polygon { vertices } = fit.parameters else { panic!() };
        assert!(vertices.len() <= MAX_POLYGON_VERTICES && vertices.len() >= 6);
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_2d_shape(&Mask::new(3, 3), "disk"), Err(Error::InvalidInput(_))));
        let mut m = Mask::new(3, 3);
        m.set(1, 1, true);
        assert!(matches!(fit_2d_shape(&m, "hexagon"), Err(Error::UnknownShape(_))));
        assert!(matches!(fit_2d_shape(&m, "sphere"), Err(Error::UnknownShape(_))));
    }

    #[test]
    fn diagonal_touch_traces_closed_rings() {
        let m = Mask::from_fn(4, 4, |x, y| (x, y) == (1, 1) || (x, y) == (2, 2));
        let rings = trace_rings(&boundary(&m).edges);
        assert_eq!(rings.iter().map(|r| r.len()).sum::<usize>(), 8);
    }
}
