//! RANSAC fitting of planes and 3-D primitives to point clouds.
//!
//! Every fitter draws minimal samples from a seeded ChaCha stream, keeps the
//! hypothesis with the most inliers (first one wins ties), refines it by least
//! squares on those inliers and recomputes the inlier set against the refined
//! model. Results are bit-reproducible for a given seed.

use nalgebra::{Matrix3, Vector4};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geom::{arr, estimate_normals, fit_circle, orthogonal, pca, sorted_eigen, v3, Vec3};
use super::{PlaneFit, PrimitiveFit, ShapeClass, ShapeParams, DEFAULT_MIN_INLIER_RATIO};
use crate::{Error, Result};

const NORMAL_NEIGHBOURS: usize = 12;
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub seed: u64,
    pub min_inlier_ratio: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { iterations: 500, inlier_threshold: 0.01, seed: 0, min_inlier_ratio: DEFAULT_MIN_INLIER_RATIO }
    }
}

impl RansacParams {
    pub fn new(iterations: usize, inlier_threshold: f64, seed: u64) -> Self {
        Self { iterations, inlier_threshold, seed, ..Self::default() }
    }

    fn check(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidInput("iterations must be positive".into()));
        }
        if !(self.inlier_threshold > 0.0 && self.inlier_threshold.is_finite()) {
            return Err(Error::InvalidInput(format!("inlier threshold {} must be positive", self.inlier_threshold)));
        }
        Ok(())
    }
}

/// Flips `n` so its y (up) component is positive; when y is zero the
/// largest-magnitude component is made positive instead.
pub fn canonical_up(n: Vec3) -> Vec3 {
    if n.y > EPS {
        n
    } else if n.y < -EPS {
        -n
    } else {
        let i = n.iamax();
        if n[i] < 0.0 {
            -n
        } else {
            n
        }
    }
}

fn collect(points: &[[f64; 3]]) -> Result<Vec<Vec3>> {
    let pts: Vec<Vec3> = points.iter().map(v3).collect();
    if pts.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::InvalidInput("point cloud contains non-finite coordinates".into()));
    }
    Ok(pts)
}

fn inliers_of(pts: &[Vec3], thr: f64, dist: impl Fn(&Vec3) -> f64) -> Vec<usize> {
    (0..pts.len()).filter(|&i| dist(&pts[i]) <= thr).collect()
}

fn rms(pts: &[Vec3], idx: &[usize], dist: impl Fn(&Vec3) -> f64) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    (idx.iter().map(|&i| dist(&pts[i]).powi(2)).sum::<f64>() / idx.len() as f64).sqrt()
}

/// Generic hypothesise-and-verify loop; returns the best model and its inlier count.
fn ransac<M>(
    n: usize,
    sample_size: usize,
    params: &RansacParams,
    mut hypothesise: impl FnMut(&[usize]) -> Option<M>,
    mut score: impl FnMut(&M) -> usize,
) -> Option<(M, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(M, usize)> = None;
    for _ in 0..params.iterations {
        let sample = index::sample(&mut rng, n, sample_size).into_vec();
        let Some(model) = hypothesise(&sample) else { continue };
        let s = score(&model);
        if best.as_ref().map_or(true, |(_, b)| s > *b) {
            best = Some((model, s));
        }
    }
    best
}

// ---------------------------------------------------------------- planes

fn plane_through(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(Vec3, f64)> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    let scale = (b - a).norm().max((c - a).norm()).max(EPS);
    if len <= 1e-10 * scale * scale {
        return None;
    }
    let n = n / len;
    Some((n, n.dot(a)))
}

/// Least-squares plane through the given points.
fn refit_plane(pts: &[Vec3], idx: &[usize]) -> Option<(Vec3, f64)> {
    let p = pca(idx.iter().map(|&i| &pts[i]))?;
    let n = p.vectors[0];
    Some((n, n.dot(&p.centroid)))
}

/// RANSAC plane fit with least-squares refinement. The normal is oriented up (+y).
pub fn predict_ground_plane(points: &[[f64; 3]], params: &RansacParams) -> Result<PlaneFit> {
    params.check()?;
    if points.len() < 3 {
        return Err(Error::InvalidInput(format!("plane fit needs ≥ 3 points, got {}", points.len())));
    }
    let pts = collect(points)?;
    let spread = pca(pts.iter()).expect("non-empty");
    if spread.values[2] <= 0.0 || spread.values[1] <= 1e-12 * spread.values[2] {
        return Err(Error::InvalidInput("points are collinear".into()));
    }
    let thr = params.inlier_threshold;
    let (best, _) = ransac(
        pts.len(),
        3,
        params,
        |s| plane_through(&pts[s[0]], &pts[s[1]], &pts[s[2]]),
        |(n, d)| pts.iter().filter(|p| (n.dot(p) - d).abs() <= thr).count(),
    )
    .ok_or_else(|| Error::FitFailed("every sampled triple was degenerate".into()))?;

    let (n0, d0) = best;
    let first = inliers_of(&pts, thr, |p| (n0.dot(p) - d0).abs());
    let (mut n, mut d) = (n0, d0);
    if first.len() >= 3 {
        if let Some((n1, d1)) = refit_plane(&pts, &first) {
            let second = inliers_of(&pts, thr, |p| (n1.dot(p) - d1).abs());
            if second.len() >= first.len() {
                (n, d) = (n1, d1);
            }
        }
    }
    let flip = canonical_up(n) != n;
    if flip {
        n = -n;
        d = -d;
    }
    let inliers = inliers_of(&pts, thr, |p| (n.dot(p) - d).abs());
    Ok(PlaneFit {
        normal: arr(&n),
        offset: d,
        inlier_ratio: inliers.len() as f64 / pts.len() as f64,
        inliers,
    })
}

// ---------------------------------------------------------------- spheres

fn sphere_through(p: [&Vec3; 4]) -> Option<(Vec3, f64)> {
    let mut a = Matrix3::zeros();
    let mut b = Vec3::zeros();
    for i in 1..4 {
        let row = 2.0 * (p[i] - p[0]);
        a.set_row(i - 1, &row.transpose());
        b[i - 1] = p[i].norm_squared() - p[0].norm_squared();
    }
    let scale = (1..4).map(|i| (p[i] - p[0]).norm()).fold(0.0, f64::max);
    if a.determinant().abs() <= 1e-9 * (2.0 * scale).powi(3) {
        return None;
    }
    let c = a.lu().solve(&b)?;
    let r = (p[0] - c).norm();
    (r > 0.0 && r.is_finite()).then_some((c, r))
}

fn refine_sphere(pts: &[Vec3], idx: &[usize], start: (Vec3, f64)) -> (Vec3, f64) {
    if idx.len() < 4 {
        return start;
    }
    // Algebraic fit, centred for conditioning.
    let mean = idx.iter().fold(Vec3::zeros(), |a, &i| a + pts[i]) / idx.len() as f64;
    let mut ata = nalgebra::Matrix4::<f64>::zeros();
    let mut atb = Vector4::zeros();
    for &i in idx {
        let q = pts[i] - mean;
        let row = Vector4::new(2.0 * q.x, 2.0 * q.y, 2.0 * q.z, 1.0);
        ata += row * row.transpose();
        atb += row * q.norm_squared();
    }
    let (mut c, mut r) = match ata.lu().solve(&atb) {
        Some(s) => {
            let c = Vec3::new(s.x, s.y, s.z);
            let r2 = s.w + c.norm_squared();
            if r2 > 0.0 {
                (c + mean, r2.sqrt())
            } else {
                start
            }
        }
        None => start,
    };
    // Gauss-Newton on geometric distance.
    for _ in 0..30 {
        let mut jtj = nalgebra::Matrix4::<f64>::zeros();
        let mut jtr = Vector4::zeros();
        for &i in idx {
            let d = pts[i] - c;
            let len = d.norm();
            if len < EPS {
                continue;
            }
            let u = d / len;
            let j = Vector4::new(-u.x, -u.y, -u.z, -1.0);
            jtj += j * j.transpose();
            jtr += j * (len - r);
        }
        let Some(step) = jtj.lu().solve(&(-jtr)) else { break };
        c += Vec3::new(step.x, step.y, step.z);
        r += step.w;
        if step.norm() < 1e-14 * (1.0 + r) {
            break;
        }
    }
    if r > 0.0 && r.is_finite() {
        (c, r)
    } else {
        start
    }
}

fn fit_sphere(pts: &[Vec3], params: &RansacParams) -> Result<PrimitiveFit> {
    let thr = params.inlier_threshold;
    let dist = |c: &Vec3, r: f64| {
        let c = *c;
        move |p: &Vec3| ((p - c).norm() - r).abs()
    };
    let ((c0, r0), _) = ransac(
        pts.len(),
        4,
        params,
        |s| sphere_through([&pts[s[0]], &pts[s[1]], &pts[s[2]], &pts[s[3]]]),
        |(c, r)| pts.iter().filter(|p| dist(c, *r)(p) <= thr).count(),
    )
    .ok_or_else(|| Error::FitFailed("no non-degenerate sphere sample".into()))?;

    let mut model = (c0, r0);
    let mut inliers = inliers_of(pts, thr, dist(&c0, r0));
    for _ in 0..3 {
        let refined = refine_sphere(pts, &inliers, model);
        let next = inliers_of(pts, thr, dist(&refined.0, refined.1));
        if next.len() < inliers.len() {
            break;
        }
        let done = next == inliers;
        model = refined;
        inliers = next;
        if done {
            break;
        }
    }
    let (c, r) = model;
    finish(
        pts,
        params,
        ShapeClass::Sphere,
        ShapeParams::Sphere { center: arr(&c), radius: r },
        inliers,
        dist(&c, r),
    )
}

// ---------------------------------------------------------------- cylinders

struct Cylinder {
    point: Vec3,
    axis: Vec3,
    radius: f64,
}

impl Cylinder {
    fn residual(&self, p: &Vec3) -> f64 {
        let d = p - self.point;
        (d - self.axis * d.dot(&self.axis)).norm() - self.radius
    }
}

/// Axis from the normals (the direction they are all orthogonal to), then a circle in the
/// cross-section plane.
fn cylinder_from(pts: &[Vec3], normals: &[Vec3], idx: &[usize]) -> Option<Cylinder> {
    let mut m = Matrix3::zeros();
    for &i in idx {
        m += normals[i] * normals[i].transpose();
    }
    let (vals, vecs) = sorted_eigen(m);
    if vals[1] <= 1e-6 * vals[2].max(EPS) {
        return None; // normals all parallel: no axis information
    }
    let axis = canonical_up(vecs[0]);
    let u = orthogonal(&axis);
    let w = axis.cross(&u);
    let flat: Vec<[f64; 2]> = idx.iter().map(|&i| [pts[i].dot(&u), pts[i].dot(&w)]).collect();
    let (c2, r) = fit_circle(&flat)?;
    Some(Cylinder { point: u * c2[0] + w * c2[1], axis, radius: r })
}

fn fit_cylinder(pts: &[Vec3], params: &RansacParams) -> Result<PrimitiveFit> {
    let thr = params.inlier_threshold;
    let normals = estimate_normals(pts, NORMAL_NEIGHBOURS);
    let (best, _) = ransac(
        pts.len(),
        5,
        params,
        |s| cylinder_from(pts, &normals, s),
        |c| pts.iter().filter(|p| c.residual(p).abs() <= thr).count(),
    )
    .ok_or_else(|| Error::FitFailed("no non-degenerate cylinder sample".into()))?;

    let mut model = best;
    let mut inliers = inliers_of(pts, thr, |p| model.residual(p).abs());
    for _ in 0..3 {
        let Some(refined) = cylinder_from(pts, &normals, &inliers) else { break };
        let next = inliers_of(pts, thr, |p| refined.residual(p).abs());
        if next.len() < inliers.len() {
            break;
        }
        let done = next == inliers;
        model = refined;
        inliers = next;
        if done {
            break;
        }
    }
    // Height and mid-point from the inlier extent along the axis.
    let (lo, hi) = inliers.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
        let t = (pts[i] - model.point).dot(&model.axis);
        (lo.min(t), hi.max(t))
    });
    let (lo, hi) = if inliers.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    let mid = model.point + model.axis * ((lo + hi) / 2.0);
    let height = hi - lo;
    if height <= 0.0 {
        return Err(Error::FitFailed("cylinder inliers have no extent along the axis".into()));
    }
    let params_out = ShapeParams::Cylinder {
        axis_point: arr(&mid),
        direction: arr(&model.axis),
        radius: model.radius,
        height,
    };
    finish(pts, params, ShapeClass::Cylinder, params_out, inliers, |p| model.residual(p).abs())
}

// ---------------------------------------------------------------- cuboids

#[derive(Clone)]
struct Cuboid {
    axes: [Vec3; 3],
    lo: Vec3,
    hi: Vec3,
}

impl Cuboid {
    fn local(&self, p: &Vec3) -> Vec3 {
        Vec3::new(self.axes[0].dot(p), self.axes[1].dot(p), self.axes[2].dot(p))
    }

    /// Distance from `p` to the box surface.
    fn surface_distance(&self, p: &Vec3) -> f64 {
        let q = self.local(p);
        let mut outside = 0.0;
        let mut inside = f64::INFINITY;
        let mut is_inside = true;
        for k in 0..3 {
            let below = self.lo[k] - q[k];
            let above = q[k] - self.hi[k];
            let out = below.max(above);
            if out > 0.0 {
                is_inside = false;
                outside += out * out;
            } else {
                inside = inside.min(-out);
            }
        }
        if is_inside {
            inside
        } else {
            outside.sqrt()
        }
    }
}

fn axes_from_normals(ns: &[Vec3]) -> Option<[Vec3; 3]> {
    let n1 = ns[0];
    let n2 = ns[1..].iter().find(|n| n.dot(&n1).abs() < 0.5)?;
    let n2 = (n2 - n1 * n2.dot(&n1)).normalize();
    Some([n1, n2, n1.cross(&n2)])
}

fn bounds(pts: &[Vec3], idx: impl Iterator<Item = usize>, axes: &[Vec3; 3], trim: f64) -> Option<(Vec3, Vec3)> {
    let mut cols: [Vec<f64>; 3] = Default::default();
    for i in idx {
        for k in 0..3 {
            cols[k].push(axes[k].dot(&pts[i]));
        }
    }
    if cols[0].is_empty() {
        return None;
    }
    let mut lo = Vec3::zeros();
    let mut hi = Vec3::zeros();
    let n = cols[0].len();
    let cut = ((n - 1) as f64 * trim).round() as usize;
    for k in 0..3 {
        let c = &mut cols[k];
        lo[k] = *c.select_nth_unstable_by(cut, f64::total_cmp).1;
        hi[k] = *c.select_nth_unstable_by(n - 1 - cut, f64::total_cmp).1;
    }
    Some((lo, hi))
}

/// Re-estimates the axes from inlier normals grouped by their closest axis.
fn refine_axes(normals: &[Vec3], idx: &[usize], axes: &[Vec3; 3]) -> [Vec3; 3] {
    let mut scatter = [Matrix3::zeros(); 3];
    let mut counts = [0usize; 3];
    for &i in idx {
        let n = normals[i];
        let (k, c) = (0..3).map(|k| (k, n.dot(&axes[k]).abs())).max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        if c > 0.866 {
            scatter[k] += n * n.transpose();
            counts[k] += 1;
        }
    }
    let mut est = *axes;
    for k in 0..3 {
        if counts[k] >= 3 {
            let (_, vecs) = sorted_eigen(scatter[k]);
            let v = vecs[2];
            est[k] = if v.dot(&axes[k]) < 0.0 { -v } else { v };
        }
    }
    // Nearest rotation to the estimated axes.
    let m = Matrix3::from_columns(&est);
    let svd = m.svd(true, true);
    let (Some(u), Some(vt)) = (svd.u, svd.v_t) else { return *axes };
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    [r.column(0).into_owned(), r.column(1).into_owned(), r.column(2).into_owned()]
}

/// Orders the axes to align with x, y, z and makes each point along its dominant component.
fn canonical_box(b: &Cuboid) -> Cuboid {
    let mut remaining = vec![0usize, 1, 2];
    let mut out = b.clone();
    for target in 0..3 {
        let (pos, &k) = remaining
            .iter()
            .enumerate()
            .max_by(|x, y| b.axes[*x.1][target].abs().total_cmp(&b.axes[*y.1][target].abs()))
            .unwrap();
        remaining.remove(pos);
        let (a, lo, hi) = (b.axes[k], b.lo[k], b.hi[k]);
        if a[target] < 0.0 {
            out.axes[target] = -a;
            out.lo[target] = -hi;
            out.hi[target] = -lo;
        } else {
            out.axes[target] = a;
            out.lo[target] = lo;
            out.hi[target] = hi;
        }
    }
    if out.axes[0].cross(&out.axes[1]).dot(&out.axes[2]) < 0.0 {
        out.axes[2] = -out.axes[2];
        let (lo, hi) = (out.lo[2], out.hi[2]);
        out.lo[2] = -hi;
        out.hi[2] = -lo;
    }
    out
}

fn fit_cuboid(pts: &[Vec3], params: &RansacParams) -> Result<PrimitiveFit> {
    let thr = params.inlier_threshold;
    let normals = estimate_normals(pts, NORMAL_NEIGHBOURS);
    let (best, _) = ransac(
        pts.len(),
        6,
        params,
        |s| {
            let ns: Vec<Vec3> = s.iter().map(|&i| normals[i]).collect();
            let axes = axes_from_normals(&ns)?;
            let (lo, hi) = bounds(pts, 0..pts.len(), &axes, 0.02)?;
            Some(Cuboid { axes, lo, hi })
        },
        |b| pts.iter().filter(|p| b.surface_distance(p) <= thr).count(),
    )
    .ok_or_else(|| Error::FitFailed("no sample spanned two face orientations".into()))?;

    let mut model = best;
    let mut inliers = inliers_of(pts, thr, |p| model.surface_distance(p));
    for _ in 0..8 {
        let axes = refine_axes(&normals, &inliers, &model.axes);
        // Bounds grow through face points a little beyond the current box so
        // sparse sampling cannot stall them.
        let margin = thr + 0.05 * (model.hi - model.lo).max();
        let probe = Cuboid { axes, lo: model.lo, hi: model.hi };
        let support = (0..pts.len()).filter(|&i| {
            probe.surface_distance(&pts[i]) <= margin && axes.iter().any(|a| normals[i].dot(a).abs() > 0.9)
        });
        let Some((lo, hi)) = bounds(pts, support, &axes, 0.0) else { break };
        let refined = Cuboid { axes, lo, hi };
        let next = inliers_of(pts, thr, |p| refined.surface_distance(p));
        if next.len() < inliers.len() {
            break;
        }
        let done = next == inliers;
        model = refined;
        inliers = next;
        if done {
            break;
        }
    }
    let b = canonical_box(&model);
    let half = (b.hi - b.lo) / 2.0;
    if half.iter().any(|h| *h <= 0.0) {
        return Err(Error::FitFailed("cuboid collapsed to zero thickness".into()));
    }
    let mid_local = (b.hi + b.lo) / 2.0;
    let center = b.axes[0] * mid_local[0] + b.axes[1] * mid_local[1] + b.axes[2] * mid_local[2];
    let rotation = [0, 1, 2].map(|r| [b.axes[0][r], b.axes[1][r], b.axes[2][r]]);
    let out = ShapeParams::Cuboid { center: arr(&center), half_extents: arr(&half), rotation };
    finish(pts, params, ShapeClass::Cuboid, out, inliers, |p| b.surface_distance(p))
}

fn finish(
    pts: &[Vec3],
    params: &RansacParams,
    class: ShapeClass,
    shape: ShapeParams,
    inliers: Vec<usize>,
    dist: impl Fn(&Vec3) -> f64,
) -> Result<PrimitiveFit> {
    let ratio = inliers.len() as f64 / pts.len() as f64;
    if ratio < params.min_inlier_ratio {
        return Err(Error::FitFailed(format!(
            "best {class} reached inlier ratio {ratio:.3}, below the minimum {}",
            params.min_inlier_ratio
        )));
    }
    let rms_residual = rms(pts, &inliers, dist);
    Ok(PrimitiveFit { shape_class: class, parameters: shape, inliers, rms_residual })
}

/// Minimal sample size per 3-D class.
pub fn minimal_sample(class: ShapeClass) -> Option<usize> {
    match class {
        ShapeClass::Sphere => Some(4),
        ShapeClass::Cylinder => Some(5),
        ShapeClass::Cuboid => Some(6),
        ShapeClass::Disk | ShapeClass::Polygon => None,
    }
}

/// Fits a sphere, cylinder or cuboid, completing the shape from partial coverage.
pub fn fit_3d_shape(points: &[[f64; 3]], shape_class: &str, params: &RansacParams) -> Result<PrimitiveFit> {
    params.check()?;
    let class: ShapeClass = shape_class.parse()?;
    let need = minimal_sample(class)
        .ok_or_else(|| Error::UnknownShape(format!("{shape_class} is a 2-D class; use fit_2d_shape")))?;
    if points.len() < need {
        return Err(Error::InvalidInput(format!("{class} fit needs ≥ {need} points, got {}", points.len())));
    }
    let pts = collect(points)?;
    match class {
        ShapeClass::Sphere => fit_sphere(&pts, params),
        ShapeClass::Cylinder => fit_cylinder(&pts, params),
        ShapeClass::Cuboid => fit_cuboid(&pts, params),
        ShapeClass::Disk | ShapeClass::Polygon => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sphere_points(c: [f64; 3], r: f64, n: usize, hemisphere: bool, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = if hemisphere { rng.gen_range(0.0..1.0) } else { rng.gen_range(-1.0..1.0) };
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let s = (1.0 - z * z).sqrt();
                [c[0] + r * s * phi.cos(), c[1] + r * s * phi.sin(), c[2] + r * z]
            })
            .collect()
    }

    #[test]
    fn exact_plane() {
        let pts: Vec<[f64; 3]> = (0..1000).map(|i| [(i % 40) as f64 * 0.1, (i / 40) as f64 * 0.1, 0.0]).collect();
        let fit = predict_ground_plane(&pts, &RansacParams::new(100, 0.01, 1)).unwrap();
        assert_eq!(fit.normal, [0.0, 0.0, 1.0]);
        assert!(fit.offset.abs() < 1e-12);
        assert_eq!(fit.inlier_ratio, 1.0);
    }

    #[test]
    fn three_points_interpolated() {
        let pts = [[0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]];
        let fit = predict_ground_plane(&pts, &RansacParams::new(10, 1e-9, 0)).unwrap();
        assert!((fit.normal[1] - 1.0).abs() < 1e-12 && fit.normal[0].abs() < 1e-12 && fit.normal[2].abs() < 1e-12);
        assert!((fit.offset - 1.0).abs() < 1e-12);
        assert_eq!(fit.inlier_ratio, 1.0);
    }

    #[test]
    fn plane_errors() {
        let p = RansacParams::default();
        assert!(predict_ground_plane(&[[0.0; 3], [1.0, 0.0, 0.0]], &p).is_err());
        let line: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(predict_ground_plane(&line, &p).is_err());
    }

    #[test]
    fn plane_normal_points_up() {
        // Ground plane y = -1 with a tilt.
        let pts: Vec<[f64; 3]> = (0..400)
            .map(|i| {
                let (x, z) = ((i % 20) as f64 * 0.1, (i / 20) as f64 * 0.1);
                [x, -1.0 + 0.1 * x, z]
            })
            .collect();
        let fit = predict_ground_plane(&pts, &RansacParams::new(50, 1e-6, 3)).unwrap();
        assert!(fit.normal[1] > 0.0);
    }

    #[test]
    fn full_sphere_exact() {
        let pts = sphere_points([1.0, 2.0, 3.0], 0.5, 500, false, 4);
        let fit = fit_3d_shape(&pts, "sphere", &RansacParams::new(100, 1e-3, 0)).unwrap();
        let ShapeParams::Sphere { center, radius } = fit.parameters else { panic!() };
        for (a, b) in center.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((radius - 0.5).abs() < 1e-6);
        assert!(fit.rms_residual <= 1e-3);
    }

    #[test]
    fn shape_errors() {
        let p = RansacParams::default();
        let pts = sphere_points([0.0; 3], 1.0, 3, false, 0);
        assert!(matches!(fit_3d_shape(&pts, "sphere", &p), Err(Error::InvalidInput(_))));
        assert!(matches!(fit_3d_shape(&pts, "torus", &p), Err(Error::UnknownShape(_))));
        assert!(matches!(fit_3d_shape(&pts, "disk", &p), Err(Error::UnknownShape(_))));
    }

    #[test]
    fn sphere_rejects_when_inliers_too_few() {
        // Uniform noise in a cube: no sphere explains 20% of it at this threshold.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<[f64; 3]> = (0..400).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let err = fit_3d_shape(&pts, "sphere", &RansacParams::new(50, 1e-4, 0)).unwrap_err();
        assert!(matches!(err, Error::FitFailed(_)));
    }

    #[test]
    fn cylinder_from_partial_surface() {
        let mut pts = Vec::new();
        // Half of a vertical cylinder: axis along y through (0.3, 0, 2), r = 0.25, height 1.
        for i in 0..40 {
            for j in 0..30 {
                let a = std::f64::consts::PI * (i as f64 / 39.0);
                let y = j as f64 / 29.0;
                pts.push([0.3 + 0.25 * a.cos(), y, 2.0 - 0.25 * a.sin()]);
            }
        }
        let fit = fit_3d_shape(&pts, "cylinder", &RansacParams::new(300, 2e-3, 5)).unwrap();
        let ShapeParams::Cylinder { axis_point, direction, radius, height } = fit.parameters else { panic!() };
        assert!((radius - 0.25).abs() < 0.25 * 0.02, "radius {radius}");
        assert!(direction[1] > 0.999, "direction {direction:?}");
        assert!((height - 1.0).abs() < 0.02);
        assert!((axis_point[0] - 0.3).abs() < 5e-3 && (axis_point[2] - 2.0).abs() < 5e-3);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let pts = sphere_points([0.0, 0.0, 1.0], 0.3, 300, true, 2);
        let p = RansacParams::new(80, 1e-3, 42);
        let a = fit_3d_shape(&pts, "sphere", &p).unwrap();
        let b = fit_3d_shape(&pts, "sphere", &p).unwrap();
        assert_eq!(a, b);
    }
}
