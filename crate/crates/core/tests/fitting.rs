use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldprog_core::toolbox::{fit_2d_shape, fit_3d_shape, predict_ground_plane, RansacParams, ShapeParams};
use worldprog_core::Mask;

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// 700 noisy points on a random plane through the unit cube plus 300 uniform outliers.
fn plane_cloud(seed: u64) -> (Vec<[f64; 3]>, Vector3<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = unit(&mut rng);
    let u = n.cross(&if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() }).normalize();
    let w = n.cross(&u);
    let mut pts = Vec::new();
    for _ in 0..700 {
        let p = u * rng.gen_range(-1.0..1.0) + w * rng.gen_range(-1.0..1.0) + n * rng.gen_range(-0.003..0.003);
        pts.push([p.x, p.y, p.z]);
    }
    for _ in 0..300 {
        pts.push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
    }
    (pts, n)
}

#[test]
fn plane_with_outliers_recovered_over_100_seeds() {
    let mut ok = 0;
    for seed in 0..100 {
        let (pts, truth) = plane_cloud(seed);
        let fit = predict_ground_plane(&pts, &RansacParams::new(500, 0.01, seed)).unwrap();
        let n = Vector3::from(fit.normal);
        assert!((n.norm() - 1.0).abs() <= 1e-9);
        let angle = n.dot(&truth).abs().min(1.0).acos().to_degrees();
        if angle <= 2.0 {
            ok += 1;
        }
        assert!(fit.normal[1] >= 0.0);
        assert_eq!(fit.inlier_ratio, fit.inliers.len() as f64 / pts.len() as f64);
    }
    assert!(ok >= 99, "{ok}/100 seeds within 2 degrees");
}

/// Independent algebraic least-squares sphere: solves for (c, k) in |p|² = 2c·p + k.
fn sphere_oracle(pts: &[[f64; 3]]) -> ([f64; 3], f64) {
    let a = nalgebra::DMatrix::from_fn(pts.len(), 4, |i, j| if j < 3 { 2.0 * pts[i][j] } else { 1.0 });
    let b = nalgebra::DVector::from_fn(pts.len(), |i, _| pts[i].iter().map(|v| v * v).sum());
    let x = a.svd(true, true).solve(&b, 1e-14).unwrap();
    let c = [x[0], x[1], x[2]];
    (c, (x[3] + c.iter().map(|v| v * v).sum::<f64>()).sqrt())
}

fn hemisphere(seed: u64, noise: f64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..800)
        .map(|_| {
            let z: f64 = rng.gen_range(0.0..1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            let r = 0.5 + rng.gen_range(-noise..=noise);
            [1.0 + r * s * phi.cos(), 2.0 + r * s * phi.sin(), 3.0 - r * z]
        })
        .collect()
}

#[test]
fn hemisphere_radius_within_two_percent() {
    for seed in 0..10 {
        let pts = hemisphere(seed, 0.002);
        let fit = fit_3d_shape(&pts, "sphere", &RansacParams::new(500, 0.01, seed)).unwrap();
        let ShapeParams::Sphere { radius, center } = fit.parameters else { panic!() };
        let (oc, or) = sphere_oracle(&pts);
        assert!((radius - 0.5).abs() <= 0.01, "seed {seed}: r = {radius}");
        assert!((radius - or).abs() <= 0.01, "seed {seed}: r = {radius}, oracle {or}");
        for k in 0..3 {
            assert!((center[k] - oc[k]).abs() <= 0.01);
        }
    }
}

/// Points on three visible faces (front, top, left) of a box rotated by `yaw` about y.
fn box_faces(half: [f64; 3], center: [f64; 3], yaw: f64, step: f64) -> Vec<[f64; 3]> {
    let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
    let c = Vector3::from(center);
    let mut pts = Vec::new();
    let grid = |lo: f64, hi: f64| {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(move |i| lo + (hi - lo) * i as f64 / n as f64)
    };
    for a in grid(-half[0], half[0]) {
        for b in grid(-half[1], half[1]) {
            pts.push(Vector3::new(a, b, -half[2]));
        }
    }
    for a in grid(-half[0], half[0]) {
        for b in grid(-half[2], half[2]) {
            pts.push(Vector3::new(a, half[1], b));
        }
    }
    for a in grid(-half[1], half[1]) {
        for b in grid(-half[2], half[2]) {
            pts.push(Vector3::new(-half[0], a, b));
        }
    }
    pts.into_iter().map(|p| rot * p + c).map(|p| [p.x, p.y, p.z]).collect()
}

/// Exhaustive search over yaw (0.5° grid) for the minimum-volume box; returns sorted half-extents.
fn cuboid_oracle(pts: &[[f64; 3]]) -> [f64; 3] {
    let mut best = (f64::INFINITY, [0.0; 3]);
    for k in 0..180 {
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), -(k as f64 * 0.5).to_radians());
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in pts {
            let q = rot * Vector3::from(*p);
            lo = lo.inf(&q);
            hi = hi.sup(&q);
        }
        let e = (hi - lo) / 2.0;
        let vol = e.x * e.y * e.z;
        if vol < best.0 {
            best = (vol, [e.x, e.y, e.z]);
        }
    }
    let mut h = best.1;
    h.sort_by(f64::total_cmp);
    h
}

#[test]
fn cuboid_from_three_faces() {
    for (yaw, seed) in [(0.0f64, 1u64), (30.0, 2), (63.0, 3)] {
        let half = [0.3, 0.2, 0.15];
        let pts = box_faces(half, [0.1, -0.2, 2.0], yaw.to_radians(), 0.01);
        let fit = fit_3d_shape(&pts, "cuboid", &RansacParams::new(300, 0.005, seed)).unwrap();
        let ShapeParams::Cuboid { half_extents, center, .. } = fit.parameters else { panic!() };
        let mut got = half_extents;
        got.sort_by(f64::total_cmp);
        let oracle = cuboid_oracle(&pts);
        let mut truth = half;
        truth.sort_by(f64::total_cmp);
        for k in 0..3 {
            assert!((got[k] - truth[k]).abs() <= 0.03 * truth[k], "yaw {yaw}: {got:?} vs {truth:?}");
            assert!((got[k] - oracle[k]).abs() <= 0.03 * oracle[k], "yaw {yaw}: {got:?} vs oracle {oracle:?}");
        }
        assert!((center[0] - 0.1).abs() < 0.01 && (center[1] + 0.2).abs() < 0.01 && (center[2] - 2.0).abs() < 0.01);
        assert!(fit.rms_residual <= 0.005);
    }
}

#[test]
fn fits_are_bit_reproducible() {
    let (pts, _) = plane_cloud(7);
    let p = RansacParams::new(200, 0.01, 99);
    assert_eq!(predict_ground_plane(&pts, &p).unwrap(), predict_ground_plane(&pts, &p).unwrap());
    let pts = box_faces([0.3, 0.2, 0.15], [0.0, 0.0, 2.0], 0.4, 0.02);
    let p = RansacParams::new(100, 0.005, 5);
    assert_eq!(fit_3d_shape(&pts, "cuboid", &p).unwrap(), fit_3d_shape(&pts, "cuboid", &p).unwrap());
    let pts = hemisphere(3, 0.002);
    assert_eq!(fit_3d_shape(&pts, "cylinder", &p).is_ok(), fit_3d_shape(&pts, "cylinder", &p).is_ok());
}

fn raster_disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> Mask {
    Mask::from_fn(w, h, |x, y| (x as f64 - cx).hypot(y as f64 - cy) <= r)
}

/// Integer centre and 0.01 px radius minimising the pixel disagreement with `mask`.
fn disk_oracle(mask: &Mask, near: (i64, i64)) -> f64 {
    let band: Vec<(usize, usize)> = (0..mask.height)
        .flat_map(|y| (0..mask.width).map(move |x| (x, y)))
        .filter(|&(x, y)| ((x as f64 - near.0 as f64).hypot(y as f64 - near.1 as f64) - 50.0).abs() < 5.0)
        .collect();
    let mut best = (usize::MAX, 0.0);
    for cx in near.0 - 2..=near.0 + 2 {
        for cy in near.1 - 2..=near.1 + 2 {
            for k in 0..=400 {
                let r = 48.0 + k as f64 * 0.01;
                let miss = band
                    .iter()
                    .filter(|&&(x, y)| ((x as f64 - cx as f64).hypot(y as f64 - cy as f64) <= r) != mask.get(x, y))
                    .count();
                if miss < best.0 {
                    best = (miss, r);
                }
            }
        }
    }
    best.1
}

#[test]
fn rasterized_disk_radius() {
    let mask = raster_disk(200, 200, 100.0, 100.0, 50.0);
    let fit = fit_2d_shape(&mask, "disk").unwrap();
    let ShapeParams::Disk { radius, center } = fit.parameters else { panic!() };
    let oracle = disk_oracle(&mask, (100, 100));
    assert!((radius - 50.0).abs() <= 0.5, "{radius}");
    assert!((radius - oracle).abs() <= 0.5, "{radius} vs oracle {oracle}");
    assert!((center[0] - 100.0).abs() < 0.1 && (center[1] - 100.0).abs() < 0.1);

    let off = raster_disk(200, 200, 100.37, 99.81, 50.0);
    let ShapeParams::Disk { radius, .. } = fit_2d_shape(&off, "disk").unwrap().parameters else { panic!() };
    assert!((radius - 50.0).abs() <= 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scale_equivariance(s in 0.1f64..10.0, seed in 0u64..1000) {
        let pts = hemisphere(seed, 0.0);
        let scaled: Vec<[f64; 3]> = pts.iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect();
        let base = fit_3d_shape(&pts, "sphere", &RansacParams::new(50, 1e-3, seed)).unwrap();
        let big = fit_3d_shape(&scaled, "sphere", &RansacParams::new(50, 1e-3 * s, seed)).unwrap();
        let (ShapeParams::Sphere { radius: r0, .. }, ShapeParams::Sphere { radius: r1, .. }) = (base.parameters, big.parameters) else {
            panic!()
        };
        prop_assert!((r1 - s * r0).abs() <= 1e-6 * s * r0);

        let (plane, _) = plane_cloud(seed);
        let scaled: Vec<[f64; 3]> = plane.iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect();
        let a = predict_ground_plane(&plane, &RansacParams::new(100, 0.01, seed)).unwrap();
        let b = predict_ground_plane(&scaled, &RansacParams::new(100, 0.01 * s, seed)).unwrap();
        prop_assert!((b.offset - s * a.offset).abs() <= 1e-6 * (1.0 + s * a.offset.abs()));
        for k in 0..3 {
            prop_assert!((a.normal[k] - b.normal[k]).abs() <= 1e-6);
        }
    }

    #[test]
    fn residual_within_threshold(seed in 0u64..10_000, noise in 0.0f64..0.01, thr in 0.002f64..0.02) {
        let pts = hemisphere(seed, noise);
        if let Ok(fit) = fit_3d_shape(&pts, "sphere", &RansacParams::new(100, thr, seed)) {
            prop_assert!(fit.rms_residual <= thr);
        }
        let (plane, _) = plane_cloud(seed);
        let fit = predict_ground_plane(&plane, &RansacParams::new(100, thr, seed)).unwrap();
        let n = Vector3::from(fit.normal);
        let rms = (fit.inliers.iter().map(|&i| (n.dot(&Vector3::from(plane[i])) - fit.offset).powi(2)).sum::<f64>()
            / fit.inliers.len() as f64).sqrt();
        prop_assert!(rms <= thr);
    }
}
