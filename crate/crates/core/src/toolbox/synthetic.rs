//! Offline perception backend driven by labelled fixtures with known geometry.
//!
//! A fixture pairs a label map (one colour per object) with a legend naming
//! each colour and describing the scene geometry analytically. Segmentation
//! reads the label map; point maps are ray-cast through the fixture's camera.

use serde::{Deserialize, Serialize};

use super::geom::{arr, v3, Vec3};
use super::{CameraIntrinsics, GeometryBackend, PointMap, SegmentBackend, SegmentMask};
use crate::metrics::resize_nearest;
use crate::{Error, Mask, Result, RgbImage};

pub const DEFAULT_FOCAL: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Surface {
    /// `normal · x = offset`.
    Plane { normal: [f64; 3], offset: f64 },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Surface {
    /// Smallest positive ray parameter along `dir` from the camera centre.
    fn hit(&self, dir: &Vec3) -> Option<f64> {
        match self {
            Surface::Plane { normal, offset } => {
                let n = v3(normal);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = offset / denom;
                (t > 0.0).then_some(t)
            }
            Surface::Sphere { center, radius } => {
                let c = v3(center);
                let a = dir.norm_squared();
                let b = -2.0 * dir.dot(&c);
                let k = c.norm_squared() - radius * radius;
                let disc = b * b - 4.0 * a * k;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)].into_iter().find(|t| *t > 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub name: String,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Legend {
    pub labels: Vec<LabelEntry>,
    #[serde(default)]
    pub surfaces: Vec<Surface>,
    #[serde(default)]
    pub focal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFixture {
    pub label_map: RgbImage,
    pub legend: Legend,
}

impl SyntheticFixture {
    pub fn new(label_map: RgbImage, legend: Legend) -> Result<Self> {
        if let Some(f) = legend.focal {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidInput(format!("focal length {f} must be positive")));
            }
        }
        Ok(Self { label_map, legend })
    }

    fn focal(&self) -> f64 {
        self.legend.focal.unwrap_or(DEFAULT_FOCAL)
    }

    /// Label entry answering a query: exact name first, then word containment.
    fn lookup(&self, query: &str) -> Option<&LabelEntry> {
        let q = query.trim().to_ascii_lowercase();
        let labels = &self.legend.labels;
        labels.iter().find(|l| l.name.eq_ignore_ascii_case(&q)).or_else(|| {
            labels.iter().find(|l| {
                let name = l.name.to_ascii_lowercase();
                q.split(|c: char| !c.is_alphanumeric()).any(|w| w == name)
                    || name.split(|c: char| !c.is_alphanumeric()).any(|w| w == q)
            })
        })
    }

    pub fn mask_for(&self, query: &str, width: usize, height: usize) -> Option<Mask> {
        let entry = self.lookup(query)?;
        let labels = if self.label_map.dims() == (width, height) {
            self.label_map.clone()
        } else {
            resize_nearest(&self.label_map, width, height)
        };
        let m = Mask::from_fn(width, height, |x, y| labels.get(x, y) == entry.color);
        (!m.is_empty()).then_some(m)
    }

    /// Red ball resting on a ground plane in front of a back wall.
    pub fn ball_on_ground(width: usize, height: usize) -> Self {
        let focal = 0.9 * width as f64;
        let surfaces = vec![
            Surface::Sphere { center: [0.0, -0.5, 4.0], radius: 0.5 },
            Surface::Plane { normal: [0.0, 1.0, 0.0], offset: -1.0 },
            Surface::Plane { normal: [0.0, 0.0, 1.0], offset: 10.0 },
        ];
        let legend = Legend {
            labels: vec![
                LabelEntry { name: "ball".into(), color: [255, 0, 0] },
                LabelEntry { name: "ground".into(), color: [0, 160, 0] },
                LabelEntry { name: "wall".into(), color: [200, 200, 200] },
            ],
            surfaces,
            focal: Some(focal),
        };
        let mut fx = Self { label_map: RgbImage::new(width, height), legend };
        let pm = fx.point_map(width, height);
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                let color = match fx.surface_index(width, height, x, y) {
                    Some(k) if pm.valid[i] => fx.legend.labels[k.min(2)].color,
                    _ => [0, 0, 0],
                };
                fx.label_map.put(x, y, color);
            }
        }
        fx
    }

    pub fn intrinsics_for(&self, width: usize, height: usize) -> CameraIntrinsics {
        CameraIntrinsics::centered(width, height, self.focal())
    }

    fn ray(&self, width: usize, height: usize, x: usize, y: usize) -> Vec3 {
        let k = self.intrinsics_for(width, height);
        Vec3::new((x as f64 - k.cx) / k.fx, -(y as f64 - k.cy) / k.fy, 1.0)
    }

    fn surface_index(&self, width: usize, height: usize, x: usize, y: usize) -> Option<usize> {
        let d = self.ray(width, height, x, y);
        self.legend
            .surfaces
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.hit(&d).map(|t| (i, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    /// Ray-casts the analytic surfaces; pixels that hit nothing are invalid.
    pub fn point_map(&self, width: usize, height: usize) -> PointMap {
        let mut points = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let d = self.ray(width, height, x, y);
                let t = self.legend.surfaces.iter().filter_map(|s| s.hit(&d)).min_by(f64::total_cmp);
                match t {
                    Some(t) => {
                        points.push(arr(&(d * t)));
                        valid.push(true);
                    }
                    None => {
                        points.push([0.0; 3]);
                        valid.push(false);
                    }
                }
            }
        }
        PointMap { width, height, points, valid }
    }
}

/// Backend over an optional fixture. Without one, nothing is ever found and
/// point maps are empty, which consumers must tolerate.
#[derive(Debug, Clone, Default)]
pub struct SyntheticBackend {
    pub fixture: Option<SyntheticFixture>,
}

impl SyntheticBackend {
    pub fn new(fixture: SyntheticFixture) -> Self {
        Self { fixture: Some(fixture) }
    }

    pub fn empty() -> Self {
        Self::default()
    }
}

impl SegmentBackend for SyntheticBackend {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn segment(&self, image: &RgbImage, queries: &[String]) -> Result<Vec<Option<SegmentMask>>> {
        let (w, h) = image.dims();
        Ok(queries
            .iter()
            .map(|q| {
                let m = self.fixture.as_ref()?.mask_for(q, w, h)?;
                SegmentMask::from_mask(q, m, 1.0)
            })
            .collect())
    }
}

impl GeometryBackend for SyntheticBackend {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn pts3d(&self, image: &RgbImage) -> Result<PointMap> {
        let (w, h) = image.dims();
        Ok(match &self.fixture {
            Some(f) => f.point_map(w, h),
            None => PointMap { width: w, height: h, points: vec![[0.0; 3]; w * h], valid: vec![false; w * h] },
        })
    }

    fn intrinsics(&self, image: &RgbImage) -> Result<CameraIntrinsics> {
        let (w, h) = image.dims();
        Ok(match &self.fixture {
            Some(f) => f.intrinsics_for(w, h),
            None => CameraIntrinsics::centered(w, h, DEFAULT_FOCAL),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::mask_iou;
    use crate::toolbox::segment;

    fn disk_fixture() -> (SyntheticFixture, Mask) {
        let truth = Mask::from_fn(64, 48, |x, y| (x as f64 - 30.0).hypot(y as f64 - 20.0) <= 10.0);
        let mut img = RgbImage::filled(64, 48, [0, 0, 255]);
        for y in 0..48 {
            for x in 0..64 {
                if truth.get(x, y) {
                    img.put(x, y, [255, 0, 0]);
                }
            }
        }
        let legend = Legend {
            labels: vec![
                LabelEntry { name: "ball".into(), color: [255, 0, 0] },
                LabelEntry { name: "sky".into(), color: [0, 0, 255] },
            ],
            surfaces: vec![],
            focal: None,
        };
        (SyntheticFixture::new(img, legend).unwrap(), truth)
    }

    #[test]
    fn segments_from_labels_in_query_order() {
        let (fx, truth) = disk_fixture();
        let b = SyntheticBackend::new(fx);
        let img = RgbImage::new(64, 48);
        let out = segment(&b, &img, &["red ball".into(), "dog".into(), "sky".into()]).unwrap();
        assert_eq!(out.len(), 3);
        assert!(mask_iou(&out[0].as_ref().unwrap().mask, &truth) >= 0.99);
        assert!(out[1].is_none());
        assert_eq!(out[2].as_ref().unwrap().query, "sky");
    }

    #[test]
    fn fronto_parallel_plane_at_depth_two() {
        let legend = Legend {
            labels: vec![],
            surfaces: vec![Surface::Plane { normal: [0.0, 0.0, 1.0], offset: 2.0 }],
            focal: Some(500.0),
        };
        let fx = SyntheticFixture::new(RgbImage::new(40, 30), legend).unwrap();
        let pm = SyntheticBackend::new(fx).pts3d(&RgbImage::new(40, 30)).unwrap();
        assert!(pm.valid.iter().all(|v| *v));
        assert!(pm.points.iter().all(|p| (p[2] - 2.0).abs() <= 1e-6));
    }

    #[test]
    fn sphere_points_on_surface() {
        let legend = Legend {
            labels: vec![],
            surfaces: vec![Surface::Sphere { center: [0.1, 0.0, 3.0], radius: 0.4 }],
            focal: Some(500.0),
        };
        let fx = SyntheticFixture::new(RgbImage::new(80, 60), legend).unwrap();
        let pm = fx.point_map(80, 60);
        let pts = pm.valid_points();
        assert!(pts.len() > 100);
        for p in pts {
            let r = (v3(&p) - Vec3::new(0.1, 0.0, 3.0)).norm();
            assert!((r - 0.4).abs() <= 1e-6);
        }
    }

    #[test]
    fn intrinsics_exact() {
        let (fx, _) = disk_fixture();
        let b = SyntheticBackend::new(fx);
        let k = b.intrinsics(&RgbImage::new(64, 48)).unwrap();
        assert_eq!(k, CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 32.0, cy: 24.0 });
        assert_ne!(k.cx, k.cy);
    }

    #[test]
    fn ball_fixture_has_all_labels() {
        let fx = SyntheticFixture::ball_on_ground(128, 96);
        for q in ["ball", "ground", "wall"] {
            assert!(fx.mask_for(q, 128, 96).is_some(), "{q}");
        }
    }
}
