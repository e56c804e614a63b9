//! Perception and geometry toolbox exposed to world programs.
//!
//! Geometric fitting, meshes and the physics runtime are implemented here.
//! Segmentation and point-map estimation wrap external models, so they sit
//! behind [`SegmentBackend`] and [`GeometryBackend`]; [`synthetic`] provides
//! label-map fixtures with known geometry for offline runs.

pub mod fit2d;
pub mod fit3d;
pub mod geom;
pub mod mesh;
pub mod physics;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Mask, Result, RgbImage};

pub use fit2d::fit_2d_shape;
pub use fit3d::{fit_3d_shape, predict_ground_plane, RansacParams};
pub use mesh::{generate_surface_mesh, MeshSpec};

/// Every operation reachable through the program-facing `api` object.
pub const API_OPERATIONS: [&str; 13] = [
    "segment",
    "pts3d",
    "intrinsics",
    "predict_ground_plane",
    "fit_3d_shape",
    "fit_2d_shape",
    "generate_surface_mesh",
    "create_world",
    "add_rigid_body",
    "add_soft_body",
    "add_particles",
    "step_world",
    "get_state",
];

/// Minimum inlier fraction for a fit to be returned.
pub const DEFAULT_MIN_INLIER_RATIO: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMask {
    pub query: String,
    pub mask: Mask,
    /// `(x0, y0, x1, y1)` inclusive pixel bounds.
    pub bbox: (usize, usize, usize, usize),
    pub confidence: f64,
}

impl SegmentMask {
    /// `None` for an empty mask.
    pub fn from_mask(query: &str, mask: Mask, confidence: f64) -> Option<Self> {
        let bbox = mask.bbox()?;
        Some(Self { query: query.to_string(), mask, bbox, confidence: confidence.clamp(0.0, 1.0) })
    }
}

/// Dense per-pixel 3-D points in the camera frame (x right, y up, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMap {
    pub width: usize,
    pub height: usize,
    pub points: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl PointMap {
    pub fn valid_points(&self) -> Vec<[f64; 3]> {
        self.points.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(p, _)| *p).collect()
    }

    /// Valid points under a mask.
    pub fn masked_points(&self, mask: &Mask) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .zip(&self.valid)
            .zip(&mask.bits)
            .filter(|((_, v), m)| **v && **m)
            .map(|((p, _), _)| *p)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self { fx: focal, fy: focal, cx: width as f64 / 2.0, cy: height as f64 / 2.0 }
    }
}

/// Plane `normal · x = offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inliers: Vec<usize>,
    pub inlier_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Cuboid,
    Sphere,
    Cylinder,
    Disk,
    Polygon,
}

impl ShapeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeClass::Cuboid => "cuboid",
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Disk => "disk",
            ShapeClass::Polygon => "polygon",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "cuboid" | "box" | "cube" => ShapeClass::Cuboid,
            "sphere" | "ball" => ShapeClass::Sphere,
            "cylinder" => ShapeClass::Cylinder,
            "disk" | "disc" | "circle" => ShapeClass::Disk,
            "polygon" => ShapeClass::Polygon,
            _ => return Err(Error::UnknownShape(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum ShapeParams {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Cuboid {
        center: [f64; 3],
        half_extents: [f64; 3],
        /// Columns are the box axes in camera coordinates.
        rotation: [[f64; 3]; 3],
    },
    Cylinder {
        axis_point: [f64; 3],
        direction: [f64; 3],
        radius: f64,
        height: f64,
    },
    Disk {
        center: [f64; 2],
        radius: f64,
    },
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
}

impl ShapeParams {
    /// Radius of a sphere enclosing the shape, used by the physics runtime.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            ShapeParams::Sphere { radius, .. } | ShapeParams::Disk { radius, .. } => *radius,
            ShapeParams::Cuboid { half_extents: h, .. } => (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt(),
            ShapeParams::Cylinder { radius, height, .. } => (radius * radius + height * height / 4.0).sqrt(),
            ShapeParams::Polygon { vertices } => {
                let n = vertices.len().max(1) as f64;
                let c = vertices.iter().fold([0.0, 0.0], |a, v| [a[0] + v[0] / n, a[1] + v[1] / n]);
                vertices.iter().map(|v| (v[0] - c[0]).hypot(v[1] - c[1])).fold(0.0, f64::max)
            }
        }
    }

    /// Geometric centre, lifted to 3-D (z = 0 for planar shapes).
    pub fn center(&self) -> [f64; 3] {
        match self {
            ShapeParams::Sphere { center, .. } | ShapeParams::Cuboid { center, .. } => *center,
            ShapeParams::Cylinder { axis_point, .. } => *axis_point,
            ShapeParams::Disk { center, .. } => [center[0], center[1], 0.0],
            ShapeParams::Polygon { vertices } => {
                let n = vertices.len().max(1) as f64;
                let c = vertices.iter().fold([0.0, 0.0], |a, v| [a[0] + v[0] / n, a[1] + v[1] / n]);
                [c[0], c[1], 0.0]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveFit {
    pub shape_class: ShapeClass,
    pub parameters: ShapeParams,
    pub inliers: Vec<usize>,
    pub rms_residual: f64,
}

pub trait SegmentBackend: Send + Sync {
    fn name(&self) -> &str;

    /// One entry per query, in query order; `None` when the object is not found.
    fn segment(&self, image: &RgbImage, queries: &[String]) -> Result<Vec<Option<SegmentMask>>>;
}

pub trait GeometryBackend: Send + Sync {
    fn name(&self) -> &str;
    fn pts3d(&self, image: &RgbImage) -> Result<PointMap>;
    fn intrinsics(&self, image: &RgbImage) -> Result<CameraIntrinsics>;
}

pub fn segment(backend: &dyn SegmentBackend, image: &RgbImage, queries: &[String]) -> Result<Vec<Option<SegmentMask>>> {
    if queries.is_empty() {
        return Err(Error::InvalidInput("segment needs at least one query".into()));
    }
    let out = backend.segment(image, queries)?;
    if out.len() != queries.len() {
        return Err(Error::BackendUnavailable {
            backend: backend.name().to_string(),
            reason: format!("returned {} results for {} queries", out.len(), queries.len()),
        });
    }
    Ok(out)
}
