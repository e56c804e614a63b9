//! Host side of the toolbox channel: decodes calls from the child, runs
//! them against the Rust toolbox and physics runtime, encodes the replies.
//!
//! Arrays cross the boundary as raw little-endian files in the run's temp
//! directory, referenced as `{"__array__": {"file", "dtype", "shape"}}`.
//! `{"__input__": true}` stands for the scene's input image.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use worldprog_core::toolbox::physics::{BodyOptions, ObjectKind, PhysicsRuntime, SimObject, WorldKind};
use worldprog_core::toolbox::{
    fit_2d_shape, fit_3d_shape, generate_surface_mesh, predict_ground_plane, segment, MeshSpec, PrimitiveFit,
    RansacParams, ShapeParams,
};
use worldprog_core::{Mask, RgbImage};

use crate::perception::Toolbox;

type CallResult<T> = std::result::Result<T, String>;

/// Numeric array decoded from either an array file or nested JSON lists.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NdArray {
    fn rows3(&self, what: &str) -> CallResult<Vec<[f64; 3]>> {
        if self.data.is_empty() {
            return Ok(Vec::new());
        }
        if self.shape.last() != Some(&3) {
            return Err(format!("{what} must have shape (N, 3), got {:?}", self.shape));
        }
        Ok(self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

pub struct Session<'a> {
    dir: PathBuf,
    input: &'a RgbImage,
    toolbox: &'a Toolbox,
    physics: PhysicsRuntime,
    files: usize,
}

impl<'a> Session<'a> {
    pub fn new(dir: &Path, input: &'a RgbImage, toolbox: &'a Toolbox) -> Self {
        Self { dir: dir.to_path_buf(), input, toolbox, physics: PhysicsRuntime::new(), files: 0 }
    }

    pub fn handle(&mut self, op: &str, args: &Value) -> CallResult<Value> {
        let arg = |k: &str| args.get(k).unwrap_or(&Value::Null);
        match op {
            "segment" => {
                let image = self.image(arg("image"))?;
                let queries: Vec<String> = serde_json::from_value(arg("objects").clone())
                    .map_err(|_| "objects must be a list of strings".to_string())?;
                let found = segment(self.toolbox.segment.as_ref(), &image, &queries).map_err(|e| e.to_string())?;
                let mut out = Vec::with_capacity(found.len());
                for m in found {
                    out.push(match m {
                        None => Value::Null,
                        Some(m) => json!({
                            "query": m.query,
                            "mask": self.write_mask(&m.mask)?,
                            "bbox": [m.bbox.0, m.bbox.1, m.bbox.2, m.bbox.3],
                            "confidence": m.confidence,
                        }),
                    });
                }
                Ok(Value::Array(out))
            }
            "pts3d" => {
                let image = self.image(arg("image"))?;
                let pm = self.toolbox.geometry.pts3d(&image).map_err(|e| e.to_string())?;
                let flat: Vec<f64> = pm.points.iter().flatten().copied().collect();
                let valid = Mask { width: pm.width, height: pm.height, bits: pm.valid };
                Ok(json!({
                    "points": self.write_f64(&[pm.height, pm.width, 3], &flat)?,
                    "valid": self.write_mask(&valid)?,
                }))
            }
            "intrinsics" => {
                let image = self.image(arg("image"))?;
                let k = self.toolbox.geometry.intrinsics(&image).map_err(|e| e.to_string())?;
                serde_json::to_value(k).map_err(|e| e.to_string())
            }
            "predict_ground_plane" => {
                let pts = self.array(arg("points"))?.rows3("points")?;
                let fit = predict_ground_plane(&pts, &self.ransac(args)?).map_err(|e| e.to_string())?;
                Ok(json!({
                    "normal": fit.normal,
                    "offset": fit.offset,
                    "inliers": self.write_indices(&fit.inliers)?,
                    "inlier_ratio": fit.inlier_ratio,
                }))
            }
            "fit_3d_shape" => {
                let pts = self.array(arg("point_cloud"))?.rows3("point_cloud")?;
                let class = str_arg(args, "shape_class")?;
                let fit = fit_3d_shape(&pts, class, &self.ransac(args)?).map_err(|e| e.to_string())?;
                self.primitive(fit)
            }
            "fit_2d_shape" => {
                let m = self.array(arg("mask"))?;
                if m.shape.len() != 2 {
                    return Err(format!("mask must be 2-D, got shape {:?}", m.shape));
                }
                let mask = Mask {
                    width: m.shape[1],
                    height: m.shape[0],
                    bits: m.data.iter().map(|v| *v != 0.0).collect(),
                };
                let fit = fit_2d_shape(&mask, str_arg(args, "shape_class")?).map_err(|e| e.to_string())?;
                self.primitive(fit)
            }
            "generate_surface_mesh" => {
                let vertices = self.array(arg("vertices"))?.rows3("vertices")?;
                let indices = self.triangles(arg("indices"))?;
                let mass = num_arg(args, "mass", 0.0)?;
                let mesh = generate_surface_mesh(vertices, indices, mass).map_err(|e| e.to_string())?;
                serde_json::to_value(mesh).map_err(|e| e.to_string())
            }
            "create_world" => {
                let kind: WorldKind = match arg("kind") {
                    Value::Null => WorldKind::Rigid3d,
                    v => v.as_str().ok_or("kind must be a string")?.parse().map_err(|e: worldprog_core::Error| e.to_string())?,
                };
                let gravity = match arg("gravity") {
                    Value::Null => [0.0, -9.81, 0.0],
                    v => self.vec3(v, "gravity")?,
                };
                let ground = match arg("ground") {
                    Value::Null => None,
                    Value::Array(pair) if pair.len() == 2 => Some((
                        self.vec3(&pair[0], "ground normal")?,
                        pair[1].as_f64().ok_or("ground offset must be a number")?,
                    )),
                    _ => return Err("ground must be None or (normal, offset)".into()),
                };
                let id = self.physics.create_world(kind, gravity, ground).map_err(|e| e.to_string())?;
                Ok(json!(id))
            }
            "add_rigid_body" => {
                let world = id_arg(args, "world")?;
                let object = self.sim_object(arg("shape"))?;
                let opts = BodyOptions {
                    mass: num_arg(args, "mass", 1.0)?,
                    position: match arg("position") {
                        Value::Null => None,
                        v => Some(self.vec3(v, "position")?),
                    },
                    velocity: self.vec3_or(arg("velocity"), [0.0; 3], "velocity")?,
                    restitution: num_arg(args, "restitution", 0.5)?,
                };
                self.register(world, object, ObjectKind::Rigid, opts)
            }
            "add_soft_body" => {
                let world = id_arg(args, "world")?;
                let mesh = match self.sim_object(arg("mesh"))? {
                    m @ SimObject::Mesh(_) => m,
                    _ => return Err("add_soft_body needs a generate_surface_mesh result".into()),
                };
                let opts = BodyOptions {
                    mass: num_arg(args, "mass", 1.0)?,
                    velocity: self.vec3_or(arg("velocity"), [0.0; 3], "velocity")?,
                    ..BodyOptions::default()
                };
                self.register(world, mesh, ObjectKind::Soft, opts)
            }
            "add_particles" => {
                let world = id_arg(args, "world")?;
                let positions = self.array(arg("positions"))?.rows3("positions")?;
                let velocities = match arg("velocities") {
                    Value::Null => None,
                    v => Some(self.array(v)?.rows3("velocities")?),
                };
                let opts = BodyOptions { mass: num_arg(args, "mass", 1.0)?, ..BodyOptions::default() };
                self.register(world, SimObject::Particles { positions, velocities }, ObjectKind::Particles, opts)
            }
            "step_world" => {
                let world = id_arg(args, "world")?;
                let dt = num_arg(args, "dt", f64::NAN)?;
                self.physics.step_world(world, dt).map_err(|e| e.to_string())?;
                Ok(Value::Null)
            }
            "get_state" => {
                let world = id_arg(args, "world")?;
                let state = self.physics.get_state(world).map_err(|e| e.to_string())?;
                let mut out = Map::new();
                for (id, s) in state {
                    let n = s.positions.len();
                    let pos: Vec<f64> = s.positions.iter().flatten().copied().collect();
                    let vel: Vec<f64> = s.velocities.iter().flatten().copied().collect();
                    out.insert(
                        id.to_string(),
                        json!({
                            "kind": s.kind.to_string(),
                            "positions": self.write_f64(&[n, 3], &pos)?,
                            "velocities": self.write_f64(&[n, 3], &vel)?,
                        }),
                    );
                }
                Ok(Value::Object(out))
            }
            other => Err(format!("unknown toolbox operation {other:?}")),
        }
    }

    fn register(&mut self, world: u64, object: SimObject, kind: ObjectKind, opts: BodyOptions) -> CallResult<Value> {
        let id = self.physics.register_simulation_object(world, object, kind, opts).map_err(|e| e.to_string())?;
        Ok(json!(id))
    }

    fn ransac(&self, args: &Value) -> CallResult<RansacParams> {
        let mut p = self.toolbox.ransac.clone();
        if let Some(v) = args.get("iterations").filter(|v| !v.is_null()) {
            p.iterations = v.as_u64().filter(|n| *n > 0).ok_or("iterations must be a positive integer")? as usize;
        }
        if let Some(v) = args.get("inlier_threshold").filter(|v| !v.is_null()) {
            p.inlier_threshold = v.as_f64().ok_or("inlier_threshold must be a number")?;
        }
        Ok(p)
    }

    fn primitive(&mut self, fit: PrimitiveFit) -> CallResult<Value> {
        Ok(json!({
            "shape_class": fit.shape_class.as_str(),
            "parameters": serde_json::to_value(&fit.parameters).map_err(|e| e.to_string())?,
            "inliers": self.write_indices(&fit.inliers)?,
            "rms_residual": fit.rms_residual,
        }))
    }

    /// A shape dict from a fit, a bare parameter dict, or a mesh dict.
    fn sim_object(&self, v: &Value) -> CallResult<SimObject> {
        let obj = v.as_object().ok_or("shape must be a dict from a fitting or mesh call")?;
        if obj.contains_key("vertices") && obj.contains_key("indices") {
            let vertices = self.array(&obj["vertices"])?.rows3("vertices")?;
            let indices = self.triangles(&obj["indices"])?;
            let mass = obj.get("mass").and_then(Value::as_f64).unwrap_or(0.0);
            let dropped = obj.get("dropped").and_then(Value::as_u64).unwrap_or(0) as usize;
            return Ok(SimObject::Mesh(MeshSpec { vertices, indices, mass, dropped_triangles: dropped }));
        }
        let params = obj.get("parameters").unwrap_or(v);
        serde_json::from_value::<ShapeParams>(params.clone())
            .map(SimObject::Shape)
            .map_err(|e| format!("unrecognised shape: {e}"))
    }

    fn triangles(&self, v: &Value) -> CallResult<Vec<[usize; 3]>> {
        let a = self.array(v)?;
        if !a.data.is_empty() && a.shape.last() != Some(&3) {
            return Err(format!("indices must have shape (M, 3), got {:?}", a.shape));
        }
        a.data
            .chunks_exact(3)
            .map(|c| {
                let mut t = [0usize; 3];
                for (slot, x) in t.iter_mut().zip(c) {
                    if *x < 0.0 || x.fract() != 0.0 {
                        return Err(format!("vertex index {x} is not a non-negative integer"));
                    }
                    *slot = *x as usize;
                }
                Ok(t)
            })
            .collect()
    }

    fn vec3(&self, v: &Value, what: &str) -> CallResult<[f64; 3]> {
        let a = self.array(v)?;
        match a.data.as_slice() {
            [x, y, z] => Ok([*x, *y, *z]),
            _ => Err(format!("{what} must have 3 components")),
        }
    }

    fn vec3_or(&self, v: &Value, default: [f64; 3], what: &str) -> CallResult<[f64; 3]> {
        if v.is_null() {
            Ok(default)
        } else {
            self.vec3(v, what)
        }
    }

    fn image(&self, v: &Value) -> CallResult<RgbImage> {
        if v.get("__input__").and_then(Value::as_bool) == Some(true) {
            return Ok(self.input.clone());
        }
        let a = self.array(v)?;
        match a.shape.as_slice() {
            [h, w, 3] => {
                let data = a.data.iter().map(|x| x.clamp(0.0, 255.0).round() as u8).collect();
                RgbImage::from_raw(*w, *h, data).map_err(|e| e.to_string())
            }
            s => Err(format!("image must have shape (H, W, 3), got {s:?}")),
        }
    }

    /// Decodes an array reference, a nested list, or a bare number.
    pub fn array(&self, v: &Value) -> CallResult<NdArray> {
        if let Some(spec) = v.get("__array__") {
            return self.read_array(spec);
        }
        let mut shape = Vec::new();
        let mut probe = v;
        while let Value::Array(items) = probe {
            shape.push(items.len());
            match items.first() {
                Some(first) => probe = first,
                None => break,
            }
        }
        let mut data = Vec::new();
        flatten(v, &mut data)?;
        if data.len() != shape.iter().product::<usize>() {
            return Err("ragged nested list".into());
        }
        Ok(NdArray { shape, data })
    }

    fn read_array(&self, spec: &Value) -> CallResult<NdArray> {
        let file = spec["file"].as_str().ok_or("array reference without file")?;
        if file.contains("..") || Path::new(file).is_absolute() {
            return Err(format!("array file {file:?} escapes the run directory"));
        }
        let shape: Vec<usize> =
            serde_json::from_value(spec["shape"].clone()).map_err(|_| "array reference without shape".to_string())?;
        let bytes = std::fs::read(self.dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match spec["dtype"].as_str() {
            Some("bool") | Some("uint8") => bytes.iter().map(|b| *b as f64).collect(),
            Some("int64") => bytes.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            Some("float64") => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            other => return Err(format!("unsupported dtype {other:?}")),
        };
        if data.len() != n {
            return Err(format!("array file {file} holds {} values, shape {shape:?} needs {n}", data.len()));
        }
        Ok(NdArray { shape, data })
    }

    fn write_file(&mut self, dtype: &str, shape: &[usize], bytes: Vec<u8>) -> CallResult<Value> {
        self.files += 1;
        let rel = format!("rpc/h{:05}.bin", self.files);
        std::fs::create_dir_all(self.dir.join("rpc")).map_err(|e| e.to_string())?;
        std::fs::write(self.dir.join(&rel), bytes).map_err(|e| e.to_string())?;
        Ok(json!({ "__array__": { "file": rel, "dtype": dtype, "shape": shape } }))
    }

    fn write_f64(&mut self, shape: &[usize], data: &[f64]) -> CallResult<Value> {
        self.write_file("float64", shape, data.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    fn write_mask(&mut self, m: &Mask) -> CallResult<Value> {
        self.write_file("bool", &[m.height, m.width], m.bits.iter().map(|b| *b as u8).collect())
    }

    fn write_indices(&mut self, idx: &[usize]) -> CallResult<Value> {
        self.write_file("int64", &[idx.len()], idx.iter().flat_map(|v| (*v as i64).to_le_bytes()).collect())
    }
}

fn flatten(v: &Value, out: &mut Vec<f64>) -> CallResult<()> {
    match v {
        Value::Array(items) => items.iter().try_for_each(|i| flatten(i, out)),
        Value::Number(n) => {
            out.push(n.as_f64().ok_or("number out of range")?);
            Ok(())
        }
        Value::Bool(b) => {
            out.push(*b as u8 as f64);
            Ok(())
        }
        other => Err(format!("expected numbers, found {other}")),
    }
}

fn str_arg<'v>(args: &'v Value, key: &str) -> CallResult<&'v str> {
    args.get(key).and_then(Value::as_str).ok_or_else(|| format!("{key} must be a string"))
}

fn num_arg(args: &Value, key: &str, default: f64) -> CallResult<f64> {
    match args.get(key).filter(|v| !v.is_null()) {
        Some(v) => v.as_f64().ok_or_else(|| format!("{key} must be a number")),
        None if default.is_nan() => Err(format!("{key} is required")),
        None => Ok(default),
    }
}

fn id_arg(args: &Value, key: &str) -> CallResult<u64> {
    args.get(key).and_then(Value::as_u64).ok_or_else(|| format!("{key} must be an id returned by the toolbox"))
}
