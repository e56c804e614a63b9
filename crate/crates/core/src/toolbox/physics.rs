//! Minimal physics runtime behind the simulation interface.
//!
//! Rigid bodies are bounding spheres, particles are point masses and soft
//! bodies are mass-spring networks over mesh edges. Integration is
//! semi-implicit Euler with fixed substeps, colliding against an optional
//! ground plane.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::geom::{arr, v3, Vec3};
use super::{MeshSpec, ShapeParams};
use crate::{Error, Result};

pub const SOFT_STIFFNESS: f64 = 500.0;
pub const SOFT_DAMPING: f64 = 2.0;
pub const MAX_SUBSTEP: f64 = 1.0 / 240.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorldKind {
    Rigid2d,
    Rigid3d,
}

impl FromStr for WorldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rigid2d" | "2d" => Ok(WorldKind::Rigid2d),
            "rigid3d" | "3d" => Ok(WorldKind::Rigid3d),
            _ => Err(Error::UnsupportedKind(format!("world kind {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Rigid,
    Soft,
    Particles,
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectKind::Rigid => "rigid",
            ObjectKind::Soft => "soft",
            ObjectKind::Particles => "particles",
        })
    }
}

/// What gets registered into a world.
#[derive(Debug, Clone, PartialEq)]
pub enum SimObject {
    Shape(ShapeParams),
    Mesh(MeshSpec),
    Particles { positions: Vec<[f64; 3]>, velocities: Option<Vec<[f64; 3]>> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyOptions {
    pub mass: f64,
    /// Overrides the object's own centre.
    pub position: Option<[f64; 3]>,
    pub velocity: [f64; 3],
    pub restitution: f64,
}

impl Default for BodyOptions {
    fn default() -> Self {
        Self { mass: 1.0, position: None, velocity: [0.0; 3], restitution: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub kind: ObjectKind,
    pub positions: Vec<[f64; 3]>,
    pub velocities: Vec<[f64; 3]>,
}

#[derive(Debug, Clone)]
struct Body {
    kind: ObjectKind,
    pos: Vec<Vec3>,
    vel: Vec<Vec3>,
    inv_mass: f64,
    radius: f64,
    restitution: f64,
    springs: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub kind: WorldKind,
    gravity: Vec3,
    ground: Option<(Vec3, f64)>,
    bodies: BTreeMap<u64, Body>,
    pub time: f64,
}

impl World {
    pub fn new(kind: WorldKind, gravity: [f64; 3], ground: Option<([f64; 3], f64)>) -> Result<Self> {
        let ground = match ground {
            Some((n, d)) => {
                let n = v3(&n);
                let len = n.norm();
                if !(len > 0.0 && len.is_finite()) {
                    return Err(Error::InvalidInput("ground normal must be non-zero".into()));
                }
                Some((n / len, d / len))
            }
            None => None,
        };
        let mut g = v3(&gravity);
        if kind == WorldKind::Rigid2d {
            g.z = 0.0;
        }
        Ok(Self { kind, gravity: g, ground, bodies: BTreeMap::new(), time: 0.0 })
    }

    fn flatten(&self, mut v: Vec3) -> Vec3 {
        if self.kind == WorldKind::Rigid2d {
            v.z = 0.0;
        }
        v
    }

    fn insert(&mut self, id: u64, object: SimObject, kind: ObjectKind, opts: BodyOptions) -> Result<()> {
        if !(opts.mass >= 0.0 && opts.mass.is_finite()) {
            return Err(Error::InvalidInput(format!("mass {} must be finite and ≥ 0", opts.mass)));
        }
        let inv = |m: f64, n: usize| if m == 0.0 { 0.0 } else { n as f64 / m };
        let vel0 = self.flatten(v3(&opts.velocity));
        let body = match (kind, object) {
            (ObjectKind::Soft, _) if self.kind == WorldKind::Rigid2d => {
                return Err(Error::UnsupportedKind("soft bodies need a rigid3d world".into()))
            }
            (ObjectKind::Rigid, SimObject::Shape(shape)) => {
                let c = opts.position.map_or_else(|| v3(&shape.center()), |p| v3(&p));
                Body {
                    kind,
                    pos: vec![self.flatten(c)],
                    vel: vec![vel0],
                    inv_mass: inv(opts.mass, 1),
                    radius: shape.bounding_radius(),
                    restitution: opts.restitution,
                    springs: Vec::new(),
                }
            }
            (ObjectKind::Rigid, SimObject::Mesh(mesh)) => {
                if mesh.vertices.is_empty() {
                    return Err(Error::InvalidInput("mesh has no vertices".into()));
                }
                let n = mesh.vertices.len() as f64;
                let c = mesh.vertices.iter().fold(Vec3::zeros(), |a, p| a + v3(p)) / n;
                let radius = mesh.vertices.iter().map(|p| (v3(p) - c).norm()).fold(0.0, f64::max);
                let c = opts.position.map_or(c, |p| v3(&p));
                Body {
                    kind,
                    pos: vec![self.flatten(c)],
                    vel: vec![vel0],
                    inv_mass: inv(opts.mass, 1),
                    radius,
                    restitution: opts.restitution,
                    springs: Vec::new(),
                }
            }
            (ObjectKind::Soft, SimObject::Mesh(mesh)) => {
                let offset = match opts.position {
                    Some(p) => {
                        let n = mesh.vertices.len().max(1) as f64;
                        v3(&p) - mesh.vertices.iter().fold(Vec3::zeros(), |a, q| a + v3(q)) / n
                    }
                    None => Vec3::zeros(),
                };
                let pos: Vec<Vec3> = mesh.vertices.iter().map(|p| v3(p) + offset).collect();
                let springs = mesh.edges().into_iter().map(|(a, b)| (a, b, (pos[a] - pos[b]).norm())).collect();
                Body {
                    kind,
                    vel: vec![vel0; pos.len()],
                    inv_mass: inv(opts.mass, pos.len()),
                    radius: 0.0,
                    restitution: opts.restitution,
                    springs,
                    pos,
                }
            }
            (ObjectKind::Particles, SimObject::Particles { positions, velocities }) => {
                let pos: Vec<Vec3> = positions.iter().map(|p| self.flatten(v3(p))).collect();
                let vel = match velocities {
                    Some(v) if v.len() == pos.len() => v.iter().map(|p| self.flatten(v3(p))).collect(),
                    Some(v) => {
                        return Err(Error::InvalidInput(format!(
                            "{} velocities for {} particles",
                            v.len(),
                            pos.len()
                        )))
                    }
                    None => vec![vel0; pos.len()],
                };
                Body {
                    kind,
                    inv_mass: inv(opts.mass, pos.len()),
                    radius: 0.0,
                    restitution: opts.restitution,
                    springs: Vec::new(),
                    pos,
                    vel,
                }
            }
            (kind, _) => return Err(Error::UnsupportedKind(format!("{kind} from this object type"))),
        };
        self.bodies.insert(id, body);
        Ok(())
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt {dt} must be finite and ≥ 0")));
        }
        let n = (dt / MAX_SUBSTEP).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        for _ in 0..n {
            let (g, ground, flat) = (self.gravity, self.ground, self.kind == WorldKind::Rigid2d);
            for body in self.bodies.values_mut() {
                if body.inv_mass == 0.0 {
                    continue;
                }
                let mut acc = vec![g; body.pos.len()];
                let m = 1.0 / body.inv_mass;
                for &(a, b, rest) in &body.springs {
                    let d = body.pos[b] - body.pos[a];
                    let len = d.norm();
                    if len < 1e-12 {
                        continue;
                    }
                    let dir = d / len;
                    let rel = (body.vel[b] - body.vel[a]).dot(&dir);
                    let f = dir * (SOFT_STIFFNESS * (len - rest) + SOFT_DAMPING * rel) / m;
                    acc[a] += f;
                    acc[b] -= f;
                }
                for i in 0..body.pos.len() {
                    body.vel[i] += acc[i] * h;
                    if flat {
                        body.vel[i].z = 0.0;
                    }
                    body.pos[i] += body.vel[i] * h;
                    if let Some((nrm, off)) = ground {
                        let gap = nrm.dot(&body.pos[i]) - off - body.radius;
                        if gap < 0.0 {
                            body.pos[i] -= nrm * gap;
                            let vn = body.vel[i].dot(&nrm);
                            if vn < 0.0 {
                                body.vel[i] -= nrm * ((1.0 + body.restitution) * vn);
                            }
                        }
                    }
                }
            }
        }
        self.time += dt;
        Ok(())
    }

    pub fn state(&self) -> BTreeMap<u64, ObjectState> {
        self.bodies
            .iter()
            .map(|(id, b)| {
                (
                    *id,
                    ObjectState {
                        kind: b.kind,
                        positions: b.pos.iter().map(arr).collect(),
                        velocities: b.vel.iter().map(arr).collect(),
                    },
                )
            })
            .collect()
    }
}

/// All worlds of one program run. Object ids are unique across worlds.
#[derive(Debug, Default)]
pub struct PhysicsRuntime {
    worlds: BTreeMap<u64, World>,
    next_world: u64,
    next_object: u64,
}

impl PhysicsRuntime {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_world(&mut self, kind: WorldKind, gravity: [f64; 3], ground: Option<([f64; 3], f64)>) -> Result<u64> {
        let w = World::new(kind, gravity, ground)?;
        self.next_world += 1;
        self.worlds.insert(self.next_world, w);
        Ok(self.next_world)
    }

    pub fn world(&self, id: u64) -> Result<&World> {
        self.worlds.get(&id).ok_or_else(|| Error::InvalidInput(format!("no world with id {id}")))
    }

    fn world_mut(&mut self, id: u64) -> Result<&mut World> {
        self.worlds.get_mut(&id).ok_or_else(|| Error::InvalidInput(format!("no world with id {id}")))
    }

    pub fn register_simulation_object(
        &mut self,
        world: u64,
        object: SimObject,
        kind: ObjectKind,
        opts: BodyOptions,
    ) -> Result<u64> {
        let id = self.next_object + 1;
        self.world_mut(world)?.insert(id, object, kind, opts)?;
        self.next_object = id;
        Ok(id)
    }

    pub fn step_world(&mut self, world: u64, dt: f64) -> Result<()> {
        self.world_mut(world)?.step(dt)
    }

    pub fn get_state(&self, world: u64) -> Result<BTreeMap<u64, ObjectState>> {
        Ok(self.world(world)?.state())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toolbox::mesh::{generate_surface_mesh, unit_cube};

    fn ball() -> SimObject {
        SimObject::Shape(ShapeParams::Sphere { center: [0.0, 1.0, 0.0], radius: 0.1 })
    }

    #[test]
    fn rigid_sphere_falls() {
        let mut rt = PhysicsRuntime::new();
        let w = rt.create_world(WorldKind::Rigid3d, [0.0, -9.81, 0.0], None).unwrap();
        let id = rt.register_simulation_object(w, ball(), ObjectKind::Rigid, BodyOptions::default()).unwrap();
        rt.step_world(w, 0.1).unwrap();
        let s = &rt.get_state(w).unwrap()[&id];
        assert!(s.positions[0][1] < 1.0);
        assert!(s.velocities[0][1] < -0.9);
    }

    #[test]
    fn ground_stops_fall() {
        let mut rt = PhysicsRuntime::new();
        let w = rt.create_world(WorldKind::Rigid3d, [0.0, -9.81, 0.0], Some(([0.0, 1.0, 0.0], 0.0))).unwrap();
        let opts = BodyOptions { restitution: 0.0, ..BodyOptions::default() };
        let id = rt.register_simulation_object(w, ball(), ObjectKind::Rigid, opts).unwrap();
        for _ in 0..120 {
            rt.step_world(w, 1.0 / 30.0).unwrap();
        }
        let y = rt.get_state(w).unwrap()[&id].positions[0][1];
        assert!((y - 0.1).abs() < 1e-3, "{y}");
    }

    #[test]
    fn soft_in_2d_world_is_unsupported() {
        let mut rt = PhysicsRuntime::new();
        let w = rt.create_world(WorldKind::Rigid2d, [0.0, -9.81, 0.0], None).unwrap();
        let (v, i) = unit_cube();
        let mesh = generate_surface_mesh(v, i, 1.0).unwrap();
        let err = rt.register_simulation_object(w, SimObject::Mesh(mesh), ObjectKind::Soft, BodyOptions::default());
        assert!(err.unwrap_err().to_string().contains("unsupported kind"));
    }

    #[test]
    fn ids_are_distinct() {
        let mut rt = PhysicsRuntime::new();
        let w = rt.create_world(WorldKind::Rigid3d, [0.0; 3], None).unwrap();
        let a = rt.register_simulation_object(w, ball(), ObjectKind::Rigid, BodyOptions::default()).unwrap();
        let b = rt.register_simulation_object(w, ball(), ObjectKind::Rigid, BodyOptions::default()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn soft_cube_keeps_shape_at_rest() {
        let mut rt = PhysicsRuntime::new();
        let w = rt.create_world(WorldKind::Rigid3d, [0.0; 3], None).unwrap();
        let (v, i) = unit_cube();
        let mesh = generate_surface_mesh(v.clone(), i, 1.0).unwrap();
        let id = rt.register_simulation_object(w, SimObject::Mesh(mesh), ObjectKind::Soft, BodyOptions::default()).unwrap();
        rt.step_world(w, 0.5).unwrap();
        assert_eq!(rt.get_state(w).unwrap()[&id].positions, v);
    }

    #[test]
    fn particles_in_2d_stay_planar() {
        let mut rt = PhysicsRuntime::new();
        let w = rt.create_world(WorldKind::Rigid2d, [0.0, -9.81, 3.0], None).unwrap();
        let obj = SimObject::Particles { positions: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], velocities: None };
        let id = rt.register_simulation_object(w, obj, ObjectKind::Particles, BodyOptions::default()).unwrap();
        rt.step_world(w, 0.2).unwrap();
        assert!(rt.get_state(w).unwrap()[&id].positions.iter().all(|p| p[2] == 0.0));
    }

    #[test]
    fn static_body_never_moves() {
        let mut rt = PhysicsRuntime::new();
        let w = rt.create_world(WorldKind::Rigid3d, [0.0, -9.81, 0.0], None).unwrap();
        let opts = BodyOptions { mass: 0.0, ..BodyOptions::default() };
        let id = rt.register_simulation_object(w, ball(), ObjectKind::Rigid, opts).unwrap();
        rt.step_world(w, 1.0).unwrap();
        assert_eq!(rt.get_state(w).unwrap()[&id].positions[0], [0.0, 1.0, 0.0]);
    }
}
