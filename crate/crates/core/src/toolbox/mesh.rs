//! Triangle-mesh validation for soft and rigid bodies.

use serde::{Deserialize, Serialize};

use super::geom::v3;
use crate::{Error, Result};

/// Triangles with area at or below this are dropped.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub vertices: Vec<[f64; 3]>,
    pub indices: Vec<[usize; 3]>,
    /// 0 means static.
    pub mass: f64,
    #[serde(default, rename = "dropped")]
    pub dropped_triangles: usize,
}

impl MeshSpec {
    /// Unique undirected edges, each as `(lo, hi)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .indices
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }
}

pub fn triangle_area(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    let (a, b, c) = (v3(a), v3(b), v3(c));
    (b - a).cross(&(c - a)).norm() / 2.0
}

pub fn generate_surface_mesh(vertices: Vec<[f64; 3]>, indices: Vec<[usize; 3]>, mass: f64) -> Result<MeshSpec> {
    if !(mass >= 0.0 && mass.is_finite()) {
        return Err(Error::InvalidInput(format!("mass {mass} must be finite and ≥ 0")));
    }
    if vertices.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("mesh has non-finite vertex coordinates".into()));
    }
    if let Some((t, i)) = indices
        .iter()
        .enumerate()
        .find_map(|(t, tri)| tri.iter().find(|&&i| i >= vertices.len()).map(|&i| (t, i)))
    {
        return Err(Error::InvalidInput(format!(
            "triangle {t} references vertex {i} but the mesh has {} vertices",
            vertices.len()
        )));
    }
    let before = indices.len();
    let kept: Vec<[usize; 3]> = indices
        .into_iter()
        .filter(|t| triangle_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]) > DEGENERATE_AREA)
        .collect();
    let dropped_triangles = before - kept.len();
    Ok(MeshSpec { vertices, indices: kept, mass, dropped_triangles })
}

/// Unit cube with outward-wound triangles, handy for fixtures.
pub fn unit_cube() -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let v = (0..8).map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]).collect();
    let idx = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    (v, idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_passes_unchanged() {
        let (v, i) = unit_cube();
        let m = generate_surface_mesh(v.clone(), i.clone(), 1.0).unwrap();
        assert_eq!(m.vertices, v);
        assert_eq!(m.indices, i);
        assert_eq!(m.dropped_triangles, 0);
        assert_eq!(m.edges().len(), 18);
    }

    #[test]
    fn degenerate_triangle_dropped() {
        let (v, mut i) = unit_cube();
        i[3] = [0, 1, 1];
        let m = generate_surface_mesh(v, i, 0.0).unwrap();
        assert_eq!(m.indices.len(), 11);
        assert_eq!(m.dropped_triangles, 1);
    }

    #[test]
    fn out_of_range_index() {
        let (v, mut i) = unit_cube();
        i.push([0, 1, 9]);
        let err = generate_surface_mesh(v, i, 1.0).unwrap_err().to_string();
        assert!(err.contains("vertex 9"), "{err}");
    }
}
