//! Small linear-algebra helpers shared by the fitters.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

pub type Vec3 = Vector3<f64>;

#[inline]
pub fn v3(p: &[f64; 3]) -> Vec3 {
    Vec3::new(p[0], p[1], p[2])
}

#[inline]
pub fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Centroid plus eigen-decomposition of the scatter matrix, eigenvalues ascending.
pub struct Pca {
    pub centroid: Vec3,
    pub values: [f64; 3],
    pub vectors: [Vec3; 3],
}

pub fn pca<'a>(points: impl Iterator<Item = &'a Vec3> + Clone) -> Option<Pca> {
    let mut n = 0usize;
    let mut sum = Vec3::zeros();
    for p in points.clone() {
        sum += p;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let centroid = sum / n as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let (values, vectors) = sorted_eigen(scatter);
    Some(Pca { centroid, values, vectors })
}

/// Eigenpairs of a symmetric matrix sorted by ascending eigenvalue.
pub fn sorted_eigen(m: Matrix3<f64>) -> ([f64; 3], [Vec3; 3]) {
    let eig = SymmetricEigen::new(m);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = idx.map(|i| eig.eigenvalues[i]);
    let vectors = idx.map(|i| eig.eigenvectors.column(i).into_owned().normalize());
    (values, vectors)
}

/// Any unit vector orthogonal to `v`.
pub fn orthogonal(v: &Vec3) -> Vec3 {
    let pick = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    v.cross(&pick).normalize()
}

/// Uniform-grid neighbour index for k-nearest-neighbour queries.
pub struct NeighborGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    origin: Vec3,
    dims: [usize; 3],
    buckets: Vec<Vec<usize>>,
}

impl<'a> NeighborGrid<'a> {
    pub fn new(points: &'a [Vec3], target_per_cell: usize) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).map(|e| e.max(1e-9));
        let volume = extent.x * extent.y * extent.z;
        let cells_wanted = (points.len() / target_per_cell.max(1)).max(1) as f64;
        let mut cell = (volume / cells_wanted).cbrt();
        // Thin clouds (planes) need the cell sized by area, not volume.
        let max_extent = extent.max();
        cell = cell.max(max_extent / 256.0).max(1e-9);
        let dims = [0, 1, 2].map(|i| ((extent[i] / cell).floor() as usize + 1).min(512));
        let mut grid = Self { points, cell, origin: lo, dims, buckets: vec![Vec::new(); dims[0] * dims[1] * dims[2]] };
        for (i, p) in points.iter().enumerate() {
            let c = grid.cell_of(p);
            let k = grid.flat(c);
            grid.buckets[k].push(i);
        }
        grid
    }

    fn cell_of(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|i| (((p[i] - self.origin[i]) / self.cell).floor().max(0.0) as usize).min(self.dims[i] - 1))
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Indices of the `k` nearest points to point `i` (including `i`).
    pub fn knn(&self, i: usize, k: usize) -> Vec<usize> {
        let p = &self.points[i];
        let c = self.cell_of(p);
        let mut radius = 1usize;
        loop {
            let mut cand: Vec<(f64, usize)> = Vec::new();
            let lo = c.map(|v| v.saturating_sub(radius));
            for z in lo[2]..=(c[2] + radius).min(self.dims[2] - 1) {
                for y in lo[1]..=(c[1] + radius).min(self.dims[1] - 1) {
                    for x in lo[0]..=(c[0] + radius).min(self.dims[0] - 1) {
                        for &j in &self.buckets[self.flat([x, y, z])] {
                            cand.push(((self.points[j] - p).norm_squared(), j));
                        }
                    }
                }
            }
            let covers_all = lo == [0, 0, 0] && (0..3).all(|a| c[a] + radius >= self.dims[a] - 1);
            if cand.len() >= k || covers_all {
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                // Only trust neighbours inside the searched cube.
                let safe = (radius as f64 * self.cell).powi(2);
                if covers_all || cand.get(k - 1).is_some_and(|c| c.0 <= safe) {
                    return cand.into_iter().take(k).map(|(_, j)| j).collect();
                }
            }
            radius += 1;
        }
    }
}

/// Unit normals from local PCA over `k` neighbours. Orientation is arbitrary.
pub fn estimate_normals(points: &[Vec3], k: usize) -> Vec<Vec3> {
    if points.len() < 3 {
        return vec![Vec3::z(); points.len()];
    }
    let k = k.min(points.len()).max(3);
    let grid = NeighborGrid::new(points, k);
    (0..points.len())
        .map(|i| {
            let nb = grid.knn(i, k);
            pca(nb.iter().map(|&j| &points[j])).map_or(Vec3::z(), |p| p.vectors[0])
        })
        .collect()
}

/// Least-squares circle through 2-D points (algebraic fit refined geometrically).
pub fn fit_circle(points: &[[f64; 2]]) -> Option<([f64; 2], f64)> {
    if points.len() < 3 {
        return None;
    }
    // Centre the data for conditioning.
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p[0], a.1 + p[1]));
    let (mx, my) = (mx / n, my / n);
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = Vec3::zeros();
    for p in points {
        let (x, y) = (p[0] - mx, p[1] - my);
        let row = Vec3::new(2.0 * x, 2.0 * y, 1.0);
        ata += row * row.transpose();
        atb += row * (x * x + y * y);
    }
    let sol = ata.lu().solve(&atb)?;
    let (mut cx, mut cy) = (sol.x, sol.y);
    let r2 = sol.z + cx * cx + cy * cy;
    if !(r2 > 0.0) {
        return None;
    }
    let mut r = r2.sqrt();
    // Gauss-Newton on geometric distance.
    for _ in 0..20 {
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = Vec3::zeros();
        for p in points {
            let (dx, dy) = (p[0] - mx - cx, p[1] - my - cy);
            let d = (dx * dx + dy * dy).sqrt();
            if d < 1e-12 {
                continue;
            }
            let res = d - r;
            let j = Vec3::new(-dx / d, -dy / d, -1.0);
            jtj += j * j.transpose();
            jtr += j * res;
        }
        let Some(step) = jtj.lu().solve(&(-jtr)) else { break };
        cx += step.x;
        cy += step.y;
        r += step.z;
        if step.norm() < 1e-12 {
            break;
        }
    }
    (r > 0.0 && r.is_finite()).then_some(([cx + mx, cy + my], r))
}
