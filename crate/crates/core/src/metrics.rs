//! Reconstruction metrics: symmetric Chamfer distance over point sets,
//! grid IoU, per-cell occupancy accuracy, and surface point sampling from
//! contours, meshes and rasters.

use crate::contour::{Polyline, TriMesh};
use crate::error::{Error, Result};
use rand::Rng;

/// Dense point set, row-major `[n, dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<PointSet> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::EmptyPointSet);
        }
        Ok(PointSet { dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

// ── KD-tree nearest neighbor ────────────────────────────────────────────

struct KdTree<'a> {
    set: &'a PointSet,
    /// Flattened binary tree over point indices: each node owns a
    /// median-split slice.
    order: Vec<usize>,
}

impl<'a> KdTree<'a> {
    fn build(set: &'a PointSet) -> KdTree<'a> {
        let mut order: Vec<usize> = (0..set.len()).collect();
        let dim = set.dim;
        fn split(set: &PointSet, order: &mut [usize], axis: usize, dim: usize) {
            if order.len() <= 1 {
                return;
            }
            let mid = order.len() / 2;
            order.select_nth_unstable_by(mid, |&a, &b| {
                set.point(a)[axis]
                    .partial_cmp(&set.point(b)[axis])
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let next = (axis + 1) % dim;
            let (lo, rest) = order.split_at_mut(mid);
            split(set, lo, next, dim);
            split(set, &mut rest[1..], next, dim);
        }
        split(set, &mut order, 0, dim);
        KdTree { set, order }
    }

    fn nearest_sq(&self, query: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(&self.order, 0, query, &mut best);
        best
    }

    fn search(&self, slice: &[usize], axis: usize, query: &[f64], best: &mut f64) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let pivot = self.set.point(slice[mid]);
        let d = sq_dist(query, pivot);
        if d < *best {
            *best = d;
        }
        let next = (axis + 1) % self.set.dim;
        let delta = query[axis] - pivot[axis];
        let (near, far) = if delta <= 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.search(near, next, query, best);
        if delta * delta < *best {
            self.search(far, next, query, best);
        }
    }
}

/// Symmetric Chamfer distance: mean squared nearest-neighbor distance in
/// both directions, summed. Point sets are treated as sets: exact
/// duplicates carry no geometric information and are skipped, so repeating
/// a point leaves the distance unchanged.
pub fn chamfer_distance(a: &PointSet, b: &PointSet) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            point_dim: a.dim,
            prim_dim: b.dim,
        });
    }
    let a = dedup(a);
    let b = dedup(b);
    let tree_b = KdTree::build(&b);
    let mut a_to_b = 0.0;
    for i in 0..a.len() {
        a_to_b += tree_b.nearest_sq(a.point(i));
    }
    let tree_a = KdTree::build(&a);
    let mut b_to_a = 0.0;
    for j in 0..b.len() {
        b_to_a += tree_a.nearest_sq(b.point(j));
    }
    Ok(a_to_b / a.len() as f64 + b_to_a / b.len() as f64)
}

fn dedup(set: &PointSet) -> PointSet {
    let mut seen = std::collections::HashSet::with_capacity(set.len());
    let mut data = Vec::with_capacity(set.data.len());
    for i in 0..set.len() {
        let p = set.point(i);
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            data.extend_from_slice(p);
        }
    }
    PointSet {
        dim: set.dim,
        data,
    }
}

// ── Grid metrics ────────────────────────────────────────────────────────

/// Intersection over union of two binary grids. Two empty grids count
/// as IoU 1.
pub fn grid_iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "grid_iou",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Fraction of cells where the two binary grids agree.
pub fn occupancy_accuracy(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            op: "occupancy_accuracy",
            lhs: vec![pred.len()],
            rhs: vec![truth.len()],
        });
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

// ── Surface sampling ────────────────────────────────────────────────────

/// `n` points drawn length-weighted from contour segments.
pub fn surface_sample_polylines(
    polylines: &[Polyline],
    n: usize,
    rng: &mut impl Rng,
) -> Result<PointSet> {
    let mut segments: Vec<([f64; 2], [f64; 2], f64)> = Vec::new();
    for line in polylines {
        let count = line.points.len();
        let limit = if line.closed { count } else { count.saturating_sub(1) };
        for i in 0..limit {
            let a = line.points[i];
            let b = line.points[(i + 1) % count];
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            if len > 0.0 {
                segments.push((a, b, len));
            }
        }
    }
    if segments.is_empty() || n == 0 {
        return Err(Error::EmptyPointSet);
    }
    let total: f64 = segments.iter().map(|s| s.2).sum();
    let mut data = Vec::with_capacity(n * 2);
    for _ in 0..n {
        let mut target = rng.gen_range(0.0..total);
        let mut chosen = segments.len() - 1;
        for (i, s) in segments.iter().enumerate() {
            if target < s.2 {
                chosen = i;
                break;
            }
            target -= s.2;
        }
        let (a, b, len) = segments[chosen];
        let t = target / len;
        data.push(a[0] + t * (b[0] - a[0]));
        data.push(a[1] + t * (b[1] - a[1]));
    }
    PointSet::new(2, data)
}

/// `n` points drawn area-weighted from mesh triangles, uniform in each
/// triangle via the square-root barycentric trick.
pub fn surface_sample_mesh(mesh: &TriMesh, n: usize, rng: &mut impl Rng) -> Result<PointSet> {
    let areas: Vec<f64> = mesh
        .triangles
        .iter()
        .map(|t| {
            let sub = TriMesh {
                vertices: mesh.vertices.clone(),
                triangles: vec![*t],
            };
            sub.surface_area()
        })
        .collect();
    let total: f64 = areas.iter().sum();
    if total <= 0.0 || n == 0 {
        return Err(Error::EmptyPointSet);
    }
    let mut data = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let mut target = rng.gen_range(0.0..total);
        let mut chosen = mesh.triangles.len() - 1;
        for (i, &a) in areas.iter().enumerate() {
            if target < a {
                chosen = i;
                break;
            }
            target -= a;
        }
        let t = mesh.triangles[chosen];
        let (a, b, c) = (
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
        );
        let r1: f64 = rng.gen::<f64>().sqrt();
        let r2: f64 = rng.gen();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        for k in 0..3 {
            data.push(wa * a[k] + wb * b[k] + wc * c[k]);
        }
    }
    PointSet::new(3, data)
}

/// `n` boundary-cell centers of a binary raster (cells adjacent to a
/// differing cell), sampled uniformly with replacement.
pub fn surface_sample_raster(
    grid: &[bool],
    res: usize,
    dim: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<PointSet> {
    let boundary = boundary_cells(grid, res, dim);
    if boundary.is_empty() || n == 0 {
        return Err(Error::EmptyShape);
    }
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let cell = boundary[rng.gen_range(0..boundary.len())];
        let mut rest = cell;
        for _ in 0..dim {
            data.push(((rest % res) as f64 + 0.5) / res as f64);
            rest /= res;
        }
    }
    PointSet::new(dim, data)
}

/// Indices of occupied cells with at least one empty axis neighbor, or
/// empty cells adjacent to an occupied one (the two-sided boundary band).
pub fn boundary_cells(grid: &[bool], res: usize, dim: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let idx2 = |x: usize, y: usize| y * res + x;
    let idx3 = |x: usize, y: usize, z: usize| (z * res + y) * res + x;
    if dim == 2 {
        for y in 0..res {
            for x in 0..res {
                let v = grid[idx2(x, y)];
                let mut differs = false;
                if x > 0 {
                    differs |= grid[idx2(x - 1, y)] != v;
                }
                if x + 1 < res {
                    differs |= grid[idx2(x + 1, y)] != v;
                }
                if y > 0 {
                    differs |= grid[idx2(x, y - 1)] != v;
                }
                if y + 1 < res {
                    differs |= grid[idx2(x, y + 1)] != v;
                }
                if differs && v {
                    out.push(idx2(x, y));
                }
            }
        }
    } else {
        for z in 0..res {
            for y in 0..res {
                for x in 0..res {
                    let v = grid[idx3(x, y, z)];
                    if !v {
                        continue;
                    }
                    let mut differs = false;
                    if x > 0 {
                        differs |= !grid[idx3(x - 1, y, z)];
                    }
                    if x + 1 < res {
                        differs |= !grid[idx3(x + 1, y, z)];
                    }
                    if y > 0 {
                        differs |= !grid[idx3(x, y - 1, z)];
                    }
                    if y + 1 < res {
                        differs |= !grid[idx3(x, y + 1, z)];
                    }
                    if z > 0 {
                        differs |= !grid[idx3(x, y, z - 1)];
                    }
                    if z + 1 < res {
                        differs |= !grid[idx3(x, y, z + 1)];
                    }
                    if differs {
                        out.push(idx3(x, y, z));
                    }
                }
            }
        }
    }
    out
}
