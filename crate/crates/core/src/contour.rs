//! Iso-contour and iso-surface extraction from dense grids, plus SVG and
//! OBJ writers.
//!
//! Grids hold one value per cell center: index `(x, y[, z])` sits at
//! `((x+0.5)/res, ...)` in the unit domain. The 2D path is marching
//! squares over the cell-center lattice with the ambiguous cases resolved
//! by the cell average; the 3D path splits each lattice cube into six
//! tetrahedra around the main diagonal (face-consistent between
//! neighbors, so shared vertices are exact) and emits one or two
//! triangles per crossed tetrahedron. Vertices sit on lattice edges by
//! linear interpolation, which for binary grids lands at edge midpoints.

use crate::error::{Error, Result};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = [
                    self.vertices[t[0]],
                    self.vertices[t[1]],
                    self.vertices[t[2]],
                ];
                let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                let cx = u[1] * v[2] - u[2] * v[1];
                let cy = u[2] * v[0] - u[0] * v[2];
                let cz = u[0] * v[1] - u[1] * v[0];
                0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
            })
            .sum()
    }
}

/// Extract the `iso` level set of a 2D occupancy grid (inside = value >=
/// iso). Binary grids with iso 0.5 get midpoint vertices.
pub fn contour_occupancy_2d(values: &[f64], res: usize, iso: f64) -> Result<Vec<Polyline>> {
    marching_squares(values, res, iso)
}

/// Extract the zero level set of a 2D signed distance grid (inside = d <= 0).
pub fn contour_sdf_2d(values: &[f64], res: usize) -> Result<Vec<Polyline>> {
    let negated: Vec<f64> = values.iter().map(|v| -v).collect();
    marching_squares(&negated, res, 0.0)
}

/// Iso-surface of a 3D occupancy grid (inside = value >= iso).
pub fn contour_occupancy_3d(values: &[f64], res: usize, iso: f64) -> Result<TriMesh> {
    marching_tets(values, res, iso)
}

/// Zero level set of a 3D signed distance grid (inside = d <= 0).
pub fn contour_sdf_3d(values: &[f64], res: usize) -> Result<TriMesh> {
    let negated: Vec<f64> = values.iter().map(|v| -v).collect();
    marching_tets(&negated, res, 0.0)
}

fn check_grid(values: &[f64], res: usize, dim: u32) -> Result<()> {
    if res < 8 {
        return Err(Error::InvalidShape {
            op: "contour",
            shape: vec![res],
            reason: "grid resolution must be >= 8".into(),
        });
    }
    if values.len() != res.pow(dim) {
        return Err(Error::InvalidShape {
            op: "contour",
            shape: vec![values.len()],
            reason: format!("expected {} grid values", res.pow(dim)),
        });
    }
    Ok(())
}

// ── Marching squares ────────────────────────────────────────────────────

fn marching_squares(values: &[f64], res: usize, iso: f64) -> Result<Vec<Polyline>> {
    check_grid(values, res, 2)?;
    let pos = |i: usize| (i as f64 + 0.5) / res as f64;
    let at = |x: usize, y: usize| values[y * res + x];

    // One vertex per crossed lattice edge: key = (cell-origin index, axis).
    let mut edge_vertex: HashMap<(usize, usize, u8), usize> = HashMap::new();
    let mut vertices: Vec<[f64; 2]> = Vec::new();
    let mut segments: Vec<[usize; 2]> = Vec::new();

    let mut vertex_on_edge =
        |x: usize, y: usize, axis: u8, vertices: &mut Vec<[f64; 2]>| -> usize {
            *edge_vertex.entry((x, y, axis)).or_insert_with(|| {
                let (va, vb, pa, pb) = if axis == 0 {
                    (at(x, y), at(x + 1, y), [pos(x), pos(y)], [pos(x + 1), pos(y)])
                } else {
                    (at(x, y), at(x, y + 1), [pos(x), pos(y)], [pos(x), pos(y + 1)])
                };
                let t = (iso - va) / (vb - va);
                vertices.push([pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]);
                vertices.len() - 1
            })
        };

    for y in 0..res - 1 {
        for x in 0..res - 1 {
            let c = [at(x, y), at(x + 1, y), at(x + 1, y + 1), at(x, y + 1)];
            let mut case = 0usize;
            for (bit, &v) in c.iter().enumerate() {
                if v >= iso {
                    case |= 1 << bit;
                }
            }
            if case == 0 || case == 15 {
                continue;
            }
            // Edges: 0 bottom, 1 right, 2 top, 3 left.
            let mut e = |edge: usize, vertices: &mut Vec<[f64; 2]>| match edge {
                0 => vertex_on_edge(x, y, 0, vertices),
                1 => vertex_on_edge(x + 1, y, 1, vertices),
                2 => vertex_on_edge(x, y + 1, 0, vertices),
                _ => vertex_on_edge(x, y, 1, vertices),
            };
            let center_inside = (c[0] + c[1] + c[2] + c[3]) / 4.0 >= iso;
            let pairs: &[[usize; 2]] = match case {
                1 => &[[0, 3]],
                2 => &[[0, 1]],
                3 => &[[1, 3]],
                4 => &[[1, 2]],
                5 => {
                    if center_inside {
                        &[[0, 1], [2, 3]]
                    } else {
                        &[[0, 3], [1, 2]]
                    }
                }
                6 => &[[0, 2]],
                7 => &[[2, 3]],
                8 => &[[2, 3]],
                9 => &[[0, 2]],
                10 => {
                    if center_inside {
                        &[[0, 3], [1, 2]]
                    } else {
                        &[[0, 1], [2, 3]]
                    }
                }
                11 => &[[1, 2]],
                12 => &[[1, 3]],
                13 => &[[0, 1]],
                _ => &[[0, 3]],
            };
            for pair in pairs {
                let a = e(pair[0], &mut vertices);
                let b = e(pair[1], &mut vertices);
                segments.push([a, b]);
            }
        }
    }
    Ok(chain_segments(&vertices, &segments))
}

/// Chain shared-endpoint segments into polylines; loops are closed, grid
/// boundary chains stay open.
fn chain_segments(vertices: &[[f64; 2]], segments: &[[usize; 2]]) -> Vec<Polyline> {
    let mut adjacency: HashMap<usize, Vec<usize>> = HashMap::new();
    for (si, seg) in segments.iter().enumerate() {
        adjacency.entry(seg[0]).or_default().push(si);
        adjacency.entry(seg[1]).or_default().push(si);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();

    // Open chains start at degree-1 vertices; remaining segments form loops.
    let mut endpoints: Vec<usize> = adjacency
        .iter()
        .filter(|(_, segs)| segs.len() == 1)
        .map(|(&v, _)| v)
        .collect();
    endpoints.sort_unstable();

    let walk = |start_vertex: usize, used: &mut Vec<bool>| -> Option<Polyline> {
        let first_seg = *adjacency[&start_vertex].iter().find(|&&s| !used[s])?;
        let mut points = vec![start_vertex];
        let mut seg = first_seg;
        let mut vertex = start_vertex;
        loop {
            used[seg] = true;
            vertex = if segments[seg][0] == vertex {
                segments[seg][1]
            } else {
                segments[seg][0]
            };
            points.push(vertex);
            match adjacency[&vertex].iter().find(|&&s| !used[s]) {
                Some(&next) => seg = next,
                None => break,
            }
        }
        let closed = points.len() > 2 && points[0] == *points.last().unwrap();
        if closed {
            points.pop();
        }
        Some(Polyline {
            points: points.iter().map(|&v| vertices[v]).collect(),
            closed,
        })
    };

    for v in endpoints {
        while let Some(p) = walk(v, &mut used) {
            polylines.push(p);
        }
    }
    for si in 0..segments.len() {
        if !used[si] {
            if let Some(p) = walk(segments[si][0], &mut used) {
                polylines.push(p);
            }
        }
    }
    polylines
}

// ── Marching tetrahedra ─────────────────────────────────────────────────

/// Cube corner offsets, indexed 0..8.
const CUBE: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Six tetrahedra sharing the 0-6 diagonal. Every cube face is split along
/// the same diagonal as the neighboring cube's matching face.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 2, 6],
    [0, 2, 3, 6],
    [0, 3, 7, 6],
    [0, 7, 4, 6],
    [0, 4, 5, 6],
    [0, 5, 1, 6],
];

fn marching_tets(values: &[f64], res: usize, iso: f64) -> Result<TriMesh> {
    check_grid(values, res, 3)?;
    let pos = |i: usize| (i as f64 + 0.5) / res as f64;
    let gid = |x: usize, y: usize, z: usize| (z * res + y) * res + x;

    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mesh = TriMesh::default();

    let mut vertex_between = |a: usize, b: usize, mesh: &mut TriMesh| -> usize {
        let key = if a < b { (a, b) } else { (b, a) };
        *edge_vertex.entry(key).or_insert_with(|| {
            let (va, vb) = (values[a], values[b]);
            let t = (iso - va) / (vb - va);
            let pa = [pos(a % res), pos(a / res % res), pos(a / (res * res))];
            let pb = [pos(b % res), pos(b / res % res), pos(b / (res * res))];
            mesh.vertices.push([
                pa[0] + t * (pb[0] - pa[0]),
                pa[1] + t * (pb[1] - pa[1]),
                pa[2] + t * (pb[2] - pa[2]),
            ]);
            mesh.vertices.len() - 1
        })
    };

    for z in 0..res - 1 {
        for y in 0..res - 1 {
            for x in 0..res - 1 {
                let corner_ids: Vec<usize> = CUBE
                    .iter()
                    .map(|o| gid(x + o[0], y + o[1], z + o[2]))
                    .collect();
                for tet in &TETS {
                    let ids = [
                        corner_ids[tet[0]],
                        corner_ids[tet[1]],
                        corner_ids[tet[2]],
                        corner_ids[tet[3]],
                    ];
                    let inside: Vec<usize> = (0..4).filter(|&i| values[ids[i]] >= iso).collect();
                    match inside.len() {
                        0 | 4 => {}
                        1 | 3 => {
                            let apex = if inside.len() == 1 {
                                inside[0]
                            } else {
                                (0..4).find(|i| !inside.contains(i)).unwrap()
                            };
                            let others: Vec<usize> = (0..4).filter(|&i| i != apex).collect();
                            let v0 = vertex_between(ids[apex], ids[others[0]], &mut mesh);
                            let v1 = vertex_between(ids[apex], ids[others[1]], &mut mesh);
                            let v2 = vertex_between(ids[apex], ids[others[2]], &mut mesh);
                            mesh.triangles.push([v0, v1, v2]);
                        }
                        _ => {
                            let (a, b) = (inside[0], inside[1]);
                            let outs: Vec<usize> =
                                (0..4).filter(|i| !inside.contains(i)).collect();
                            let (c, d) = (outs[0], outs[1]);
                            let vac = vertex_between(ids[a], ids[c], &mut mesh);
                            let vad = vertex_between(ids[a], ids[d], &mut mesh);
                            let vbc = vertex_between(ids[b], ids[c], &mut mesh);
                            let vbd = vertex_between(ids[b], ids[d], &mut mesh);
                            mesh.triangles.push([vac, vad, vbd]);
                            mesh.triangles.push([vac, vbd, vbc]);
                        }
                    }
                }
            }
        }
    }
    Ok(mesh)
}

// ── Writers ─────────────────────────────────────────────────────────────

/// Filled silhouette as an SVG document; nested loops become holes via the
/// even-odd rule. Coordinates are emitted with fixed precision so repeated
/// renders are byte-identical.
pub fn polylines_to_svg(polylines: &[Polyline], canvas: usize) -> String {
    use std::fmt::Write;
    let mut path = String::new();
    for line in polylines {
        for (i, p) in line.points.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            write!(
                path,
                "{cmd}{:.4} {:.4} ",
                p[0] * canvas as f64,
                p[1] * canvas as f64
            )
            .unwrap();
        }
        if !line.points.is_empty() {
            path.push_str("Z ");
        }
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{canvas}\" height=\"{canvas}\" viewBox=\"0 0 {canvas} {canvas}\">\n\
         <rect width=\"{canvas}\" height=\"{canvas}\" fill=\"white\"/>\n\
         <path d=\"{}\" fill=\"black\" fill-rule=\"evenodd\" stroke=\"none\"/>\n\
         </svg>\n",
        path.trim_end()
    )
}

/// Wavefront OBJ text with 1-based face indices.
pub fn mesh_to_obj(mesh: &TriMesh) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for v in &mesh.vertices {
        writeln!(out, "v {:.9} {:.9} {:.9}", v[0], v[1], v[2]).unwrap();
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::{sdf_circle, sdf_sphere};

    #[test]
    fn all_inside_yields_empty_contour() {
        let values = vec![1.0; 64 * 64];
        assert!(contour_occupancy_2d(&values, 64, 0.5).unwrap().is_empty());
        let values = vec![0.0; 64 * 64];
        assert!(contour_occupancy_2d(&values, 64, 0.5).unwrap().is_empty());
    }

    #[test]
    fn circle_contour_vertices_near_radius() {
        let res = 128;
        let mut values = vec![0.0; res * res];
        for y in 0..res {
            for x in 0..res {
                let px = (x as f64 + 0.5) / res as f64 - 0.5;
                let py = (y as f64 + 0.5) / res as f64 - 0.5;
                values[y * res + x] = (sdf_circle([px, py], 0.4) <= 0.0) as u8 as f64;
            }
        }
        let polylines = contour_occupancy_2d(&values, res, 0.5).unwrap();
        assert!(!polylines.is_empty());
        let cell = 1.0 / res as f64;
        for line in &polylines {
            assert!(line.closed);
            for p in &line.points {
                let r = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
                assert!((r - 0.4).abs() <= 1.5 * cell, "vertex at radius {r}");
            }
        }
    }

    #[test]
    fn square_contour_is_one_closed_loop() {
        let res = 64;
        let mut values = vec![0.0; res * res];
        for y in 16..48 {
            for x in 16..48 {
                values[y * res + x] = 1.0;
            }
        }
        let polylines = contour_occupancy_2d(&values, res, 0.5).unwrap();
        assert_eq!(polylines.len(), 1);
        assert!(polylines[0].closed);
    }

    #[test]
    fn sphere_mesh_area_close_to_analytic() {
        let res = 64;
        let mut values = vec![0.0; res * res * res];
        for z in 0..res {
            for y in 0..res {
                for x in 0..res {
                    let p = [
                        (x as f64 + 0.5) / res as f64 - 0.5,
                        (y as f64 + 0.5) / res as f64 - 0.5,
                        (z as f64 + 0.5) / res as f64 - 0.5,
                    ];
                    values[(z * res + y) * res + x] = sdf_sphere(p, 0.4);
                }
            }
        }
        let mesh = contour_sdf_3d(&values, res).unwrap();
        let analytic = 4.0 * std::f64::consts::PI * 0.4 * 0.4;
        let area = mesh.surface_area();
        assert!(
            (area - analytic).abs() / analytic < 0.1,
            "area {area} vs analytic {analytic}"
        );
    }

    #[test]
    fn svg_output_is_deterministic() {
        let res = 64;
        let mut values = vec![0.0; res * res];
        for y in 20..40 {
            for x in 10..50 {
                values[y * res + x] = 1.0;
            }
        }
        let lines = contour_occupancy_2d(&values, res, 0.5).unwrap();
        let a = polylines_to_svg(&lines, 256);
        let b = polylines_to_svg(&lines, 256);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
    }

    #[test]
    fn obj_indices_are_one_based() {
        let mesh = TriMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        let text = mesh_to_obj(&mesh);
        assert!(text.contains("f 1 2 3"));
    }
}
