//! Query point sampling: all cell centers (exhaustive, the 2D desk-scale
//! default) or boundary-biased random points plus uniform fill.

use crate::config::{SamplingConfig, SamplingMode};
use crate::data::ShapeRaster;
use crate::error::{Error, Result};
use crate::metrics::boundary_cells;
use rand::Rng;

/// Query points with their ground-truth occupancies.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    /// Row-major `[n, dim]` coordinates in the unit domain.
    pub points: Vec<f64>,
    /// One {0, 1} target per point, read from the containing grid cell.
    pub targets: Vec<f64>,
    pub dim: usize,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Cell centers of a `res^dim` grid, row-major (x fastest).
pub fn grid_points(res: usize, dim: usize) -> Vec<f64> {
    let coord = |i: usize| (i as f64 + 0.5) / res as f64;
    let mut out = Vec::with_capacity(res.pow(dim as u32) * dim);
    if dim == 2 {
        for y in 0..res {
            for x in 0..res {
                out.push(coord(x));
                out.push(coord(y));
            }
        }
    } else {
        for z in 0..res {
            for y in 0..res {
                for x in 0..res {
                    out.push(coord(x));
                    out.push(coord(y));
                    out.push(coord(z));
                }
            }
        }
    }
    out
}

fn cell_of(raster: &ShapeRaster, point: &[f64]) -> usize {
    let res = raster.resolution;
    let mut idx = 0;
    for d in (0..raster.dim).rev() {
        let c = ((point[d] * res as f64) as usize).min(res - 1);
        idx = idx * res + c;
    }
    idx
}

/// Sample query points for one shape according to the configured mode.
pub fn sample_points(
    raster: &ShapeRaster,
    cfg: &SamplingConfig,
    rng: &mut impl Rng,
) -> Result<SampleBatch> {
    if raster.inside_count() == 0 {
        return Err(Error::EmptyShape);
    }
    match cfg.mode {
        SamplingMode::Exhaustive => Ok(sample_exhaustive(raster)),
        SamplingMode::Biased => sample_biased(raster, cfg.surface_points, cfg.uniform_points, rng),
    }
}

/// Every cell center, targets read directly off the grid.
pub fn sample_exhaustive(raster: &ShapeRaster) -> SampleBatch {
    SampleBatch {
        points: grid_points(raster.resolution, raster.dim),
        targets: raster.occupancy_f64(),
        dim: raster.dim,
    }
}

/// `n_surface` points jittered around boundary cells plus `n_uniform`
/// uniform points. Shapes with no boundary (a completely filled grid)
/// fall back to uniform sampling for the surface share.
pub fn sample_biased(
    raster: &ShapeRaster,
    n_surface: usize,
    n_uniform: usize,
    rng: &mut impl Rng,
) -> Result<SampleBatch> {
    if raster.inside_count() == 0 {
        return Err(Error::EmptyShape);
    }
    let res = raster.resolution;
    let dim = raster.dim;
    let cell = 1.0 / res as f64;
    let boundary = boundary_cells(&raster.cells, res, dim);
    let n = n_surface + n_uniform;
    let mut points = Vec::with_capacity(n * dim);
    let mut targets = Vec::with_capacity(n);
    let push_point = |p: &[f64], points: &mut Vec<f64>, targets: &mut Vec<f64>| {
        points.extend_from_slice(p);
        targets.push(raster.cells[cell_of(raster, p)] as u8 as f64);
    };
    let mut p = vec![0.0; dim];
    for _ in 0..n_surface {
        if boundary.is_empty() {
            for v in p.iter_mut() {
                *v = rng.gen_range(0.0..1.0);
            }
        } else {
            let mut rest = boundary[rng.gen_range(0..boundary.len())];
            for v in p.iter_mut() {
                let center = ((rest % res) as f64 + 0.5) * cell;
                *v = (center + rng.gen_range(-cell..cell)).clamp(0.0, 1.0 - f64::EPSILON);
                rest /= res;
            }
        }
        push_point(&p, &mut points, &mut targets);
    }
    for _ in 0..n_uniform {
        for v in p.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        push_point(&p, &mut points, &mut targets);
    }
    Ok(SampleBatch {
        points,
        targets,
        dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ShapeRaster;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn disk_raster(res: usize, r: f64) -> ShapeRaster {
        let cells = (0..res * res)
            .map(|i| {
                let x = ((i % res) as f64 + 0.5) / res as f64 - 0.5;
                let y = ((i / res) as f64 + 0.5) / res as f64 - 0.5;
                (x * x + y * y).sqrt() <= r
            })
            .collect();
        ShapeRaster::from_bools(2, res, cells)
    }

    #[test]
    fn exhaustive_uses_every_pixel_center() {
        let raster = disk_raster(64, 0.3);
        let batch = sample_exhaustive(&raster);
        assert_eq!(batch.len(), 4096);
        assert_eq!(batch.points.len(), 4096 * 2);
        // Targets are exactly the raster.
        assert_eq!(batch.targets, raster.occupancy_f64());
    }

    #[test]
    fn all_ones_grid_gives_all_one_targets() {
        let raster = ShapeRaster::from_bools(2, 16, vec![true; 256]);
        let batch = sample_exhaustive(&raster);
        assert!(batch.targets.iter().all(|&t| t == 1.0));
        // Biased mode degrades to uniform sampling but still works.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let biased = sample_biased(&raster, 64, 64, &mut rng).unwrap();
        assert!(biased.targets.iter().all(|&t| t == 1.0));
    }

    #[test]
    fn empty_shape_is_an_error() {
        let raster = ShapeRaster::from_bools(2, 16, vec![false; 256]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_biased(&raster, 8, 8, &mut rng),
            Err(Error::EmptyShape)
        ));
    }

    #[test]
    fn biased_mode_concentrates_near_boundary() {
        let res = 64;
        let raster = disk_raster(res, 0.3);
        // Brute-force mask of cells within 2 cells of the boundary.
        let boundary = boundary_cells(&raster.cells, res, 2);
        let mut near = vec![false; res * res];
        for &b in &boundary {
            let (bx, by) = ((b % res) as i64, (b / res) as i64);
            for dy in -2..=2i64 {
                for dx in -2..=2i64 {
                    let (x, y) = (bx + dx, by + dy);
                    if x >= 0 && y >= 0 && (x as usize) < res && (y as usize) < res {
                        near[y as usize * res + x as usize] = true;
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = sample_biased(&raster, 512, 512, &mut rng).unwrap();
        let mut hits = 0;
        for i in 0..batch.len() {
            let p = &batch.points[i * 2..i * 2 + 2];
            let cx = ((p[0] * res as f64) as usize).min(res - 1);
            let cy = ((p[1] * res as f64) as usize).min(res - 1);
            if near[cy * res + cx] {
                hits += 1;
            }
        }
        assert!(
            hits * 2 >= batch.len(),
            "only {hits} of {} points near the boundary",
            batch.len()
        );
    }
}
