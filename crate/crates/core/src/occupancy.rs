//! Signed-distance-to-occupancy conversion and the CSG algebra on
//! occupancy values.
//!
//! Occupancies live in `[0, 1]`: 1 means inside or on the surface. The
//! converter is a clipped linear ramp with learnable slope `alpha`; as
//! `alpha` shrinks the output binarizes. The four CSG operations are
//! clipped sums and differences, which on binary inputs reduce exactly to
//! Boolean set operations.

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};

/// Occupancy values plus the alpha that produced them.
#[derive(Debug, Clone, Copy)]
pub struct OccupancyBatch {
    pub values: TensorId,
    pub alpha_snapshot: f64,
}

/// `clip(1 - d / alpha, 0, 1)` with gradient flowing through the closed
/// clip interval. `alpha` must be positive at call time.
pub fn to_occupancy(tape: &mut Tape, distances: TensorId, alpha: TensorId) -> Result<OccupancyBatch> {
    let a = tape.scalar_value(alpha);
    if !(a > 0.0) {
        return Err(Error::NonPositiveAlpha(a));
    }
    let ratio = tape.div(distances, alpha)?;
    let neg = tape.scale(ratio, -1.0);
    let ramp = tape.offset(neg, 1.0);
    let values = tape.clamp(ramp, 0.0, 1.0);
    Ok(OccupancyBatch {
        values,
        alpha_snapshot: a,
    })
}

/// `[a + b]` clipped to `[0,1]`: union.
pub fn csg_union(tape: &mut Tape, a: TensorId, b: TensorId) -> Result<TensorId> {
    let s = tape.add(a, b)?;
    Ok(tape.clamp(s, 0.0, 1.0))
}

/// `[a + b - 1]` clipped to `[0,1]`: intersection.
pub fn csg_intersect(tape: &mut Tape, a: TensorId, b: TensorId) -> Result<TensorId> {
    let s = tape.add(a, b)?;
    let s = tape.offset(s, -1.0);
    Ok(tape.clamp(s, 0.0, 1.0))
}

/// `[a - b]` clipped to `[0,1]`: difference.
pub fn csg_diff(tape: &mut Tape, a: TensorId, b: TensorId) -> Result<TensorId> {
    let d = tape.sub(a, b)?;
    Ok(tape.clamp(d, 0.0, 1.0))
}

// Plain-value counterparts, used where no gradient is needed.

pub fn occupancy_scalar(d: f64, alpha: f64) -> f64 {
    (1.0 - d / alpha).clamp(0.0, 1.0)
}

pub fn union_scalar(a: f64, b: f64) -> f64 {
    (a + b).clamp(0.0, 1.0)
}

pub fn intersect_scalar(a: f64, b: f64) -> f64 {
    (a + b - 1.0).clamp(0.0, 1.0)
}

pub fn diff_scalar(a: f64, b: f64) -> f64 {
    (a - b).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn occ(d: f64, alpha: f64) -> f64 {
        let mut tape = Tape::new();
        let dist = tape.leaf(vec![d], &[], false).unwrap();
        let a = tape.scalar(alpha);
        let o = to_occupancy(&mut tape, dist, a).unwrap();
        tape.value(o.values)[0]
    }

    #[test]
    fn converter_examples() {
        assert_eq!(occ(0.0, 1.0), 1.0);
        assert_eq!(occ(0.5, 1.0), 0.5);
        assert_eq!(occ(2.0, 1.0), 0.0);
        assert_eq!(occ(0.5, 0.01), 0.0);
        assert_eq!(occ(-0.3, 1.0), 1.0);
    }

    #[test]
    fn converter_rejects_nonpositive_alpha() {
        let mut tape = Tape::new();
        let d = tape.scalar(0.5);
        let a = tape.scalar(0.0);
        assert!(to_occupancy(&mut tape, d, a).is_err());
        let a = tape.scalar(-1.0);
        assert!(to_occupancy(&mut tape, d, a).is_err());
    }

    #[test]
    fn boolean_truth_table() {
        // On binary inputs all four ops are exactly the set operations.
        for a in [0.0, 1.0] {
            for b in [0.0, 1.0] {
                let or = (a == 1.0 || b == 1.0) as i32 as f64;
                let and = (a == 1.0 && b == 1.0) as i32 as f64;
                let a_not_b = (a == 1.0 && b == 0.0) as i32 as f64;
                let b_not_a = (b == 1.0 && a == 0.0) as i32 as f64;
                assert_eq!(union_scalar(a, b), or);
                assert_eq!(intersect_scalar(a, b), and);
                assert_eq!(diff_scalar(a, b), a_not_b);
                assert_eq!(diff_scalar(b, a), b_not_a);
            }
        }
    }

    #[test]
    fn soft_examples() {
        assert_eq!(union_scalar(0.6, 0.7), 1.0);
        assert!((intersect_scalar(0.6, 0.7) - 0.3).abs() < 1e-15);
        assert_eq!(diff_scalar(0.6, 0.7), 0.0);
        assert_eq!(union_scalar(1.0, 0.0), 1.0);
        assert_eq!(intersect_scalar(1.0, 0.0), 0.0);
    }

    #[test]
    fn tape_ops_match_scalar_path() {
        let av = [0.0, 0.25, 0.6, 1.0];
        let bv = [1.0, 0.7, 0.3, 0.0];
        let mut tape = Tape::new();
        let a = tape.leaf(av.to_vec(), &[4], false).unwrap();
        let b = tape.leaf(bv.to_vec(), &[4], false).unwrap();
        let u = csg_union(&mut tape, a, b).unwrap();
        let i = csg_intersect(&mut tape, a, b).unwrap();
        let d = csg_diff(&mut tape, a, b).unwrap();
        for k in 0..4 {
            assert_eq!(tape.value(u)[k], union_scalar(av[k], bv[k]));
            assert_eq!(tape.value(i)[k], intersect_scalar(av[k], bv[k]));
            assert_eq!(tape.value(d)[k], diff_scalar(av[k], bv[k]));
        }
    }

    #[test]
    fn algebra_identities() {
        let mut tape = Tape::new();
        let a = tape.leaf(vec![0.1, 0.5, 0.9], &[3], false).unwrap();
        let ones = tape.leaf(vec![1.0; 3], &[3], false).unwrap();
        let zeros = tape.leaf(vec![0.0; 3], &[3], false).unwrap();
        let i = csg_intersect(&mut tape, a, ones).unwrap();
        let u = csg_union(&mut tape, a, zeros).unwrap();
        for k in 0..3 {
            assert!((tape.value(i)[k] - tape.value(a)[k]).abs() < 1e-15);
            assert_eq!(tape.value(u)[k], tape.value(a)[k]);
        }
    }
}
