//! Analytic signed distance evaluation for the primitive catalog, in two
//! forms: plain f64 functions (used by tree evaluation and as the scalar
//! reference path) and tape-recorded batch evaluation (used by the model,
//! differentiable w.r.t. shape parameters, translation and rotation).
//!
//! Distances follow the usual convention: negative inside, zero on the
//! surface, positive outside.

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};

use serde::{Deserialize, Serialize};

/// Smallest shape parameter (half-extent or radius) used at evaluation
/// time. Raw predictions may be transiently negative; evaluation floors
/// them here while the positivity loss pushes them back.
pub const PARAM_FLOOR: f64 = 1e-4;

/// Guard for quaternion normalization when the raw prediction is ~0.
pub const QUAT_NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Rectangle,
    Circle,
    Box,
    Sphere,
}

impl PrimitiveKind {
    pub fn dim(self) -> usize {
        match self {
            PrimitiveKind::Rectangle | PrimitiveKind::Circle => 2,
            PrimitiveKind::Box | PrimitiveKind::Sphere => 3,
        }
    }

    /// Number of meaningful shape parameters.
    pub fn param_count(self) -> usize {
        match self {
            PrimitiveKind::Circle | PrimitiveKind::Sphere => 1,
            PrimitiveKind::Rectangle => 2,
            PrimitiveKind::Box => 3,
        }
    }

    /// Rotation parameter width: one angle in 2D, a quaternion in 3D.
    pub fn rotation_count(self) -> usize {
        if self.dim() == 2 {
            1
        } else {
            4
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Rectangle => "rectangle",
            PrimitiveKind::Circle => "circle",
            PrimitiveKind::Box => "box",
            PrimitiveKind::Sphere => "sphere",
        }
    }
}

/// One primitive with concrete (evaluation-ready) parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    /// Shape parameters, length `kind.param_count()`.
    pub params: Vec<f64>,
    /// Translation, length `kind.dim()`.
    pub translation: Vec<f64>,
    /// Rotation: `[theta]` in 2D, unit quaternion `[w,x,y,z]` in 3D.
    pub rotation: Vec<f64>,
}

impl Primitive {
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// Signed distance at a world-space point.
    pub fn sdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                point_dim: x.len(),
                prim_dim: self.dim(),
            });
        }
        Ok(match self.kind {
            PrimitiveKind::Circle => {
                let p = transform_point_2d([x[0], x[1]], [self.translation[0], self.translation[1]], self.rotation[0]);
                sdf_circle(p, self.params[0])
            }
            PrimitiveKind::Rectangle => {
                let p = transform_point_2d([x[0], x[1]], [self.translation[0], self.translation[1]], self.rotation[0]);
                sdf_rectangle(p, [self.params[0], self.params[1]])
            }
            PrimitiveKind::Sphere => {
                let p = transform_point_3d(
                    [x[0], x[1], x[2]],
                    [self.translation[0], self.translation[1], self.translation[2]],
                    &self.rotation,
                );
                sdf_sphere(p, self.params[0])
            }
            PrimitiveKind::Box => {
                let p = transform_point_3d(
                    [x[0], x[1], x[2]],
                    [self.translation[0], self.translation[1], self.translation[2]],
                    &self.rotation,
                );
                sdf_box(p, [self.params[0], self.params[1], self.params[2]])
            }
        })
    }

    /// Hard membership: inside or on the surface.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        Ok(self.sdf(x)? <= 0.0)
    }
}

// ── Scalar reference path ───────────────────────────────────────────────

/// Map a world point into the local frame: inverse rotation of `x - t`.
pub fn transform_point_2d(x: [f64; 2], t: [f64; 2], theta: f64) -> [f64; 2] {
    let (dx, dy) = (x[0] - t[0], x[1] - t[1]);
    let (s, c) = theta.sin_cos();
    // R(-theta) applied to (dx, dy)
    [c * dx + s * dy, -s * dx + c * dy]
}

/// Inverse-rotate `x - t` by the (normalized) quaternion `q = [w,x,y,z]`.
pub fn transform_point_3d(x: [f64; 3], t: [f64; 3], q: &[f64]) -> [f64; 3] {
    let v = [x[0] - t[0], x[1] - t[1], x[2] - t[2]];
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
        .sqrt()
        .max(QUAT_NORM_FLOOR);
    let (w, qv) = (q[0] / norm, [q[1] / norm, q[2] / norm, q[3] / norm]);
    // Rotation by the conjugate: v - w*t2 + qv x t2, t2 = 2 (qv x v).
    let t2 = [
        2.0 * (qv[1] * v[2] - qv[2] * v[1]),
        2.0 * (qv[2] * v[0] - qv[0] * v[2]),
        2.0 * (qv[0] * v[1] - qv[1] * v[0]),
    ];
    [
        v[0] - w * t2[0] + qv[1] * t2[2] - qv[2] * t2[1],
        v[1] - w * t2[1] + qv[2] * t2[0] - qv[0] * t2[2],
        v[2] - w * t2[2] + qv[0] * t2[1] - qv[1] * t2[0],
    ]
}

/// Axis-aligned rectangle of half-extents `p` centered at the origin.
pub fn sdf_rectangle(x: [f64; 2], p: [f64; 2]) -> f64 {
    let q = [x[0].abs() - p[0], x[1].abs() - p[1]];
    let outside = (q[0].max(0.0).powi(2) + q[1].max(0.0).powi(2)).sqrt();
    outside + q[0].max(q[1]).min(0.0)
}

pub fn sdf_circle(x: [f64; 2], r: f64) -> f64 {
    (x[0] * x[0] + x[1] * x[1]).sqrt() - r
}

/// Axis-aligned box of half-extents `p` centered at the origin.
pub fn sdf_box(x: [f64; 3], p: [f64; 3]) -> f64 {
    let q = [x[0].abs() - p[0], x[1].abs() - p[1], x[2].abs() - p[2]];
    let outside =
        (q[0].max(0.0).powi(2) + q[1].max(0.0).powi(2) + q[2].max(0.0).powi(2)).sqrt();
    outside + q[0].max(q[1].max(q[2])).min(0.0)
}

pub fn sdf_sphere(x: [f64; 3], r: f64) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() - r
}

// ── Tape path ───────────────────────────────────────────────────────────

/// A predicted primitive on the tape: raw decoder outputs plus the
/// evaluation-ready (floored / normalized) views.
#[derive(Debug, Clone)]
pub struct TapePrimitive {
    pub kind: PrimitiveKind,
    /// Raw shape parameters as predicted, shape `[slots]` where `slots` is
    /// the padded per-kind width (unused slots ignored at evaluation).
    pub raw_params: TensorId,
    pub translation: TensorId,
    pub rotation: TensorId,
}

/// Per-point signed distances of a batch of primitives.
///
/// Output is `[points, prims]`; column `j` is primitive `j`'s distance at
/// every query point, differentiable w.r.t. all primitive tensors.
pub fn eval_primitive_batch(
    tape: &mut Tape,
    points: TensorId,
    prims: &[TapePrimitive],
) -> Result<TensorId> {
    let pshape = tape.shape(points).to_vec();
    if pshape.len() != 2 {
        return Err(Error::InvalidShape {
            op: "eval_primitive_batch",
            shape: pshape,
            reason: "points must be [n, dim]".into(),
        });
    }
    let dim = pshape[1];
    let n = pshape[0];
    let mut cols = Vec::with_capacity(prims.len());
    for prim in prims {
        if prim.kind.dim() != dim {
            return Err(Error::DimensionMismatch {
                point_dim: dim,
                prim_dim: prim.kind.dim(),
            });
        }
        let d = eval_one(tape, points, n, prim)?;
        cols.push(tape.reshape(d, &[n, 1])?);
    }
    tape.concat(&cols, 1)
}

fn eval_one(tape: &mut Tape, points: TensorId, n: usize, prim: &TapePrimitive) -> Result<TensorId> {
    let dim = prim.kind.dim();
    // local = R^{-1} (x - t)
    let t_row = tape.reshape(prim.translation, &[1, dim])?;
    let t_b = tape.broadcast(t_row, &[n, dim])?;
    let delta = tape.sub(points, t_b)?;
    let local = if dim == 2 {
        rotate_inverse_2d(tape, delta, prim.rotation, n)?
    } else {
        rotate_inverse_3d(tape, delta, prim.rotation, n)?
    };
    // Floor shape parameters before use.
    let p_eff = tape.max_with_const(prim.raw_params, PARAM_FLOOR);
    match prim.kind {
        PrimitiveKind::Circle | PrimitiveKind::Sphere => {
            let r = tape.item(p_eff, 0)?;
            let norms = tape.l2_norm_rows(local)?;
            tape.sub(norms, r)
        }
        PrimitiveKind::Rectangle | PrimitiveKind::Box => {
            let p = tape.narrow(p_eff, 0, 0, dim)?;
            let p_row = tape.reshape(p, &[1, dim])?;
            let p_b = tape.broadcast(p_row, &[n, dim])?;
            let abs_local = tape.abs(local);
            let q = tape.sub(abs_local, p_b)?;
            // ||max(q, 0)||
            let q_pos = tape.max_with_const(q, 0.0);
            let outside = tape.l2_norm_rows(q_pos)?;
            // min(max over coords of q, 0)
            let mut m = tape.column(q, 0)?;
            for a in 1..dim {
                let col = tape.column(q, a)?;
                m = tape.max_pair(m, col)?;
            }
            let inside = tape.min_with_const(m, 0.0);
            tape.add(outside, inside)
        }
    }
}

fn rotate_inverse_2d(tape: &mut Tape, delta: TensorId, theta: TensorId, n: usize) -> Result<TensorId> {
    let th = tape.reshape(theta, &[])?;
    let c = tape.cos(th);
    let s = tape.sin(th);
    let dx = tape.column(delta, 0)?;
    let dy = tape.column(delta, 1)?;
    // R(-theta): (c dx + s dy, -s dx + c dy)
    let cx = tape.mul(dx, c)?;
    let sy = tape.mul(dy, s)?;
    let x_new = tape.add(cx, sy)?;
    let sx = tape.mul(dx, s)?;
    let cy = tape.mul(dy, c)?;
    let neg_sx = tape.scale(sx, -1.0);
    let y_new = tape.add(neg_sx, cy)?;
    let xr = tape.reshape(x_new, &[n, 1])?;
    let yr = tape.reshape(y_new, &[n, 1])?;
    tape.concat(&[xr, yr], 1)
}

fn rotate_inverse_3d(tape: &mut Tape, delta: TensorId, quat: TensorId, n: usize) -> Result<TensorId> {
    // Normalize the quaternion (floored to avoid division by ~0).
    let norm = tape.l2_norm_rows(quat)?;
    let norm = tape.max_with_const(norm, QUAT_NORM_FLOOR);
    let qn = tape.div(quat, norm)?;
    let w = tape.item(qn, 0)?;
    let qx = tape.item(qn, 1)?;
    let qy = tape.item(qn, 2)?;
    let qz = tape.item(qn, 3)?;
    let vx = tape.column(delta, 0)?;
    let vy = tape.column(delta, 1)?;
    let vz = tape.column(delta, 2)?;

    // t = 2 (qv x v), per component over the point batch.
    let cross = |tape: &mut Tape, a1: TensorId, b2: TensorId, a2: TensorId, b1: TensorId| -> Result<TensorId> {
        let m1 = tape.mul(b2, a1)?;
        let m2 = tape.mul(b1, a2)?;
        tape.sub(m1, m2)
    };
    let tx = cross(tape, qy, vz, qz, vy)?;
    let tx = tape.scale(tx, 2.0);
    let ty = cross(tape, qz, vx, qx, vz)?;
    let ty = tape.scale(ty, 2.0);
    let tz = cross(tape, qx, vy, qy, vx)?;
    let tz = tape.scale(tz, 2.0);

    // v' = v - w t + qv x t
    let out = |tape: &mut Tape, v: TensorId, t: TensorId, c1: TensorId, t1: TensorId, c2: TensorId, t2: TensorId| -> Result<TensorId> {
        let wt = tape.mul(t, w)?;
        let a = tape.sub(v, wt)?;
        let p1 = tape.mul(t1, c1)?;
        let p2 = tape.mul(t2, c2)?;
        let cr = tape.sub(p1, p2)?;
        tape.add(a, cr)
    };
    let ox = out(tape, vx, tx, qy, tz, qz, ty)?;
    let oy = out(tape, vy, ty, qz, tx, qx, tz)?;
    let oz = out(tape, vz, tz, qx, ty, qy, tx)?;
    let oxr = tape.reshape(ox, &[n, 1])?;
    let oyr = tape.reshape(oy, &[n, 1])?;
    let ozr = tape.reshape(oz, &[n, 1])?;
    tape.concat(&[oxr, oyr, ozr], 1)
}
