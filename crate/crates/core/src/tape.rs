//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Define-by-run: every forward call records one node on the tape, and
//! `backward` replays the tape in reverse creation order (which is a valid
//! reverse topological order, since parents are always created before their
//! consumers). A tape lives for one forward/backward pass and is rebuilt
//! for the next one.
//!
//! All values are 64-bit floats in row-major order. A scalar has shape `[]`
//! and one data element.

use crate::error::{Error, Result};

pub type TensorId = usize;

/// A recorded operation, holding parent ids plus whatever the backward
/// rule needs besides the stored forward values.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Matmul(TensorId, TensorId),
    Conv2d {
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        pad: usize,
    },
    Conv3d {
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        pad: usize,
    },
    LeakyRelu(TensorId, f64),
    Sigmoid(TensorId),
    Tanh(TensorId),
    /// Softmax along the last axis; backward uses the stored output.
    Softmax(TensorId),
    Ln(TensorId),
    Sin(TensorId),
    Cos(TensorId),
    Clamp(TensorId, f64, f64),
    Abs(TensorId),
    Square(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    MaxConst(TensorId, f64),
    Scale(TensorId, f64),
    Offset(TensorId),
    L2NormRows(TensorId),
    Concat(Vec<TensorId>, usize),
    Narrow {
        input: TensorId,
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape(TensorId),
    Broadcast(TensorId),
    WeightedSum {
        values: TensorId,
        weights: TensorId,
    },
}

#[derive(Debug)]
struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Wengert tape: arena of tensors plus their producing operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf tensor. Gradient storage is allocated iff `requires_grad`.
    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        if numel(shape) != data.len() {
            return Err(Error::InvalidShape {
                op: "leaf",
                shape: shape.to_vec(),
                reason: format!("shape product {} != data length {}", numel(shape), data.len()),
            });
        }
        Ok(self.push(data, shape.to_vec(), requires_grad, Op::Leaf))
    }

    /// Non-differentiable constant tensor.
    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<TensorId> {
        self.leaf(data, shape, false)
    }

    /// Scalar constant (shape `[]`).
    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push(vec![v], vec![], false, Op::Leaf)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id].requires_grad
    }

    /// Accumulated gradient, present only for requires_grad tensors.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id].grad.as_deref()
    }

    /// Scalar convenience accessor.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        self.nodes[id].data[0]
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        let grad = requires_grad.then(|| vec![0.0; data.len()]);
        self.nodes.push(Node {
            data,
            shape,
            requires_grad,
            grad,
            op,
        });
        self.nodes.len() - 1
    }

    /// Record an op result. The op is kept only if some parent needs
    /// gradients; otherwise the node degenerates to a constant leaf.
    fn push_op(&mut self, data: Vec<f64>, shape: Vec<usize>, parents: &[TensorId], op: Op) -> TensorId {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.push(data, shape, requires_grad, op)
    }

    // ── Elementwise binary ops ──────────────────────────────────────────

    fn binary(
        &mut self,
        name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let (sa, sb) = (&self.nodes[a].shape, &self.nodes[b].shape);
        let (da, db) = (&self.nodes[a].data, &self.nodes[b].data);
        let (data, shape) = if sa == sb {
            (
                da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
                sa.clone(),
            )
        } else if sb.is_empty() {
            let y = db[0];
            (da.iter().map(|&x| f(x, y)).collect(), sa.clone())
        } else if sa.is_empty() {
            let x = da[0];
            (db.iter().map(|&y| f(x, y)).collect(), sb.clone())
        } else {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        };
        Ok(self.push_op(data, shape, &[a, b], op))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    // ── Matrix products ─────────────────────────────────────────────────

    /// `[m,k] @ [k,n] -> [m,n]`, or `[m,k] @ [k] -> [m]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.nodes[a].shape.clone();
        let sb = self.nodes[b].shape.clone();
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[0], sa[1]);
        let (n, out_shape) = match sb.len() {
            2 if sb[0] == k => (sb[1], vec![m, sb[1]]),
            1 if sb[0] == k => (1, vec![m]),
            _ => return Err(mismatch()),
        };
        let da = &self.nodes[a].data;
        let db = &self.nodes[b].data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &da[i * k..(i + 1) * k];
            for (p, &x) in row.iter().enumerate() {
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &w) in orow.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        Ok(self.push_op(out, out_shape, &[a, b], Op::Matmul(a, b)))
    }

    /// Eq-style selection sum: `values [p,m]` weighted by `weights [m] -> [p]`.
    pub fn weighted_sum(&mut self, values: TensorId, weights: TensorId) -> Result<TensorId> {
        let sv = self.nodes[values].shape.clone();
        let sw = self.nodes[weights].shape.clone();
        if sv.len() != 2 || sw.len() != 1 || sv[1] != sw[0] {
            return Err(Error::ShapeMismatch {
                op: "weighted_sum",
                lhs: sv,
                rhs: sw,
            });
        }
        let (p, m) = (sv[0], sv[1]);
        let dv = &self.nodes[values].data;
        let dw = &self.nodes[weights].data;
        let mut out = vec![0.0; p];
        for i in 0..p {
            let row = &dv[i * m..(i + 1) * m];
            out[i] = row.iter().zip(dw).map(|(&v, &w)| v * w).sum();
        }
        Ok(self.push_op(out, vec![p], &[values, weights], Op::WeightedSum { values, weights }))
    }

    // ── Convolutions ────────────────────────────────────────────────────

    /// 2D convolution: input `[c_in,h,w]`, weight `[c_out,c_in,kh,kw]`,
    /// optional bias `[c_out]`. Zero padding.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId> {
        let si = self.nodes[input].shape.clone();
        let sw = self.nodes[weight].shape.clone();
        if si.len() != 3 || sw.len() != 4 || si[0] != sw[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: si,
                rhs: sw,
            });
        }
        let (c_in, h, w) = (si[0], si[1], si[2]);
        let (c_out, kh, kw) = (sw[0], sw[2], sw[3]);
        if let Some(b) = bias {
            if self.nodes[b].shape != [c_out] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: self.nodes[b].shape.clone(),
                    rhs: vec![c_out],
                });
            }
        }
        let oh = conv_out(h, kh, stride, pad, "conv2d")?;
        let ow = conv_out(w, kw, stride, pad, "conv2d")?;
        let din = &self.nodes[input].data;
        let dw = &self.nodes[weight].data;
        let mut out = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            let base = if let Some(b) = bias {
                self.nodes[b].data[co]
            } else {
                0.0
            };
            for oy in 0..oh {
                let base_y = oy * stride;
                let ky_lo = pad.saturating_sub(base_y);
                let ky_end = kh.min((h + pad).saturating_sub(base_y));
                for ox in 0..ow {
                    let base_x = ox * stride;
                    let kx_lo = pad.saturating_sub(base_x);
                    let kx_end = kw.min((w + pad).saturating_sub(base_x));
                    let mut acc = base;
                    for ci in 0..c_in {
                        for ky in ky_lo..ky_end {
                            let iy = base_y + ky - pad;
                            let xrow = (ci * h + iy) * w + base_x;
                            let wrow = ((co * c_in + ci) * kh + ky) * kw;
                            let xs = &din[xrow + kx_lo - pad..xrow + kx_end - pad];
                            let ws = &dw[wrow + kx_lo..wrow + kx_end];
                            acc += xs.iter().zip(ws).map(|(&x, &w)| x * w).sum::<f64>();
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let mut parents = vec![input, weight];
        parents.extend(bias);
        Ok(self.push_op(
            out,
            vec![c_out, oh, ow],
            &parents,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
        ))
    }

    /// 3D convolution: input `[c_in,d,h,w]`, weight `[c_out,c_in,kd,kh,kw]`.
    pub fn conv3d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId> {
        let si = self.nodes[input].shape.clone();
        let sw = self.nodes[weight].shape.clone();
        if si.len() != 4 || sw.len() != 5 || si[0] != sw[1] {
            return Err(Error::ShapeMismatch {
                op: "conv3d",
                lhs: si,
                rhs: sw,
            });
        }
        let (c_in, d, h, w) = (si[0], si[1], si[2], si[3]);
        let (c_out, kd, kh, kw) = (sw[0], sw[2], sw[3], sw[4]);
        if let Some(b) = bias {
            if self.nodes[b].shape != [c_out] {
                return Err(Error::ShapeMismatch {
                    op: "conv3d",
                    lhs: self.nodes[b].shape.clone(),
                    rhs: vec![c_out],
                });
            }
        }
        let od = conv_out(d, kd, stride, pad, "conv3d")?;
        let oh = conv_out(h, kh, stride, pad, "conv3d")?;
        let ow = conv_out(w, kw, stride, pad, "conv3d")?;
        let din = &self.nodes[input].data;
        let dwt = &self.nodes[weight].data;
        let mut out = vec![0.0; c_out * od * oh * ow];
        for co in 0..c_out {
            let base = if let Some(b) = bias {
                self.nodes[b].data[co]
            } else {
                0.0
            };
            for oz in 0..od {
                let base_z = oz * stride;
                let kz_lo = pad.saturating_sub(base_z);
                let kz_end = kd.min((d + pad).saturating_sub(base_z));
                for oy in 0..oh {
                    let base_y = oy * stride;
                    let ky_lo = pad.saturating_sub(base_y);
                    let ky_end = kh.min((h + pad).saturating_sub(base_y));
                    for ox in 0..ow {
                        let base_x = ox * stride;
                        let kx_lo = pad.saturating_sub(base_x);
                        let kx_end = kw.min((w + pad).saturating_sub(base_x));
                        let mut acc = base;
                        for ci in 0..c_in {
                            for kz in kz_lo..kz_end {
                                let iz = base_z + kz - pad;
                                for ky in ky_lo..ky_end {
                                    let iy = base_y + ky - pad;
                                    let xrow = ((ci * d + iz) * h + iy) * w + base_x;
                                    let wrow = (((co * c_in + ci) * kd + kz) * kh + ky) * kw;
                                    let xs = &din[xrow + kx_lo - pad..xrow + kx_end - pad];
                                    let ws = &dwt[wrow + kx_lo..wrow + kx_end];
                                    acc += xs.iter().zip(ws).map(|(&x, &w)| x * w).sum::<f64>();
                                }
                            }
                        }
                        out[((co * od + oz) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        let mut parents = vec![input, weight];
        parents.extend(bias);
        Ok(self.push_op(
            out,
            vec![c_out, od, oh, ow],
            &parents,
            Op::Conv3d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
        ))
    }

    // ── Elementwise unary ops ───────────────────────────────────────────

    fn unary(&mut self, x: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let data = self.nodes[x].data.iter().map(|&v| f(v)).collect();
        let shape = self.nodes[x].shape.clone();
        self.push_op(data, shape, &[x], op)
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: f64) -> TensorId {
        self.unary(x, |v| if v >= 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn ln(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn sin(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::sin, Op::Sin(x))
    }

    pub fn cos(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::cos, Op::Cos(x))
    }

    /// Clip to `[lo, hi]`. Gradient passes through on the closed interval
    /// and is zero outside, so values saturating exactly at a bound still
    /// receive gradient.
    pub fn clamp(&mut self, x: TensorId, lo: f64, hi: f64) -> TensorId {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: TensorId) -> TensorId {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Elementwise `max(x, c)`; gradient passes through where `x >= c`.
    pub fn max_with_const(&mut self, x: TensorId, c: f64) -> TensorId {
        self.unary(x, |v| v.max(c), Op::MaxConst(x, c))
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn offset(&mut self, x: TensorId, c: f64) -> TensorId {
        self.unary(x, |v| v + c, Op::Offset(x))
    }

    /// Elementwise `min(x, c)` composed from catalog ops.
    pub fn min_with_const(&mut self, x: TensorId, c: f64) -> TensorId {
        let neg = self.scale(x, -1.0);
        let m = self.max_with_const(neg, -c);
        self.scale(m, -1.0)
    }

    /// Elementwise `max(a, b)` via `(a + b + |a - b|) / 2`; ties split the
    /// gradient evenly between both operands.
    pub fn max_pair(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let s = self.add(a, b)?;
        let d = self.sub(a, b)?;
        let ad = self.abs(d);
        let t = self.add(s, ad)?;
        Ok(self.scale(t, 0.5))
    }

    // ── Softmax ─────────────────────────────────────────────────────────

    /// Softmax along the last axis of a rank-1 or rank-2 tensor.
    /// Rows are shifted by their max before exponentiation.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.nodes[x].shape.clone();
        let n = match shape.len() {
            1 => shape[0],
            2 => shape[1],
            _ => {
                return Err(Error::InvalidShape {
                    op: "softmax",
                    shape,
                    reason: "expected rank 1 or 2".into(),
                })
            }
        };
        if n == 0 {
            return Err(Error::InvalidShape {
                op: "softmax",
                shape,
                reason: "empty axis".into(),
            });
        }
        let src = &self.nodes[x].data;
        let mut out = vec![0.0; src.len()];
        for (row_in, row_out) in src.chunks(n).zip(out.chunks_mut(n)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - max).exp();
                denom += *o;
            }
            for o in row_out.iter_mut() {
                *o /= denom;
            }
        }
        Ok(self.push_op(out, shape, &[x], Op::Softmax(x)))
    }

    // ── Reductions ──────────────────────────────────────────────────────

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.nodes[x].data.iter().sum();
        self.push_op(vec![s], vec![], &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: TensorId) -> TensorId {
        let n = self.nodes[x].data.len() as f64;
        let s: f64 = self.nodes[x].data.iter().sum();
        self.push_op(vec![s / n], vec![], &[x], Op::Mean(x))
    }

    /// Row L2 norms: `[m,n] -> [m]`; a rank-1 input reduces to a scalar.
    pub fn l2_norm_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.nodes[x].shape.clone();
        let (rows, cols, out_shape) = match shape.len() {
            1 => (1, shape[0], vec![]),
            2 => (shape[0], shape[1], vec![shape[0]]),
            _ => {
                return Err(Error::InvalidShape {
                    op: "l2_norm_rows",
                    shape,
                    reason: "expected rank 1 or 2".into(),
                })
            }
        };
        let src = &self.nodes[x].data;
        let mut out = vec![0.0; rows];
        for i in 0..rows {
            out[i] = src[i * cols..(i + 1) * cols]
                .iter()
                .map(|&v| v * v)
                .sum::<f64>()
                .sqrt();
        }
        Ok(self.push_op(out, out_shape, &[x], Op::L2NormRows(x)))
    }

    // ── Shape ops ───────────────────────────────────────────────────────

    pub fn reshape(&mut self, x: TensorId, new_shape: &[usize]) -> Result<TensorId> {
        if numel(new_shape) != self.nodes[x].data.len() {
            return Err(Error::InvalidShape {
                op: "reshape",
                shape: new_shape.to_vec(),
                reason: format!("element count != {}", self.nodes[x].data.len()),
            });
        }
        let data = self.nodes[x].data.clone();
        Ok(self.push_op(data, new_shape.to_vec(), &[x], Op::Reshape(x)))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: vec![],
                reason: "no inputs".into(),
            });
        }
        let first = self.nodes[parts[0]].shape.clone();
        if axis >= first.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: first,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = &self.nodes[p].shape;
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.clone(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; numel(&out_shape)];
        let row_out = axis_total * inner;
        let mut offset = 0;
        for &p in parts {
            let s_axis = self.nodes[p].shape[axis];
            let row_in = s_axis * inner;
            let src = &self.nodes[p].data;
            for o in 0..outer {
                out[o * row_out + offset..o * row_out + offset + row_in]
                    .copy_from_slice(&src[o * row_in..(o + 1) * row_in]);
            }
            offset += row_in;
        }
        Ok(self.push_op(out, out_shape, parts, Op::Concat(parts.to_vec(), axis)))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: TensorId, axis: usize, start: usize, len: usize) -> Result<TensorId> {
        let shape = self.nodes[x].shape.clone();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::InvalidShape {
                op: "narrow",
                shape,
                reason: format!("axis {axis}, range {start}..{}", start + len),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let row_in = shape[axis] * inner;
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = vec![0.0; outer * len * inner];
        let src = &self.nodes[x].data;
        for o in 0..outer {
            out[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&src[o * row_in + start * inner..o * row_in + (start + len) * inner]);
        }
        Ok(self.push_op(
            out,
            out_shape,
            &[x],
            Op::Narrow {
                input: x,
                axis,
                start,
                len,
            },
        ))
    }

    /// Column `j` of a rank-2 tensor as a rank-1 tensor.
    pub fn column(&mut self, x: TensorId, j: usize) -> Result<TensorId> {
        let rows = match self.nodes[x].shape.as_slice() {
            [r, _] => *r,
            s => {
                return Err(Error::InvalidShape {
                    op: "column",
                    shape: s.to_vec(),
                    reason: "expected rank 2".into(),
                })
            }
        };
        let col = self.narrow(x, 1, j, 1)?;
        self.reshape(col, &[rows])
    }

    /// Element `i` of a rank-1 tensor as a scalar.
    pub fn item(&mut self, x: TensorId, i: usize) -> Result<TensorId> {
        if self.nodes[x].shape.len() != 1 {
            return Err(Error::InvalidShape {
                op: "item",
                shape: self.nodes[x].shape.clone(),
                reason: "expected rank 1".into(),
            });
        }
        let e = self.narrow(x, 0, i, 1)?;
        self.reshape(e, &[])
    }

    /// Broadcast to `target`, numpy-style: shapes align at the trailing
    /// axes and size-1 (or missing) source axes expand.
    pub fn broadcast(&mut self, x: TensorId, target: &[usize]) -> Result<TensorId> {
        let src_shape = self.nodes[x].shape.clone();
        let strides = broadcast_strides(&src_shape, target).ok_or(Error::ShapeMismatch {
            op: "broadcast",
            lhs: src_shape.clone(),
            rhs: target.to_vec(),
        })?;
        let src = &self.nodes[x].data;
        let total = numel(target);
        let mut out = vec![0.0; total];
        let mut idx = vec![0usize; target.len()];
        for slot in out.iter_mut() {
            let src_off: usize = idx.iter().zip(&strides).map(|(&i, &s)| i * s).sum();
            *slot = src[src_off];
            for d in (0..target.len()).rev() {
                idx[d] += 1;
                if idx[d] < target[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(self.push_op(out, target.to_vec(), &[x], Op::Broadcast(x)))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Populates `grad` buffers of every
    /// requires_grad tensor on the tape. Running twice without `zero_grads`
    /// in between is an error.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if !self.nodes[root].shape.is_empty() {
            return Err(Error::NonScalarRoot {
                shape: self.nodes[root].shape.clone(),
            });
        }
        if !self.nodes[root].requires_grad {
            return Err(Error::DetachedRoot);
        }
        if self.backward_done {
            return Err(Error::DoubleBackward);
        }
        self.backward_done = true;
        self.nodes[root].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..=root).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            // Parents always precede node i, so splitting at i gives
            // simultaneous access to the node and its parents.
            let (parents, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let g = node.grad.as_ref().unwrap();
            step_backward(node, g, parents);
        }
        Ok(())
    }

    /// Clear all gradient buffers and re-arm backward.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = &mut n.grad {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self.backward_done = false;
    }
}

fn conv_out(n: usize, k: usize, stride: usize, pad: usize, op: &'static str) -> Result<usize> {
    let padded = n + 2 * pad;
    if padded < k || stride == 0 {
        return Err(Error::InvalidShape {
            op,
            shape: vec![n],
            reason: format!("kernel {k} does not fit input {n} with pad {pad}"),
        });
    }
    Ok((padded - k) / stride + 1)
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Per-target-axis source strides for a broadcast, or None if incompatible.
fn broadcast_strides(src: &[usize], target: &[usize]) -> Option<Vec<usize>> {
    if src.len() > target.len() {
        return None;
    }
    let offset = target.len() - src.len();
    let mut real = vec![0usize; src.len()];
    let mut acc = 1;
    for d in (0..src.len()).rev() {
        real[d] = acc;
        acc *= src[d];
    }
    let mut strides = vec![0usize; target.len()];
    for d in 0..target.len() {
        if d < offset {
            strides[d] = 0;
        } else {
            let s = src[d - offset];
            if s == target[d] {
                strides[d] = real[d - offset];
            } else if s == 1 {
                strides[d] = 0;
            } else {
                return None;
            }
        }
    }
    Some(strides)
}

fn accumulate(parent: &mut Node, idx: usize, v: f64) {
    if let Some(g) = parent.grad.as_mut() {
        g[idx] += v;
    }
}

/// Add `v` into a parent's gradient treating the parent as the (possibly
/// scalar-broadcast) operand of an elementwise binary op.
fn acc_binary(parent: &mut Node, idx: usize, v: f64) {
    if parent.shape.is_empty() {
        accumulate(parent, 0, v);
    } else {
        accumulate(parent, idx, v);
    }
}

fn binary_operand(parent: &Node, idx: usize) -> f64 {
    if parent.shape.is_empty() {
        parent.data[0]
    } else {
        parent.data[idx]
    }
}


fn step_backward(node: &Node, g: &[f64], parents: &mut [Node]) {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for (i, &gi) in g.iter().enumerate() {
                acc_binary(&mut parents[*a], i, gi);
            }
            for (i, &gi) in g.iter().enumerate() {
                acc_binary(&mut parents[*b], i, gi);
            }
        }
        Op::Sub(a, b) => {
            for (i, &gi) in g.iter().enumerate() {
                acc_binary(&mut parents[*a], i, gi);
            }
            for (i, &gi) in g.iter().enumerate() {
                acc_binary(&mut parents[*b], i, -gi);
            }
        }
        Op::Mul(a, b) => {
            for (i, &gi) in g.iter().enumerate() {
                let bv = binary_operand(&parents[*b], i);
                acc_binary(&mut parents[*a], i, gi * bv);
            }
            for (i, &gi) in g.iter().enumerate() {
                let av = binary_operand(&parents[*a], i);
                acc_binary(&mut parents[*b], i, gi * av);
            }
        }
        Op::Div(a, b) => {
            for (i, &gi) in g.iter().enumerate() {
                let bv = binary_operand(&parents[*b], i);
                acc_binary(&mut parents[*a], i, gi / bv);
            }
            for (i, &gi) in g.iter().enumerate() {
                let av = binary_operand(&parents[*a], i);
                let bv = binary_operand(&parents[*b], i);
                acc_binary(&mut parents[*b], i, -gi * av / (bv * bv));
            }
        }
        Op::Matmul(a, b) => {
            let (m, k) = (parents[*a].shape[0], parents[*a].shape[1]);
            let n = if parents[*b].shape.len() == 2 {
                parents[*b].shape[1]
            } else {
                1
            };
            if a == b {
                // Aliased square product: accumulate both contributions.
                for i in 0..m {
                    for p in 0..k {
                        let brow = &parents[*b].data[p * n..(p + 1) * n];
                        let grow = &g[i * n..(i + 1) * n];
                        let da: f64 = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        accumulate(&mut parents[*a], i * k + p, da);
                    }
                }
                for p in 0..k {
                    for j in 0..n {
                        let mut db = 0.0;
                        for i in 0..m {
                            db += parents[*a].data[i * k + p] * g[i * n + j];
                        }
                        accumulate(&mut parents[*b], p * n + j, db);
                    }
                }
                return;
            }
            let mut ga = parents[*a].grad.take();
            let mut gb = parents[*b].grad.take();
            {
                let da = &parents[*a].data;
                let db = &parents[*b].data;
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    // dA = g @ B^T
                    if let Some(ga_s) = ga.as_deref_mut() {
                        let arow = &mut ga_s[i * k..(i + 1) * k];
                        for (p, slot) in arow.iter_mut().enumerate() {
                            let brow = &db[p * n..(p + 1) * n];
                            *slot += grow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<f64>();
                        }
                    }
                    // dB = A^T @ g, accumulated row-wise.
                    if let Some(gb_s) = gb.as_deref_mut() {
                        let arow = &da[i * k..(i + 1) * k];
                        for (p, &av) in arow.iter().enumerate() {
                            let brow = &mut gb_s[p * n..(p + 1) * n];
                            for (slot, &gv) in brow.iter_mut().zip(grow) {
                                *slot += av * gv;
                            }
                        }
                    }
                }
            }
            parents[*a].grad = ga;
            parents[*b].grad = gb;
        }
        Op::WeightedSum { values, weights } => {
            debug_assert_ne!(values, weights);
            let m = parents[*weights].shape[0];
            let p = parents[*values].shape[0];
            let mut gv = parents[*values].grad.take();
            let mut gw = parents[*weights].grad.take();
            {
                let dv = &parents[*values].data;
                let dw = &parents[*weights].data;
                for i in 0..p {
                    let gi = g[i];
                    if let Some(gv_s) = gv.as_deref_mut() {
                        let row = &mut gv_s[i * m..(i + 1) * m];
                        for (slot, &w) in row.iter_mut().zip(dw) {
                            *slot += gi * w;
                        }
                    }
                    if let Some(gw_s) = gw.as_deref_mut() {
                        let row = &dv[i * m..(i + 1) * m];
                        for (slot, &v) in gw_s.iter_mut().zip(row) {
                            *slot += gi * v;
                        }
                    }
                }
            }
            parents[*values].grad = gv;
            parents[*weights].grad = gw;
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            pad,
        } => {
            debug_assert_ne!(input, weight);
            let (c_in, h, w) = (
                parents[*input].shape[0],
                parents[*input].shape[1],
                parents[*input].shape[2],
            );
            let (c_out, kh, kw) = (
                parents[*weight].shape[0],
                parents[*weight].shape[2],
                parents[*weight].shape[3],
            );
            let (oh, ow) = (node.shape[1], node.shape[2]);
            let (s, p) = (*stride, *pad);
            // Work on taken grad buffers so the hot loops see plain slices.
            let mut gx = parents[*input].grad.take();
            let mut gw = parents[*weight].grad.take();
            let mut db = vec![0.0; c_out];
            {
                let x = &parents[*input].data;
                let wt = &parents[*weight].data;
                for co in 0..c_out {
                    for oy in 0..oh {
                        let base_y = oy * s;
                        let ky_lo = p.saturating_sub(base_y);
                        let ky_end = kh.min((h + p).saturating_sub(base_y));
                        for ox in 0..ow {
                            let gv = g[(co * oh + oy) * ow + ox];
                            if gv == 0.0 {
                                continue;
                            }
                            db[co] += gv;
                            let base_x = ox * s;
                            let kx_lo = p.saturating_sub(base_x);
                            let kx_end = kw.min((w + p).saturating_sub(base_x));
                            for ci in 0..c_in {
                                for ky in ky_lo..ky_end {
                                    let iy = base_y + ky - p;
                                    // x range is xrow + kx - p; kx >= kx_lo
                                    // keeps the offsets non-negative.
                                    let xrow = (ci * h + iy) * w + base_x;
                                    let wrow = ((co * c_in + ci) * kh + ky) * kw;
                                    let xr = xrow + kx_lo - p..xrow + kx_end - p;
                                    let wr = wrow + kx_lo..wrow + kx_end;
                                    if let Some(gw_s) = gw.as_deref_mut() {
                                        for (slot, &xv) in
                                            gw_s[wr.clone()].iter_mut().zip(&x[xr.clone()])
                                        {
                                            *slot += gv * xv;
                                        }
                                    }
                                    if let Some(gx_s) = gx.as_deref_mut() {
                                        for (slot, &wv) in
                                            gx_s[xr].iter_mut().zip(&wt[wr])
                                        {
                                            *slot += gv * wv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            parents[*input].grad = gx;
            parents[*weight].grad = gw;
            if let Some(b) = bias {
                for (co, &v) in db.iter().enumerate() {
                    accumulate(&mut parents[*b], co, v);
                }
            }
        }
        Op::Conv3d {
            input,
            weight,
            bias,
            stride,
            pad,
        } => {
            debug_assert_ne!(input, weight);
            let (c_in, d, h, w) = (
                parents[*input].shape[0],
                parents[*input].shape[1],
                parents[*input].shape[2],
                parents[*input].shape[3],
            );
            let (c_out, kd, kh, kw) = (
                parents[*weight].shape[0],
                parents[*weight].shape[2],
                parents[*weight].shape[3],
                parents[*weight].shape[4],
            );
            let (od, oh, ow) = (node.shape[1], node.shape[2], node.shape[3]);
            let (s, p) = (*stride, *pad);
            let mut gx = parents[*input].grad.take();
            let mut gw = parents[*weight].grad.take();
            let mut db = vec![0.0; c_out];
            {
                let x = &parents[*input].data;
                let wt = &parents[*weight].data;
                for co in 0..c_out {
                    for oz in 0..od {
                        let base_z = oz * s;
                        let kz_lo = p.saturating_sub(base_z);
                        let kz_end = kd.min((d + p).saturating_sub(base_z));
                        for oy in 0..oh {
                            let base_y = oy * s;
                            let ky_lo = p.saturating_sub(base_y);
                            let ky_end = kh.min((h + p).saturating_sub(base_y));
                            for ox in 0..ow {
                                let gv = g[((co * od + oz) * oh + oy) * ow + ox];
                                if gv == 0.0 {
                                    continue;
                                }
                                db[co] += gv;
                                let base_x = ox * s;
                                let kx_lo = p.saturating_sub(base_x);
                                let kx_end = kw.min((w + p).saturating_sub(base_x));
                                for ci in 0..c_in {
                                    for kz in kz_lo..kz_end {
                                        let iz = base_z + kz - p;
                                        for ky in ky_lo..ky_end {
                                            let iy = base_y + ky - p;
                                            let xrow = ((ci * d + iz) * h + iy) * w + base_x;
                                            let wrow =
                                                (((co * c_in + ci) * kd + kz) * kh + ky) * kw;
                                            let xr = xrow + kx_lo - p..xrow + kx_end - p;
                                            let wr = wrow + kx_lo..wrow + kx_end;
                                            if let Some(gw_s) = gw.as_deref_mut() {
                                                for (slot, &xv) in
                                                    gw_s[wr.clone()].iter_mut().zip(&x[xr.clone()])
                                                {
                                                    *slot += gv * xv;
                                                }
                                            }
                                            if let Some(gx_s) = gx.as_deref_mut() {
                                                for (slot, &wv) in
                                                    gx_s[xr].iter_mut().zip(&wt[wr])
                                                {
                                                    *slot += gv * wv;
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            parents[*input].grad = gx;
            parents[*weight].grad = gw;
            if let Some(b) = bias {
                for (co, &v) in db.iter().enumerate() {
                    accumulate(&mut parents[*b], co, v);
                }
            }
        }
        Op::LeakyRelu(x, slope) => {
            for (i, &gi) in g.iter().enumerate() {
                let v = parents[*x].data[i];
                accumulate(&mut parents[*x], i, if v >= 0.0 { gi } else { gi * slope });
            }
        }
        Op::Sigmoid(x) => {
            for (i, &gi) in g.iter().enumerate() {
                let y = node.data[i];
                accumulate(&mut parents[*x], i, gi * y * (1.0 - y));
            }
        }
        Op::Tanh(x) => {
            for (i, &gi) in g.iter().enumerate() {
                let y = node.data[i];
                accumulate(&mut parents[*x], i, gi * (1.0 - y * y));
            }
        }
        Op::Softmax(x) => {
            let n = *node.shape.last().unwrap();
            for r in 0..node.data.len() / n {
                let y = &node.data[r * n..(r + 1) * n];
                let gr = &g[r * n..(r + 1) * n];
                let dot: f64 = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for j in 0..n {
                    accumulate(&mut parents[*x], r * n + j, y[j] * (gr[j] - dot));
                }
            }
        }
        Op::Ln(x) => {
            for (i, &gi) in g.iter().enumerate() {
                let v = parents[*x].data[i];
                accumulate(&mut parents[*x], i, gi / v);
            }
        }
        Op::Sin(x) => {
            for (i, &gi) in g.iter().enumerate() {
                let v = parents[*x].data[i];
                accumulate(&mut parents[*x], i, gi * v.cos());
            }
        }
        Op::Cos(x) => {
            for (i, &gi) in g.iter().enumerate() {
                let v = parents[*x].data[i];
                accumulate(&mut parents[*x], i, -gi * v.sin());
            }
        }
        Op::Clamp(x, lo, hi) => {
            for (i, &gi) in g.iter().enumerate() {
                let v = parents[*x].data[i];
                if v >= *lo && v <= *hi {
                    accumulate(&mut parents[*x], i, gi);
                }
            }
        }
        Op::Abs(x) => {
            for (i, &gi) in g.iter().enumerate() {
                let v = parents[*x].data[i];
                let s = if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                accumulate(&mut parents[*x], i, gi * s);
            }
        }
        Op::Square(x) => {
            for (i, &gi) in g.iter().enumerate() {
                let v = parents[*x].data[i];
                accumulate(&mut parents[*x], i, gi * 2.0 * v);
            }
        }
        Op::Sum(x) => {
            let gv = g[0];
            if let Some(pg) = parents[*x].grad.as_mut() {
                pg.iter_mut().for_each(|p| *p += gv);
            }
        }
        Op::Mean(x) => {
            let gv = g[0] / parents[*x].data.len() as f64;
            if let Some(pg) = parents[*x].grad.as_mut() {
                pg.iter_mut().for_each(|p| *p += gv);
            }
        }
        Op::MaxConst(x, c) => {
            for (i, &gi) in g.iter().enumerate() {
                if parents[*x].data[i] >= *c {
                    accumulate(&mut parents[*x], i, gi);
                }
            }
        }
        Op::Scale(x, c) => {
            for (i, &gi) in g.iter().enumerate() {
                accumulate(&mut parents[*x], i, gi * c);
            }
        }
        Op::Offset(x) => {
            for (i, &gi) in g.iter().enumerate() {
                accumulate(&mut parents[*x], i, gi);
            }
        }
        Op::L2NormRows(x) => {
            let cols = if parents[*x].shape.len() == 1 {
                parents[*x].shape[0]
            } else {
                parents[*x].shape[1]
            };
            for (r, &gi) in g.iter().enumerate() {
                let norm = node.data[r];
                if norm == 0.0 {
                    continue;
                }
                for j in 0..cols {
                    let v = parents[*x].data[r * cols + j];
                    accumulate(&mut parents[*x], r * cols + j, gi * v / norm);
                }
            }
        }
        Op::Concat(parts, axis) => {
            let inner: usize = node.shape[axis + 1..].iter().product();
            let outer: usize = node.shape[..*axis].iter().product();
            let row_out = node.shape[*axis] * inner;
            let mut offset = 0;
            for &p in parts {
                let row_in = parents[p].shape[*axis] * inner;
                for o in 0..outer {
                    for j in 0..row_in {
                        let gv = g[o * row_out + offset + j];
                        accumulate(&mut parents[p], o * row_in + j, gv);
                    }
                }
                offset += row_in;
            }
        }
        Op::Narrow {
            input,
            axis,
            start,
            len,
        } => {
            let shape = &parents[*input].shape;
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..*axis].iter().product();
            let row_in = shape[*axis] * inner;
            for o in 0..outer {
                for j in 0..len * inner {
                    let gv = g[o * len * inner + j];
                    accumulate(&mut parents[*input], o * row_in + start * inner + j, gv);
                }
            }
        }
        Op::Reshape(x) => {
            for (i, &gi) in g.iter().enumerate() {
                accumulate(&mut parents[*x], i, gi);
            }
        }
        Op::Broadcast(x) => {
            let strides = broadcast_strides(&parents[*x].shape, &node.shape).unwrap();
            let mut idx = vec![0usize; node.shape.len()];
            for &gi in g.iter() {
                let src_off: usize = idx.iter().zip(&strides).map(|(&i, &s)| i * s).sum();
                accumulate(&mut parents[*x], src_off, gi);
                for d in (0..node.shape.len()).rev() {
                    idx[d] += 1;
                    if idx[d] < node.shape[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
        }
    }
}
