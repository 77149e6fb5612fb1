//! CSG layers: key-based operand selection (Gumbel-Softmax in training,
//! exact argmax one-hot in eval) followed by all four occupancy CSG
//! operations per operand pair.

use crate::error::Result;
use crate::occupancy::{csg_diff, csg_intersect, csg_union};
use crate::tape::{Tape, TensorId};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Soft selection vectors and hard indices for one operand pair.
#[derive(Debug, Clone)]
pub struct SelectionRecord {
    pub soft_left: Vec<f64>,
    pub soft_right: Vec<f64>,
    pub argmax_left: usize,
    pub argmax_right: usize,
    pub(crate) left_id: TensorId,
    pub(crate) right_id: TensorId,
}

impl SelectionRecord {
    /// A record with hard one-hot selections and no tape backing; useful
    /// for assembling selection wirings by hand.
    pub fn from_hard(argmax_left: usize, argmax_right: usize, m_in: usize) -> SelectionRecord {
        let mut soft_left = vec![0.0; m_in];
        soft_left[argmax_left] = 1.0;
        let mut soft_right = vec![0.0; m_in];
        soft_right[argmax_right] = 1.0;
        SelectionRecord {
            soft_left,
            soft_right,
            argmax_left,
            argmax_right,
            left_id: usize::MAX,
            right_id: usize::MAX,
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One selection vector from raw scores.
///
/// Training: `softmax((ln softmax(scores) + c) / tau)` with `c` drawn
/// i.i.d. from Gumbel(0, 1). Eval: the exact one-hot at the argmax of the
/// score softmax, with no noise and no temperature.
fn select_side(
    tape: &mut Tape,
    scores: TensorId,
    tau: TensorId,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<(TensorId, Vec<f64>, usize)> {
    let probs = tape.softmax(scores)?;
    match mode {
        Mode::Eval => {
            let hard = argmax(tape.value(probs));
            let m = tape.shape(probs)[0];
            let mut one_hot = vec![0.0; m];
            one_hot[hard] = 1.0;
            let id = tape.constant(one_hot.clone(), &[m])?;
            Ok((id, one_hot, hard))
        }
        Mode::Train => {
            let m = tape.shape(probs)[0];
            let noise: Vec<f64> = (0..m)
                .map(|_| {
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    -(-u.ln()).ln()
                })
                .collect();
            let c = tape.constant(noise, &[m])?;
            let log_probs = tape.ln(probs);
            let shifted = tape.add(log_probs, c)?;
            let scaled = tape.div(shifted, tau)?;
            let soft = tape.softmax(scaled)?;
            let values = tape.value(soft).to_vec();
            let hard = argmax(&values);
            Ok((soft, values, hard))
        }
    }
}

/// Both operand selections for one node.
pub fn select_operands(
    tape: &mut Tape,
    scores_left: TensorId,
    scores_right: TensorId,
    tau: TensorId,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<SelectionRecord> {
    let (left_id, soft_left, argmax_left) = select_side(tape, scores_left, tau, mode, rng)?;
    let (right_id, soft_right, argmax_right) = select_side(tape, scores_right, tau, mode, rng)?;
    Ok(SelectionRecord {
        soft_left,
        soft_right,
        argmax_left,
        argmax_right,
        left_id,
        right_id,
    })
}

/// Key parameters of one layer.
#[derive(Debug, Clone)]
pub struct LayerIdx {
    /// (k_left, k_right) parameter indices per node; each is `[m_in, d_z]`.
    pub nodes: Vec<(usize, usize)>,
    pub tau: usize,
}

/// Output channels per selected pair, in fixed order.
pub const OPS_PER_NODE: usize = 4;

/// Run one CSG layer.
///
/// `occ_in` is `[points, m_in]`; the output is `[points, 4 * nodes]` with
/// channels ordered [union, intersection, left-right, right-left] per
/// node, or `[points, 1]` (union only) when `final_union` is set.
#[allow(clippy::too_many_arguments)]
pub fn layer_forward(
    tape: &mut Tape,
    keys: &[(TensorId, TensorId)],
    tau: TensorId,
    occ_in: TensorId,
    z: TensorId,
    mode: Mode,
    final_union: bool,
    rng: &mut impl Rng,
) -> Result<(TensorId, Vec<SelectionRecord>)> {
    let points = tape.shape(occ_in)[0];
    let mut channels = Vec::new();
    let mut records = Vec::with_capacity(keys.len());
    for &(k_left, k_right) in keys {
        let scores_left = tape.matmul(k_left, z)?;
        let scores_right = tape.matmul(k_right, z)?;
        let rec = select_operands(tape, scores_left, scores_right, tau, mode, rng)?;
        let left = tape.weighted_sum(occ_in, rec.left_id)?;
        let right = tape.weighted_sum(occ_in, rec.right_id)?;
        let union = csg_union(tape, left, right)?;
        channels.push(tape.reshape(union, &[points, 1])?);
        if !final_union {
            let inter = csg_intersect(tape, left, right)?;
            let diff_lr = csg_diff(tape, left, right)?;
            let diff_rl = csg_diff(tape, right, left)?;
            channels.push(tape.reshape(inter, &[points, 1])?);
            channels.push(tape.reshape(diff_lr, &[points, 1])?);
            channels.push(tape.reshape(diff_rl, &[points, 1])?);
        }
        records.push(rec);
    }
    let out = tape.concat(&channels, 1)?;
    Ok((out, records))
}
