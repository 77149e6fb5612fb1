//! The four loss terms and their stage-dependent combination.

use crate::error::Result;
use crate::model::decoder::PredictedPrimitives;
use crate::tape::{Tape, TensorId};

/// Mean squared error between predicted and target occupancies.
pub fn loss_mse(tape: &mut Tape, predicted: TensorId, target: TensorId) -> Result<TensorId> {
    let diff = tape.sub(predicted, target)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// Hinge on negative raw shape parameters: sum of max(-p, 0) over every
/// shape parameter of every primitive.
pub fn loss_param_positivity(tape: &mut Tape, predicted: &PredictedPrimitives) -> Result<TensorId> {
    let mut total: Option<TensorId> = None;
    for &block in &predicted.raw_param_blocks {
        let neg = tape.scale(block, -1.0);
        let hinge = tape.max_with_const(neg, 0.0);
        let s = tape.sum(hinge);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    Ok(total.expect("at least one primitive kind"))
}

/// Clipped squared translation norm: sum over primitives of
/// max(||t||^2, 0.5). The 0.5 floor keeps the term constant (zero
/// gradient) for primitives already near the center.
pub fn loss_translation(tape: &mut Tape, predicted: &PredictedPrimitives) -> Result<TensorId> {
    let mut total: Option<TensorId> = None;
    for &block in &predicted.translation_blocks {
        let norms = tape.l2_norm_rows(block)?;
        let sq = tape.square(norms);
        let clipped = tape.max_with_const(sq, 0.5);
        let s = tape.sum(clipped);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    Ok(total.expect("at least one primitive kind"))
}

/// Per-sample data term: mse + positivity + lambda_t * translation.
pub fn data_loss(
    tape: &mut Tape,
    mse: TensorId,
    positivity: TensorId,
    translation: TensorId,
    lambda_t: f64,
) -> Result<TensorId> {
    let lt = tape.scale(translation, lambda_t);
    let s = tape.add(mse, positivity)?;
    tape.add(s, lt)
}

/// Schedule terms: lambda_alpha * |alpha|, plus lambda_tau * sum |tau| in
/// stage 2.
pub fn schedule_terms(
    tape: &mut Tape,
    stage: u8,
    alpha: TensorId,
    taus: &[TensorId],
    lambda_alpha: f64,
    lambda_tau: f64,
) -> Result<TensorId> {
    let abs_alpha = tape.abs(alpha);
    let mut total = tape.scale(abs_alpha, lambda_alpha);
    if stage >= 2 {
        for &tau in taus {
            let a = tape.abs(tau);
            let scaled = tape.scale(a, lambda_tau);
            total = tape.add(total, scaled)?;
        }
    }
    Ok(total)
}

/// Full single-sample objective (stage 1 omits the temperature term).
#[allow(clippy::too_many_arguments)]
pub fn loss_total(
    tape: &mut Tape,
    stage: u8,
    mse: TensorId,
    positivity: TensorId,
    translation: TensorId,
    alpha: TensorId,
    taus: &[TensorId],
    lambda_t: f64,
    lambda_alpha: f64,
    lambda_tau: f64,
) -> Result<TensorId> {
    let data = data_loss(tape, mse, positivity, translation, lambda_t)?;
    let sched = schedule_terms(tape, stage, alpha, taus, lambda_alpha, lambda_tau)?;
    tape.add(data, sched)
}
