//! Primitive parameter prediction: an MLP over the latent code with one
//! fully connected head per shape kind. Each head emits
//! `N x (d_p + d_t + d_q)` raw values; shape-parameter slots are padded
//! to the widest kind so both heads share the per-primitive width.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::model::params::{fan_in_uniform, Binding, ParamStore};
use crate::sdf::TapePrimitive;
use crate::tape::{Tape, TensorId};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct DecoderIdx {
    pub fcs: Vec<(usize, usize)>,
    /// One (weight, bias) head per primitive kind, in `cfg.kinds()` order.
    pub heads: Vec<(usize, usize)>,
}

pub fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> DecoderIdx {
    let mut fcs = Vec::new();
    let mut in_dim = cfg.latent;
    for (i, &out_dim) in cfg.decoder_hidden.iter().enumerate() {
        let w = store.add(
            format!("dec.fc{i}.w"),
            vec![out_dim, in_dim],
            fan_in_uniform(rng, in_dim, out_dim * in_dim),
        );
        let b = store.add(
            format!("dec.fc{i}.b"),
            vec![out_dim],
            fan_in_uniform(rng, in_dim, out_dim),
        );
        fcs.push((w, b));
        in_dim = out_dim;
    }
    let head_out = cfg.prims_per_kind * cfg.prim_width();
    let mut heads = Vec::new();
    for kind in cfg.kinds() {
        let w = store.add(
            format!("dec.head.{}.w", kind.name()),
            vec![head_out, in_dim],
            fan_in_uniform(rng, in_dim, head_out * in_dim),
        );
        let b = store.add(
            format!("dec.head.{}.b", kind.name()),
            vec![head_out],
            fan_in_uniform(rng, in_dim, head_out),
        );
        heads.push((w, b));
    }
    DecoderIdx { fcs, heads }
}

/// Raw per-kind prediction blocks, kept for the loss terms.
#[derive(Debug, Clone)]
pub struct PredictedPrimitives {
    pub prims: Vec<TapePrimitive>,
    /// Per kind, the `[N, d_p]` raw shape parameter block.
    pub raw_param_blocks: Vec<TensorId>,
    /// Per kind, the `[N, d_t]` translation block.
    pub translation_blocks: Vec<TensorId>,
}

pub fn predict(
    tape: &mut Tape,
    idx: &DecoderIdx,
    binding: &Binding,
    cfg: &ModelConfig,
    z: TensorId,
) -> Result<PredictedPrimitives> {
    let mut h = z;
    for &(w, b) in &idx.fcs {
        let lin = tape.matmul(binding.ids[w], h)?;
        let lin = tape.add(lin, binding.ids[b])?;
        h = tape.leaky_relu(lin, cfg.leaky_slope);
    }
    let n = cfg.prims_per_kind;
    let (d_p, d_t, d_q) = (
        cfg.param_slots(),
        cfg.translation_width(),
        cfg.rotation_width(),
    );
    let mut prims = Vec::with_capacity(cfg.total_prims());
    let mut raw_param_blocks = Vec::new();
    let mut translation_blocks = Vec::new();
    for (kind, &(w, b)) in cfg.kinds().into_iter().zip(&idx.heads) {
        let out = tape.matmul(binding.ids[w], h)?;
        let out = tape.add(out, binding.ids[b])?;
        let table = tape.reshape(out, &[n, d_p + d_t + d_q])?;
        let p_block = tape.narrow(table, 1, 0, d_p)?;
        let t_block = tape.narrow(table, 1, d_p, d_t)?;
        let q_block = tape.narrow(table, 1, d_p + d_t, d_q)?;
        for i in 0..n {
            let p_row = tape.narrow(p_block, 0, i, 1)?;
            let raw_params = tape.reshape(p_row, &[d_p])?;
            let t_row = tape.narrow(t_block, 0, i, 1)?;
            let translation = tape.reshape(t_row, &[d_t])?;
            let q_row = tape.narrow(q_block, 0, i, 1)?;
            let rotation = tape.reshape(q_row, &[d_q])?;
            prims.push(TapePrimitive {
                kind,
                raw_params,
                translation,
                rotation,
            });
        }
        raw_param_blocks.push(p_block);
        translation_blocks.push(t_block);
    }
    Ok(PredictedPrimitives {
        prims,
        raw_param_blocks,
        translation_blocks,
    })
}
