//! Layer-to-layer information passing: selection vectors are encoded by a
//! small per-layer net, concatenated with the current latent code, and fed
//! through a shared GRU cell whose hidden state becomes the next latent.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::model::params::{fan_in_uniform, Binding, ParamStore};
use crate::tape::{Tape, TensorId};
use rand::Rng;

/// Per-layer selection encoder: in -> d_z (leaky ReLU) -> d_z (linear).
#[derive(Debug, Clone)]
pub struct HNetIdx {
    pub fc1: (usize, usize),
    pub fc2: (usize, usize),
}

pub fn init_hnet(store: &mut ParamStore, layer: usize, in_dim: usize, d_z: usize, rng: &mut impl Rng) -> HNetIdx {
    let mk = |store: &mut ParamStore, name: String, out: usize, inp: usize, rng: &mut _| {
        let w = store.add(format!("{name}.w"), vec![out, inp], fan_in_uniform(rng, inp, out * inp));
        let b = store.add(format!("{name}.b"), vec![out], fan_in_uniform(rng, inp, out));
        (w, b)
    };
    HNetIdx {
        fc1: mk(store, format!("info.h{layer}.fc1"), d_z, in_dim, rng),
        fc2: mk(store, format!("info.h{layer}.fc2"), d_z, d_z, rng),
    }
}

/// Shared GRU cell over input `[2*d_z]` and hidden `[d_z]`, plus the
/// learnable initial hidden state.
#[derive(Debug, Clone)]
pub struct GruIdx {
    pub w_r: usize,
    pub u_r: usize,
    pub b_r: usize,
    pub w_u: usize,
    pub u_u: usize,
    pub b_u: usize,
    pub w_h: usize,
    pub u_h: usize,
    pub b_h: usize,
    pub h0: usize,
}

pub fn init_gru(store: &mut ParamStore, d_z: usize, rng: &mut impl Rng) -> GruIdx {
    let in_dim = 2 * d_z;
    let mut w = |name: &str, out: usize, inp: usize, rng: &mut _| {
        store.add(name.to_string(), vec![out, inp], fan_in_uniform(rng, inp, out * inp))
    };
    let w_r = w("gru.w_r", d_z, in_dim, rng);
    let w_u = w("gru.w_u", d_z, in_dim, rng);
    let w_h = w("gru.w_h", d_z, in_dim, rng);
    let u_r = w("gru.u_r", d_z, d_z, rng);
    let u_u = w("gru.u_u", d_z, d_z, rng);
    let u_h = w("gru.u_h", d_z, d_z, rng);
    let b_r = store.add("gru.b_r", vec![d_z], fan_in_uniform(rng, d_z, d_z));
    let b_u = store.add("gru.b_u", vec![d_z], fan_in_uniform(rng, d_z, d_z));
    let b_h = store.add("gru.b_h", vec![d_z], fan_in_uniform(rng, d_z, d_z));
    let h0 = store.add("gru.h0", vec![d_z], vec![0.0; d_z]);
    GruIdx {
        w_r,
        u_r,
        b_r,
        w_u,
        u_u,
        b_u,
        w_h,
        u_h,
        b_h,
        h0,
    }
}

pub fn encode_selections(
    tape: &mut Tape,
    hnet: &HNetIdx,
    binding: &Binding,
    cfg: &ModelConfig,
    v_cat: TensorId,
) -> Result<TensorId> {
    let lin1 = tape.matmul(binding.ids[hnet.fc1.0], v_cat)?;
    let lin1 = tape.add(lin1, binding.ids[hnet.fc1.1])?;
    let h1 = tape.leaky_relu(lin1, cfg.leaky_slope);
    let lin2 = tape.matmul(binding.ids[hnet.fc2.0], h1)?;
    tape.add(lin2, binding.ids[hnet.fc2.1])
}

/// One standard GRU cell step: reset and update gates, candidate with the
/// reset-gated hidden, convex blend `(1-u) h + u cand`.
pub fn gru_step(
    tape: &mut Tape,
    gru: &GruIdx,
    binding: &Binding,
    x: TensorId,
    h_prev: TensorId,
) -> Result<TensorId> {
    let gate = |tape: &mut Tape, w: usize, u: usize, b: usize, inner: TensorId| -> Result<TensorId> {
        let wx = tape.matmul(binding.ids[w], x)?;
        let uh = tape.matmul(binding.ids[u], inner)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, binding.ids[b])
    };
    let r_pre = gate(tape, gru.w_r, gru.u_r, gru.b_r, h_prev)?;
    let r = tape.sigmoid(r_pre);
    let u_pre = gate(tape, gru.w_u, gru.u_u, gru.b_u, h_prev)?;
    let u = tape.sigmoid(u_pre);
    let gated = tape.mul(r, h_prev)?;
    let c_pre = gate(tape, gru.w_h, gru.u_h, gru.b_h, gated)?;
    let cand = tape.tanh(c_pre);
    let keep = tape.scale(u, -1.0);
    let keep = tape.offset(keep, 1.0);
    let old_part = tape.mul(keep, h_prev)?;
    let new_part = tape.mul(u, cand)?;
    tape.add(old_part, new_part)
}
