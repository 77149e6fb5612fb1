//! Convolutional encoder: kernel 4, stride 2, leaky ReLU after every
//! layer. All layers pad by 1 (halving the spatial extent) except the
//! last, which pads by 0 and collapses the remaining 4-wide extent to 1,
//! so the stack flattens to exactly the latent width.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::model::params::{fan_in_uniform, Binding, ParamStore};
use crate::tape::{Tape, TensorId};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct EncoderIdx {
    /// (weight, bias) parameter indices per conv layer.
    pub convs: Vec<(usize, usize)>,
}

pub fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> EncoderIdx {
    let k = 4usize;
    let taps = k.pow(cfg.dim as u32);
    let mut convs = Vec::new();
    let mut c_in = 1usize;
    for (i, &c_out) in cfg.encoder_channels.iter().enumerate() {
        let fan_in = c_in * taps;
        let w_shape = if cfg.dim == 2 {
            vec![c_out, c_in, k, k]
        } else {
            vec![c_out, c_in, k, k, k]
        };
        let n = w_shape.iter().product();
        let w = store.add(
            format!("enc.conv{i}.w"),
            w_shape,
            fan_in_uniform(rng, fan_in, n),
        );
        let b = store.add(
            format!("enc.conv{i}.b"),
            vec![c_out],
            fan_in_uniform(rng, fan_in, c_out),
        );
        convs.push((w, b));
        c_in = c_out;
    }
    EncoderIdx { convs }
}

/// Map an input grid (tape tensor `[1, res, res]` or `[1, res, res, res]`)
/// to the latent vector `[d_z]`.
pub fn encode(
    tape: &mut Tape,
    idx: &EncoderIdx,
    binding: &Binding,
    cfg: &ModelConfig,
    input: TensorId,
) -> Result<TensorId> {
    let n_layers = idx.convs.len();
    let mut x = input;
    for (i, &(w, b)) in idx.convs.iter().enumerate() {
        let pad = if i + 1 == n_layers { 0 } else { 1 };
        x = if cfg.dim == 2 {
            tape.conv2d(x, binding.ids[w], Some(binding.ids[b]), 2, pad)?
        } else {
            tape.conv3d(x, binding.ids[w], Some(binding.ids[b]), 2, pad)?
        };
        x = tape.leaky_relu(x, cfg.leaky_slope);
    }
    tape.reshape(x, &[cfg.latent])
}
