//! The full forward model: encoder, primitive prediction, SDF-to-occupancy
//! conversion, stacked CSG layers with key-based operand selection, GRU
//! latent updates between layers, and a forced union at the top.

pub mod csg_layer;
pub mod decoder;
pub mod encoder;
pub mod gru;
pub mod params;

pub use csg_layer::{select_operands, Mode, SelectionRecord};
pub use params::{Binding, Param, ParamStore};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::occupancy::{to_occupancy, OccupancyBatch};
use crate::sdf::{eval_primitive_batch, Primitive, TapePrimitive, PARAM_FLOOR, QUAT_NORM_FLOOR};
use crate::tape::{Tape, TensorId};
use csg_layer::LayerIdx;
use decoder::PredictedPrimitives;
use rand::Rng;

/// All tape handles produced by one forward pass, for loss assembly and
/// tree extraction.
#[derive(Debug)]
pub struct SampleForward {
    /// Final union output, `[points]`.
    pub final_occupancy: TensorId,
    /// Initial per-primitive occupancies, `[points, M]`.
    pub initial: OccupancyBatch,
    /// Selection records per layer, per node.
    pub records: Vec<Vec<SelectionRecord>>,
    pub predicted: PredictedPrimitives,
}

/// Value-level output of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub occupancy: Vec<f64>,
    pub records: Vec<Vec<SelectionRecord>>,
    pub primitives: Vec<Primitive>,
    pub alpha: f64,
    pub taus: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CsgModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: encoder::EncoderIdx,
    pub decoder: decoder::DecoderIdx,
    pub layers: Vec<LayerIdx>,
    pub hnets: Vec<gru::HNetIdx>,
    pub gru: gru::GruIdx,
    /// Parameter index of the occupancy converter slope.
    pub alpha_idx: usize,
}

impl CsgModel {
    /// Build a model with freshly initialized parameters. Key matrices are
    /// drawn from N(0, k_init_std); everything else uses fan-in uniform
    /// initialization. Parameter creation order is fixed and stable.
    pub fn new(
        cfg: &ModelConfig,
        alpha_init: f64,
        tau_init: f64,
        rng: &mut impl Rng,
    ) -> Result<CsgModel> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let alpha_idx = store.add("alpha", vec![], vec![alpha_init]);
        let enc = encoder::init(&mut store, cfg, rng);
        let dec = decoder::init(&mut store, cfg, rng);

        let num_layers = cfg.num_layers();
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let m_in = cfg.layer_inputs(l);
            // Skip rule: each layer sees the previous outputs plus the M
            // initial shapes.
            if l > 0 {
                debug_assert_eq!(m_in, cfg.layer_outputs(l - 1) + cfg.total_prims());
            }
            let node_count = if l + 1 == num_layers {
                1
            } else {
                cfg.layer_nodes[l]
            };
            let mut nodes = Vec::with_capacity(node_count);
            for n in 0..node_count {
                let k_left = store.add(
                    format!("csg.layer{l}.node{n}.k_left"),
                    vec![m_in, cfg.latent],
                    params::normal(rng, cfg.k_init_std, m_in * cfg.latent),
                );
                let k_right = store.add(
                    format!("csg.layer{l}.node{n}.k_right"),
                    vec![m_in, cfg.latent],
                    params::normal(rng, cfg.k_init_std, m_in * cfg.latent),
                );
                nodes.push((k_left, k_right));
            }
            let tau = store.add(format!("csg.layer{l}.tau"), vec![], vec![tau_init]);
            layers.push(LayerIdx { nodes, tau });
        }

        let mut hnets = Vec::new();
        for l in 0..num_layers.saturating_sub(1) {
            let node_count = layers[l].nodes.len();
            let in_dim = 2 * node_count * cfg.layer_inputs(l);
            hnets.push(gru::init_hnet(&mut store, l, in_dim, cfg.latent, rng));
        }
        let gru = gru::init_gru(&mut store, cfg.latent, rng);

        Ok(CsgModel {
            config: cfg.clone(),
            store,
            encoder: enc,
            decoder: dec,
            layers,
            hnets,
            gru,
            alpha_idx,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.store.get(self.alpha_idx).data[0]
    }

    pub fn taus(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| self.store.get(l.tau).data[0])
            .collect()
    }

    pub fn tau_indices(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.tau).collect()
    }

    /// Floor alpha and every tau at `eps` (the post-step positivity clamp).
    pub fn clamp_converter_params(&mut self, eps: f64) {
        let a = &mut self.store.get_mut(self.alpha_idx).data[0];
        if *a < eps {
            *a = eps;
        }
        for l in 0..self.layers.len() {
            let tau = self.layers[l].tau;
            let t = &mut self.store.get_mut(tau).data[0];
            if *t < eps {
                *t = eps;
            }
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Binding> {
        self.store.bind(tape, trainable)
    }

    fn input_leaf(&self, tape: &mut Tape, grid: &[f64]) -> Result<TensorId> {
        let r = self.config.resolution;
        let expected = r.pow(self.config.dim as u32);
        if grid.len() != expected {
            return Err(Error::InvalidShape {
                op: "forward",
                shape: vec![grid.len()],
                reason: format!(
                    "input grid must have {expected} values for resolution {r}^{}",
                    self.config.dim
                ),
            });
        }
        let shape = if self.config.dim == 2 {
            vec![1, r, r]
        } else {
            vec![1, r, r, r]
        };
        tape.constant(grid.to_vec(), &shape)
    }

    /// Latent code for an input grid.
    pub fn encode(&self, tape: &mut Tape, binding: &Binding, grid: &[f64]) -> Result<TensorId> {
        let input = self.input_leaf(tape, grid)?;
        encoder::encode(tape, &self.encoder, binding, &self.config, input)
    }

    /// Predicted primitives for a latent code.
    pub fn predict_primitives(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        z: TensorId,
    ) -> Result<PredictedPrimitives> {
        decoder::predict(tape, &self.decoder, binding, &self.config, z)
    }

    /// Full forward pass on the tape for one sample.
    ///
    /// `points` is row-major `[n_points, dim]` in the unit domain.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        grid: &[f64],
        points: &[f64],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<SampleForward> {
        let dim = self.config.dim;
        if points.is_empty() || points.len() % dim != 0 {
            return Err(Error::InvalidShape {
                op: "forward",
                shape: vec![points.len()],
                reason: format!("points must be a non-empty multiple of dim={dim}"),
            });
        }
        let n_points = points.len() / dim;
        let points_id = tape.constant(points.to_vec(), &[n_points, dim])?;
        let mut z = self.encode(tape, binding, grid)?;
        let predicted = self.predict_primitives(tape, binding, z)?;
        let distances = eval_primitive_batch(tape, points_id, &predicted.prims)?;
        let alpha_id = binding.ids[self.alpha_idx];
        let initial = to_occupancy(tape, distances, alpha_id)?;

        let num_layers = self.layers.len();
        let mut hidden = binding.ids[self.gru.h0];
        let mut prev_out: Option<TensorId> = None;
        let mut records = Vec::with_capacity(num_layers);
        let mut final_out = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let occ_in = match prev_out {
                None => initial.values,
                Some(prev) => tape.concat(&[prev, initial.values], 1)?,
            };
            let keys: Vec<(TensorId, TensorId)> = layer
                .nodes
                .iter()
                .map(|&(kl, kr)| (binding.ids[kl], binding.ids[kr]))
                .collect();
            let tau_id = binding.ids[layer.tau];
            let is_final = l + 1 == num_layers;
            let (out, recs) = csg_layer::layer_forward(
                tape, &keys, tau_id, occ_in, z, mode, is_final, rng,
            )?;
            if is_final {
                final_out = Some(tape.column(out, 0)?);
            } else {
                // Latent update from this layer's selections.
                let mut parts = Vec::with_capacity(2 * recs.len());
                for rec in &recs {
                    parts.push(rec.left_id);
                    parts.push(rec.right_id);
                }
                let v_cat = tape.concat(&parts, 0)?;
                let encoded = gru::encode_selections(tape, &self.hnets[l], binding, &self.config, v_cat)?;
                let x = tape.concat(&[z, encoded], 0)?;
                hidden = gru::gru_step(tape, &self.gru, binding, x, hidden)?;
                z = hidden;
            }
            records.push(recs);
            prev_out = Some(out);
        }

        Ok(SampleForward {
            final_occupancy: final_out.expect("at least one layer"),
            initial,
            records,
            predicted,
        })
    }

    /// Forward pass returning plain values (occupancies, selections, the
    /// evaluation-ready primitives, alpha and the temperature list).
    pub fn forward_full(
        &self,
        grid: &[f64],
        points: &[f64],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape, false)?;
        let fwd = self.forward(&mut tape, &binding, grid, points, mode, rng)?;
        let primitives = materialize_primitives(&tape, &fwd.predicted.prims);
        Ok(ForwardOutput {
            occupancy: tape.value(fwd.final_occupancy).to_vec(),
            records: fwd.records,
            primitives,
            alpha: self.alpha(),
            taus: self.taus(),
        })
    }
}

/// Read evaluation-ready primitive values off the tape: shape parameters
/// floored, quaternions normalized, unused padded slots dropped.
pub fn materialize_primitives(tape: &Tape, prims: &[TapePrimitive]) -> Vec<Primitive> {
    prims
        .iter()
        .map(|p| {
            let raw = tape.value(p.raw_params);
            let params: Vec<f64> = raw[..p.kind.param_count()]
                .iter()
                .map(|&v| v.max(PARAM_FLOOR))
                .collect();
            let translation = tape.value(p.translation).to_vec();
            let mut rotation = tape.value(p.rotation).to_vec();
            if rotation.len() == 4 {
                let norm = rotation
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
                    .max(QUAT_NORM_FLOOR);
                rotation.iter_mut().for_each(|v| *v /= norm);
            }
            Primitive {
                kind: p.kind,
                params,
                translation,
                rotation,
            }
        })
        .collect()
}
