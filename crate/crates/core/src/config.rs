//! Model, training and sampling configuration, loadable from TOML.

use crate::error::{Error, Result};
use crate::sdf::PrimitiveKind;
use serde::{Deserialize, Serialize};

/// Architecture of the encoder, decoder and CSG layer stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Spatial dimensionality of inputs and primitives (2 or 3).
    pub dim: usize,
    /// Input raster/voxel resolution per axis; power of two, >= 8.
    pub resolution: usize,
    /// Latent code width d_z.
    pub latent: usize,
    /// Output channels of each conv layer. The stack halves the spatial
    /// extent per layer (kernel 4, stride 2, padding 1) and the last layer
    /// (padding 0) collapses 4 -> 1, so there are log2(resolution) - 1
    /// layers and the last width must equal `latent`.
    pub encoder_channels: Vec<usize>,
    /// Hidden widths of the primitive prediction MLP.
    pub decoder_hidden: Vec<usize>,
    /// Primitives predicted per kind (two kinds per dimensionality).
    pub prims_per_kind: usize,
    /// Operand-pair nodes of each non-final CSG layer (each node emits the
    /// four ops). The final layer is implicit: one node, union only.
    pub layer_nodes: Vec<usize>,
    /// Negative slope of all leaky ReLU activations.
    pub leaky_slope: f64,
    /// Std of the normal initializer for the selection key matrices.
    pub k_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::default_2d()
    }
}

impl ModelConfig {
    /// 2D defaults: 64x64 rasters, 16 circles + 16 rectangles, two CSG
    /// layers with the first emitting 16 shapes.
    pub fn default_2d() -> Self {
        ModelConfig {
            dim: 2,
            resolution: 64,
            latent: 256,
            encoder_channels: vec![32, 64, 128, 256, 256],
            decoder_hidden: vec![512, 1024, 2048],
            prims_per_kind: 16,
            layer_nodes: vec![4],
            leaky_slope: 0.01,
            k_init_std: 0.1,
        }
    }

    /// 3D defaults: 64^3 voxels, 32 spheres + 32 boxes, five CSG layers
    /// emitting 48 shapes each.
    pub fn default_3d() -> Self {
        ModelConfig {
            dim: 3,
            resolution: 64,
            latent: 256,
            encoder_channels: vec![32, 64, 128, 256, 256],
            decoder_hidden: vec![512, 1024, 2048],
            prims_per_kind: 32,
            layer_nodes: vec![12, 12, 12, 12],
            leaky_slope: 0.01,
            k_init_std: 0.1,
        }
    }

    /// Total primitive count M.
    pub fn total_prims(&self) -> usize {
        2 * self.prims_per_kind
    }

    /// Number of CSG layers including the final union layer.
    pub fn num_layers(&self) -> usize {
        self.layer_nodes.len() + 1
    }

    /// Primitive kinds in prediction order.
    pub fn kinds(&self) -> [PrimitiveKind; 2] {
        if self.dim == 2 {
            [PrimitiveKind::Circle, PrimitiveKind::Rectangle]
        } else {
            [PrimitiveKind::Sphere, PrimitiveKind::Box]
        }
    }

    /// Shape-parameter slots per primitive, padded to the widest kind so
    /// every head has width N * (d_p + d_t + d_q).
    pub fn param_slots(&self) -> usize {
        if self.dim == 2 {
            2
        } else {
            3
        }
    }

    pub fn translation_width(&self) -> usize {
        self.dim
    }

    pub fn rotation_width(&self) -> usize {
        if self.dim == 2 {
            1
        } else {
            4
        }
    }

    /// Per-primitive decoder output width d_p + d_t + d_q.
    pub fn prim_width(&self) -> usize {
        self.param_slots() + self.translation_width() + self.rotation_width()
    }

    /// Output channel count of CSG layer `l` (0-based).
    pub fn layer_outputs(&self, l: usize) -> usize {
        if l + 1 == self.num_layers() {
            1
        } else {
            4 * self.layer_nodes[l]
        }
    }

    /// Input channel count of CSG layer `l`: previous outputs plus the M
    /// initial shapes (layer 0 sees the initial shapes only).
    pub fn layer_inputs(&self, l: usize) -> usize {
        if l == 0 {
            self.total_prims()
        } else {
            self.layer_outputs(l - 1) + self.total_prims()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim != 2 && self.dim != 3 {
            return fail(format!("dim must be 2 or 3, got {}", self.dim));
        }
        if self.resolution < 8 || !self.resolution.is_power_of_two() {
            return fail(format!(
                "resolution must be a power of two >= 8, got {}",
                self.resolution
            ));
        }
        let expected_layers = self.resolution.trailing_zeros() as usize - 1;
        if self.encoder_channels.len() != expected_layers {
            return fail(format!(
                "encoder_channels must have {} entries for resolution {}, got {}",
                expected_layers,
                self.resolution,
                self.encoder_channels.len()
            ));
        }
        if *self.encoder_channels.last().unwrap() != self.latent {
            return fail(format!(
                "last encoder channel ({}) must equal latent ({}) so the conv stack flattens to d_z",
                self.encoder_channels.last().unwrap(),
                self.latent
            ));
        }
        if self.prims_per_kind == 0 {
            return fail("prims_per_kind must be positive".into());
        }
        if self.layer_nodes.iter().any(|&n| n == 0) {
            return fail("layer_nodes entries must be positive".into());
        }
        if self.decoder_hidden.is_empty() {
            return fail("decoder_hidden must not be empty".into());
        }
        Ok(())
    }
}

/// Optimization hyperparameters and the two-stage schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub lambda_t: f64,
    pub lambda_alpha: f64,
    pub lambda_tau: f64,
    pub alpha_init: f64,
    pub tau_init: f64,
    /// Positivity floor applied to alpha and every tau after each step.
    pub epsilon: f64,
    /// Stage 2 starts at the first epoch end with alpha <= this.
    pub stage2_trigger: f64,
    /// Early stop after this many epochs without improvement.
    pub patience: usize,
    /// Minimum decrease of the epoch-mean total loss that counts as
    /// improvement.
    pub min_improvement: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.99,
            adam_eps: 1e-8,
            batch_size: 16,
            lambda_t: 0.1,
            lambda_alpha: 0.1,
            lambda_tau: 0.1,
            alpha_init: 1.0,
            tau_init: 2.0,
            epsilon: 1e-5,
            stage2_trigger: 0.05,
            patience: 40,
            min_improvement: 1e-6,
            max_epochs: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.lambda_t < 0.0 || self.lambda_alpha < 0.0 || self.lambda_tau < 0.0 {
            return fail("loss weights must be non-negative".into());
        }
        if !(self.stage2_trigger > 0.0 && self.stage2_trigger < self.alpha_init) {
            return fail(format!(
                "stage2_trigger must lie in (0, alpha_init), got {} with alpha_init {}",
                self.stage2_trigger, self.alpha_init
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return fail("batch_size and max_epochs must be positive".into());
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive".into());
        }
        Ok(())
    }
}

/// Point sampling strategy for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Every grid cell center, deterministic (2D desk scale).
    Exhaustive,
    /// Boundary-biased random points plus uniform fill.
    Biased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub mode: SamplingMode,
    /// Boundary-adjacent samples per shape in biased mode.
    pub surface_points: usize,
    /// Uniform samples per shape in biased mode.
    pub uniform_points: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            mode: SamplingMode::Exhaustive,
            surface_points: 8192,
            uniform_points: 8192,
        }
    }
}

/// Full configuration file: `[model]`, `[train]`, `[sampling]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
        let three_d = Config {
            model: ModelConfig::default_3d(),
            ..Config::default()
        };
        three_d.validate().unwrap();
    }

    #[test]
    fn desk_head_width() {
        // N=4 per kind, k=2: M=8 primitives, 8 * (2 + 2 + 1) head outputs.
        let cfg = ModelConfig {
            prims_per_kind: 4,
            ..ModelConfig::default_2d()
        };
        assert_eq!(cfg.total_prims(), 8);
        assert_eq!(cfg.total_prims() * cfg.prim_width(), 8 * (2 + 2 + 1));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = Config::default();
        let parsed = Config::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn rejects_bad_encoder_plan() {
        let mut cfg = Config::default();
        cfg.model.encoder_channels = vec![32, 64];
        assert!(cfg.validate().is_err());
        let mut cfg = Config::default();
        cfg.model.encoder_channels = vec![32, 64, 128, 256, 128];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn layer_channel_arithmetic() {
        let cfg = ModelConfig::default_2d();
        // Layer 0 sees the 32 initial shapes; the final layer sees the 16
        // outputs of layer 0 plus the initial shapes.
        assert_eq!(cfg.num_layers(), 2);
        assert_eq!(cfg.layer_inputs(0), 32);
        assert_eq!(cfg.layer_outputs(0), 16);
        assert_eq!(cfg.layer_inputs(1), 48);
        assert_eq!(cfg.layer_outputs(1), 1);
    }
}
