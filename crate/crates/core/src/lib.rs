//! Core engine for unsupervised constructive solid geometry learning:
//! a small reverse-mode autodiff tape, analytic SDF primitives, the
//! occupancy CSG algebra, the selection network, two-stage training,
//! hard-tree extraction, contouring and evaluation metrics.

pub mod checkpoint;
pub mod config;
pub mod contour;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod occupancy;
pub mod sdf;
pub mod tape;
pub mod train;
pub mod tree;

pub use config::{Config, ModelConfig, SamplingConfig, SamplingMode, TrainConfig};
pub use error::{Error, Result};
pub use model::{CsgModel, ForwardOutput, Mode};
pub use sdf::{Primitive, PrimitiveKind};
pub use tape::{Tape, TensorId};
pub use tree::{extract_tree, CsgNode, CsgOp, CsgTree};
