//! Dense layers with analytic backward passes, AdamW and a step schedule.

pub mod checkpoint;
mod matrix;
mod mlp;
mod optim;

pub use checkpoint::{Tensor, TensorArchive};
pub use matrix::{dot, l2_norm, Matrix, Real};
pub use mlp::{Activation, DenseLayer, Mlp, MlpCache, MlpGrads, MlpSpec};
pub(crate) use mlp::{layer_slices, layer_slices_mut};
pub use optim::{AdamW, StepLrSchedule};
