//! Dense tensors, layers with explicit forward/backward passes, and the
//! residual CNN built from them.
//!
//! Every reduction runs in a fixed sequential order, so results are
//! bitwise reproducible for identical inputs and seeds.

mod batchnorm;
mod block;
pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod model;
mod tensor;

pub use batchnorm::{BatchNorm2d, BnGrads, BN_EPSILON, BN_MOMENTUM};
pub use block::ResidualBlock;
pub use checkpoint::{CheckpointTable, TableEntry};
pub use conv::{Conv2d, ConvGrads};
pub use model::{Mode, ModelConfig, ModelGrads, ModelState, BLOCK_COUNT};
pub use tensor::Tensor4;
