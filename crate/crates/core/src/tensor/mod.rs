//! Dense numeric kernel: matrices, differentiable primitives, a gradient
//! tape, initialization and the Adam optimizer.

mod adam;
mod init;
mod matrix;
mod ops;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use init::{init_affine, Initializer, RNG_LABEL};
pub use matrix::DenseMatrix;
pub use ops::{
    affine_backward, affine_backward_rows, affine_forward, affine_forward_rows, avgpool1d_backward,
    avgpool1d_forward, concat_backward, concat_forward, mse_loss, AffineGrads, PoolSpec,
};
pub(crate) use ops::window_mean;
pub use tape::{GradTape, Gradients, NodeId, ParamSource};
