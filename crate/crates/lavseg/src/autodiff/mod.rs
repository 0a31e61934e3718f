//! Minimal reverse-mode differentiation engine.
//!
//! Provides exactly the layer set the segmentation networks need —
//! 3×3 same-padding convolution, 2×2 max pooling, nearest-neighbor
//! 2× upsampling, max unpooling, channel concatenation, ReLU, sigmoid,
//! inverted dropout, binary cross-entropy, and an L2 weight penalty —
//! each as an explicit forward/backward pair. There is no dynamic
//! computation graph; networks wire these ops by hand and keep the
//! intermediate activations they need for the backward pass.
//!
//! Everything is generic over the scalar type: `f32` is the production
//! dtype, `f64` the verification dtype used by the finite-difference
//! gradient checker in [`check`].
//!
//! Determinism: all loops run in a fixed serial order, and convolutions
//! reduce through a blocked GEMM kernel whose accumulation order is
//! likewise fixed, so results are reproducible bit-for-bit run to run.

pub mod check;
pub mod ops;
pub mod tensor;

pub use check::{finite_difference_grads, grad_check, relative_error, GradCheckTarget};
pub use ops::{
    bce_loss, concat_channels_bwd, concat_channels_fwd, conv2d_bwd, conv2d_fwd, dropout_bwd,
    dropout_fwd, l2_penalty, maxpool2_bwd, maxpool2_fwd, maxunpool2_bwd, maxunpool2_fwd,
    relu_bwd, relu_fwd, sigmoid_bwd, sigmoid_fwd, upsample2_bwd, upsample2_fwd, DropoutMask,
    Scratch, BCE_EPS,
};
pub use tensor::{Parameter, Scalar, Tensor};
