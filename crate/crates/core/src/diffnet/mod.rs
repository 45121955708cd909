//! Reverse-mode differentiable tensors, the hourglass layer set, RMSprop and
//! checkpoints.

pub mod gradcheck;
pub mod graph;
pub mod network;
pub mod params;
pub mod tensor;

pub use graph::{bilinear_clamped, huber, Gradients, Graph, Var};
pub use network::{build_network, Breakpoint, DisparityStride, NetConfig, Network, Variant};
pub use params::{rmsprop_step, ParamStore, RmsProp};
pub use tensor::{Scalar, Tensor};
