//! A small reverse-mode network stack: tensors, layer kernels with explicit
//! backward passes, Adam and the U-net builder.

pub mod adam;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod unet;

pub use adam::{AdamConfig, AdamState};
pub use ops::{BnRunning, Mode};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use unet::{build_unet, ChannelGrowth, ForwardCache, Network, NetworkSpec, Param};
