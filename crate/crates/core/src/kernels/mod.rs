//! Forward and backward kernels on plain tensors. The [`Tape`](crate::tape::Tape)
//! composes these into differentiable graphs.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod layout;
pub mod resample;

pub use activation::{relu, sigmoid, softmax_channels};
pub use batchnorm::{batch_norm_eval, batch_norm_train, ChannelStats, BN_EPS};
pub use conv::conv2d;
pub use layout::{concat_channels, crop, pad_reflect, slice_channels};
pub use resample::{maxpool2x2, upsample_nearest2x};
