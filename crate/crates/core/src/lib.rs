//! Gated texture CNN image denoiser.

pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod pnm;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{GateKind, GtcnnConfig, GtcnnModel, Modulation};
pub use pnm::PnmImage;
pub use tape::{Tape, Var};
pub use tensor::{Real, Shape, Tensor4};
pub use train::{train, RunLog, TrainConfig};
