//! The gated texture CNN.

mod config;
mod count;
mod graph;
mod network;

pub use config::{GateKind, GtcnnConfig, Modulation};
pub use count::{format_count, param_count};
pub use graph::{Eager, Graph};
pub use network::{BnState, Denoised, ForwardOutput, GtcnnModel, Mode, Param, BN_MOMENTUM};
