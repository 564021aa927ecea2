//! Supervised training on synthetic noisy/clean pairs.

mod adam;
mod noise;
mod patches;
mod run;
mod schedule;

pub use adam::Adam;
pub use noise::add_awgn;
pub use patches::sample_patches;
pub use run::{
    log_path, stream_rng, train, EvalRecord, RunLog, StepRecord, TrainConfig, STREAM_EVAL, STREAM_INIT, STREAM_NOISE,
    STREAM_SHUFFLE,
};
pub use schedule::cosine_lr;
