use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::noise::add_awgn;
use super::patches::sample_patches;
use super::schedule::cosine_lr;
use crate::error::{Error, Result};
use crate::eval::evaluate_tensors;
use crate::model::{GtcnnModel, Mode};
use crate::tape::Tape;
use crate::tensor::Tensor4;
use crate::weights;

/// RNG stream ids derived from one seed.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_SHUFFLE: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_EVAL: u64 = 3;

/// Seeded generator on one of the streams above.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Noise standard deviation in 8-bit units.
    pub sigma: f64,
    pub patch: usize,
    pub stride: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr0: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps between checkpoints and held-out evaluations; 0 disables both
    /// until the final step.
    pub checkpoint_every: usize,
    /// Where checkpoints go; a `.csv` sidecar holds the run log.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma: 25.0,
            patch: 48,
            stride: 48,
            batch: 16,
            steps: 1000,
            lr0: 1e-3,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            checkpoint_every: 0,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, spatial_multiple: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be a finite value >= 0, got {}", self.sigma));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if self.patch < spatial_multiple {
            return bad(format!(
                "patch {} smaller than the model's spatial multiple {spatial_multiple}",
                self.patch
            ));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr0));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// Milliseconds since training started.
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl RunLog {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    /// `step,loss,lr` rows; wall time is omitted so equal runs give equal files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,lr\n");
        for s in &self.steps {
            writeln!(out, "{},{:e},{:e}", s.step, s.loss, s.lr).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// `model.gtcw` -> `model.csv`.
pub fn log_path(weights: &Path) -> PathBuf {
    weights.with_extension("csv")
}

/// Trains `model` on patches cut from `images` (each `(1, c, h, w)` in
/// `[0, 1]`). `holdout` images, when given, are scored at every checkpoint
/// and after the last step.
pub fn train(
    model: &mut GtcnnModel<f32>,
    images: &[Tensor4<f32>],
    holdout: &[Tensor4<f32>],
    config: &TrainConfig,
) -> Result<RunLog> {
    config.validate(model.config().spatial_multiple())?;
    if images.is_empty() {
        return Err(Error::InvalidConfig("training corpus is empty".into()));
    }
    let mut patches = Vec::new();
    for img in images {
        patches.extend(sample_patches(img, config.patch, config.stride)?);
    }
    let batch = config.batch.min(patches.len());

    let mut shuffle_rng = stream_rng(config.seed, STREAM_SHUFFLE);
    let mut noise_rng = stream_rng(config.seed, STREAM_NOISE);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0;

    let mut adam = Adam::new(config.beta1, config.beta2, config.eps);
    let mut log = RunLog::default();
    let mut tape = Tape::new();
    let start = Instant::now();

    for step in 1..=config.steps {
        let lr = cosine_lr(step - 1, config.steps, config.lr0)?;
        let mut picked = Vec::with_capacity(batch);
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            picked.push(&patches[order[cursor]]);
            cursor += 1;
        }
        let clean = Tensor4::stack(&picked)?;
        let noisy = add_awgn(&clean, config.sigma, &mut noise_rng);

        tape.clear();
        let params = model.bind(&mut tape, true);
        let x = tape.constant(noisy);
        let y = tape.constant(clean);
        let out = model.forward(&mut tape, &params, &x, Mode::Train, None, false)?;
        let loss_var = tape.mse_loss(out.restored, y)?;
        let loss = tape.value(loss_var).data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, lr });
        }
        tape.backward(loss_var)?;

        adam.begin_step();
        for (i, &v) in params.iter().enumerate() {
            let grad = tape.grad(v).expect("parameters are trainable leaves");
            adam.update(i, model.params_mut()[i].value.data_mut(), grad, lr);
        }
        model.commit_batch_stats(&out.batch_stats);

        log.steps.push(StepRecord {
            step,
            loss,
            lr,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });

        let checkpoint = config.checkpoint_every > 0 && step % config.checkpoint_every == 0;
        if checkpoint || step == config.steps {
            if !holdout.is_empty() {
                let report = evaluate_tensors(model, holdout, config.sigma, config.seed)?;
                log.evals.push(EvalRecord {
                    step,
                    psnr_noisy: report.mean_noisy,
                    psnr_denoised: report.mean_denoised,
                });
            }
            if let Some(path) = &config.checkpoint_path {
                weights::save(model, path)?;
                log.write_csv(log_path(path))?;
            }
        }
    }
    Ok(log)
}
