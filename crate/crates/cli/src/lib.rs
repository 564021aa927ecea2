//! The `gtcnn` command line.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gtcnn_core::eval::{denoise_image, evaluate_dir, read_image_dir};
use gtcnn_core::model::{format_count, param_count};
use gtcnn_core::train::{log_path, stream_rng, STREAM_INIT};
use gtcnn_core::{weights, GateKind, GtcnnConfig, GtcnnModel, Modulation, PnmImage, Tensor4, TrainConfig};
use gtcnn_service::{ServeOptions, ServiceError, DEFAULT_MAX_PIXELS};

#[derive(Debug, Parser)]
#[command(name = "gtcnn", version, about = "Gated texture CNN image denoiser")]
pub struct Cli {
    /// Seed for initialization, shuffling and synthesized noise.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a directory of PGM/PPM images.
    Train(TrainArgs),
    /// Denoise one image, optionally shifting a texture-layer skip by lambda.
    Denoise(DenoiseArgs),
    /// Report per-image PSNR over a directory at a given noise level.
    Eval(EvalArgs),
    /// Print the parameter count of an architecture.
    Params(ArchArgs),
    /// Serve the HTTP API and UI.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Gate {
    Softmax,
    Sigmoid,
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    #[arg(long)]
    pub use_1x1: bool,
    /// Image channels (1 or 3). `train` infers this from the data.
    #[arg(long, default_value_t = 1)]
    pub c_in: usize,
    #[arg(long, value_enum, default_value_t = Gate::Softmax)]
    pub gate: Gate,
}

impl ArchArgs {
    fn config(&self, c_in: usize) -> GtcnnConfig {
        GtcnnConfig {
            c_in,
            channels: self.channels,
            depth: self.depth,
            stages: self.stages,
            gate: match self.gate {
                Gate::Softmax => GateKind::ChannelSoftmax,
                Gate::Sigmoid => GateKind::Sigmoid,
            },
            use_1x1: self.use_1x1,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Weights file to write; the step log goes next to it as `.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 25.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 48)]
    pub patch: usize,
    /// Defaults to the patch size.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Images (last in name order) kept out of training and scored at the end.
    /// Defaults to 1 when the directory has at least two images.
    #[arg(long)]
    pub holdout: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Treat the input as clean and add noise of this level first.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, default_value_t = Modulation::DEFAULT_STAGE)]
    pub stage: usize,
    #[arg(long, default_value_t = Modulation::DEFAULT_LAYER)]
    pub layer: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 25.0)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Without a model every model route answers 503.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long, default_value_t = DEFAULT_MAX_PIXELS)]
    pub max_pixels: usize,
    /// Directory of built UI assets served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or inputs; exit code 2.
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<gtcnn_core::Error> for CliError {
    fn from(e: gtcnn_core::Error) -> Self {
        use gtcnn_core::Error as E;
        match e {
            E::InvalidConfig(_) | E::InvalidArgument { .. } | E::Modulation(_) | E::ShapeMismatch { .. } => {
                CliError::Invalid(e.to_string())
            }
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn context(what: impl std::fmt::Display) -> impl FnOnce(gtcnn_core::Error) -> CliError {
    move |e| match CliError::from(e) {
        CliError::Invalid(m) => CliError::Invalid(format!("{what}: {m}")),
        CliError::Failed(m) => CliError::Failed(format!("{what}: {m}")),
    }
}

pub type CliResult = Result<(), CliError>;

/// Runs one parsed command, writing reports to `out` and warnings to `err`.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Params(a) => cmd_params(&a, out),
        Command::Train(a) => cmd_train(&a, cli.seed, out, err),
        Command::Denoise(a) => cmd_denoise(&a, cli.seed, out),
        Command::Eval(a) => cmd_eval(&a, cli.seed, out, err),
        Command::Serve(a) => cmd_serve(a),
    }
}

pub fn cmd_params(a: &ArchArgs, out: &mut dyn Write) -> CliResult {
    let config = a.config(a.c_in);
    config.validate()?;
    writeln!(out, "{}", format_count(param_count(&config)))?;
    Ok(())
}

pub fn cmd_train(a: &TrainArgs, seed: u64, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let tc = TrainConfig {
        sigma: a.sigma,
        patch: a.patch,
        stride: a.stride.unwrap_or(a.patch),
        batch: a.batch,
        steps: a.steps,
        lr0: a.lr,
        seed,
        checkpoint_every: a.checkpoint_every,
        checkpoint_path: Some(a.out.clone()),
        ..TrainConfig::default()
    };
    // Validate flags before touching the data.
    let probe = a.arch.config(1);
    probe.validate()?;
    tc.validate(probe.spatial_multiple())?;

    let (images, skipped) = read_image_dir(&a.data).map_err(context(a.data.display()))?;
    for (name, reason) in &skipped {
        writeln!(err, "warning: skipping {name}: {reason}")?;
    }
    if images.is_empty() {
        return Err(invalid(format!("{}: no readable PGM/PPM images", a.data.display())));
    }
    let c_in = images[0].1.channels;
    if let Some((name, img)) = images.iter().find(|(_, i)| i.channels != c_in) {
        return Err(invalid(format!(
            "{name} has {} channels but {} has {c_in}",
            img.channels, images[0].0
        )));
    }
    let holdout = a.holdout.unwrap_or(usize::from(images.len() >= 2));
    if holdout >= images.len() {
        return Err(invalid(format!(
            "holdout {holdout} leaves no training images out of {}",
            images.len()
        )));
    }
    let tensors: Vec<Tensor4<f32>> = images.iter().map(|(_, i)| i.to_tensor()).collect();
    let (train_set, held) = tensors.split_at(tensors.len() - holdout);

    let config = a.arch.config(c_in);
    let mut model = GtcnnModel::new(config, &mut stream_rng(seed, STREAM_INIT))?;
    writeln!(
        out,
        "training {} parameters on {} images ({} held out) for {} steps",
        format_count(model.num_parameters()),
        train_set.len(),
        held.len(),
        tc.steps
    )?;
    let log = gtcnn_core::train(&mut model, train_set, held, &tc)?;
    if let Some(last) = log.steps.last() {
        writeln!(out, "final loss {:.6e} after {:.1}s", last.loss, last.elapsed_ms / 1e3)?;
    }
    match log.evals.last() {
        Some(e) => writeln!(
            out,
            "held-out PSNR at sigma {}: noisy {:.2} dB, denoised {:.2} dB",
            tc.sigma, e.psnr_noisy, e.psnr_denoised
        )?,
        None => writeln!(out, "no held-out images")?,
    }
    writeln!(out, "wrote {} and {}", a.out.display(), log_path(&a.out).display())?;
    Ok(())
}

fn load_model(path: &std::path::Path) -> Result<GtcnnModel<f32>, CliError> {
    weights::load(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

pub fn cmd_denoise(a: &DenoiseArgs, seed: u64, out: &mut dyn Write) -> CliResult {
    if !(Modulation::LAMBDA_MIN..=Modulation::LAMBDA_MAX).contains(&a.lambda) {
        return Err(invalid(format!(
            "lambda {} outside [{}, {}]",
            a.lambda,
            Modulation::LAMBDA_MIN,
            Modulation::LAMBDA_MAX
        )));
    }
    if let Some(s) = a.sigma {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(invalid(format!("sigma must be >= 0, got {s}")));
        }
    }
    let model = load_model(&a.model)?;
    // Stage and layer only matter once lambda shifts something.
    let modulation = (a.lambda != 0.0).then(|| Modulation::new(a.lambda, a.stage, a.layer));
    if let Some(m) = &modulation {
        m.check(model.config())?;
    }
    let image = PnmImage::read(&a.input).map_err(context(a.input.display()))?;
    let outcome = denoise_image(&model, &image, a.sigma, seed, modulation.as_ref())?;
    outcome.output.write(&a.output)?;
    if let (Some(noisy), Some(denoised)) = (outcome.psnr_noisy, outcome.psnr_denoised) {
        writeln!(out, "PSNR noisy {noisy:.2} dB, denoised {denoised:.2} dB")?;
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, seed: u64, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(invalid(format!("sigma must be >= 0, got {}", a.sigma)));
    }
    let model = load_model(&a.model)?;
    let report = evaluate_dir(&model, &a.data, a.sigma, seed).map_err(context(a.data.display()))?;
    for (name, reason) in &report.skipped {
        writeln!(err, "warning: skipping {name}: {reason}")?;
    }
    let width = report.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
    writeln!(out, "{:<width$}  {:>10}  {:>10}", "image", "noisy", "denoised")?;
    for r in &report.rows {
        writeln!(
            out,
            "{:<width$}  {:>10.2}  {:>10.2}",
            r.name, r.psnr_noisy, r.psnr_denoised
        )?;
    }
    writeln!(
        out,
        "{:<width$}  {:>10.2}  {:>10.2}",
        "mean", report.mean_noisy, report.mean_denoised
    )?;
    writeln!(out, "{} images, {} skipped", report.rows.len(), report.skipped.len())?;
    Ok(())
}

pub fn cmd_serve(a: ServeArgs) -> CliResult {
    gtcnn_service::serve_blocking(ServeOptions {
        model: a.model,
        bind: a.bind,
        max_pixels: a.max_pixels,
        ui_dir: a.ui_dir,
    })
    .map_err(|e| match e {
        ServiceError::Model(m) => CliError::Failed(format!("loading model: {m}")),
        other => CliError::Failed(other.to_string()),
    })
}
