//! PSNR evaluation over image sets and the single-image denoise pipeline
//! shared by the command line and the HTTP service.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::model::{GtcnnModel, Modulation};
use crate::pnm::PnmImage;
use crate::tensor::Tensor4;
use crate::train::{add_awgn, stream_rng, STREAM_EVAL};

/// Noise generator for the `index`-th image of an evaluation with `seed`.
pub fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    stream_rng(seed, (STREAM_EVAL << 32) | index as u64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    /// Ordered by name.
    pub rows: Vec<ImageScore>,
    /// `(file name, reason)` for images that could not be read.
    pub skipped: Vec<(String, String)>,
    pub mean_noisy: f64,
    pub mean_denoised: f64,
}

impl EvalReport {
    fn finish(mut self) -> Self {
        let n = self.rows.len().max(1) as f64;
        self.mean_noisy = self.rows.iter().map(|r| r.psnr_noisy).sum::<f64>() / n;
        self.mean_denoised = self.rows.iter().map(|r| r.psnr_denoised).sum::<f64>() / n;
        self
    }
}

/// Adds seeded noise to `clean`, denoises it and scores both against the
/// clean image after clamping to `[0, 1]`.
fn score(model: &GtcnnModel<f32>, clean: &Tensor4<f32>, sigma: f64, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let noisy = add_awgn(clean, sigma, rng);
    let restored = model.denoise(&noisy, None)?.restored;
    Ok((psnr(&noisy.clamp01(), clean)?, psnr(&restored.clamp01(), clean)?))
}

/// Scores in-memory images; rows are named by index.
pub fn evaluate_tensors(model: &GtcnnModel<f32>, images: &[Tensor4<f32>], sigma: f64, seed: u64) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for (i, img) in images.iter().enumerate() {
        let (noisy, denoised) = score(model, img, sigma, &mut image_rng(seed, i))?;
        report.rows.push(ImageScore {
            name: format!("{i:04}"),
            psnr_noisy: noisy,
            psnr_denoised: denoised,
        });
    }
    Ok(report.finish())
}

fn is_pnm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
        .unwrap_or(false)
}

/// Regular files with a `.pgm`, `.ppm` or `.pnm` extension, sorted by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_pnm(p))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Reads every image in `dir`; unreadable ones are returned separately.
#[allow(clippy::type_complexity)]
pub fn read_image_dir(dir: impl AsRef<Path>) -> Result<(Vec<(String, PnmImage)>, Vec<(String, String)>)> {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for path in list_images(dir)? {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match PnmImage::read(&path) {
            Ok(img) => ok.push((name, img)),
            Err(e) => skipped.push((name, e.to_string())),
        }
    }
    Ok((ok, skipped))
}

/// Scores every image in `dir`, noising the `i`-th readable image (in name
/// order) with [`image_rng`]`(seed, i)`.
pub fn evaluate_dir(model: &GtcnnModel<f32>, dir: impl AsRef<Path>, sigma: f64, seed: u64) -> Result<EvalReport> {
    let (images, skipped) = read_image_dir(dir)?;
    if images.is_empty() && skipped.is_empty() {
        return Err(Error::invalid("eval", "directory contains no PGM/PPM images"));
    }
    let mut report = EvalReport {
        skipped,
        ..EvalReport::default()
    };
    for (i, (name, img)) in images.iter().enumerate() {
        let clean = img.to_tensor::<f32>();
        match score(model, &clean, sigma, &mut image_rng(seed, i)) {
            Ok((noisy, denoised)) => report.rows.push(ImageScore {
                name: name.clone(),
                psnr_noisy: noisy,
                psnr_denoised: denoised,
            }),
            Err(e) => report.skipped.push((name.clone(), e.to_string())),
        }
    }
    Ok(report.finish())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseOutcome {
    pub output: PnmImage,
    /// The synthesized noisy input (demo mode only).
    pub noisy: Option<PnmImage>,
    pub psnr_noisy: Option<f64>,
    pub psnr_denoised: Option<f64>,
}

/// Denoises one image. With `sigma`, the image is taken as clean, noise
/// from [`image_rng`]`(seed, 0)` is added first and both PSNRs are reported;
/// otherwise the image is treated as already noisy.
pub fn denoise_image(
    model: &GtcnnModel<f32>,
    image: &PnmImage,
    sigma: Option<f64>,
    seed: u64,
    modulation: Option<&Modulation>,
) -> Result<DenoiseOutcome> {
    let input = image.to_tensor::<f32>();
    match sigma {
        None => {
            let restored = model.denoise(&input, modulation)?.restored;
            Ok(DenoiseOutcome {
                output: PnmImage::from_tensor(&restored)?,
                noisy: None,
                psnr_noisy: None,
                psnr_denoised: None,
            })
        }
        Some(sigma) => {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::invalid("denoise", format!("sigma must be >= 0, got {sigma}")));
            }
            let noisy = add_awgn(&input, sigma, &mut image_rng(seed, 0));
            let restored = model.denoise(&noisy, modulation)?.restored.clamp01();
            let noisy = noisy.clamp01();
            Ok(DenoiseOutcome {
                output: PnmImage::from_tensor(&restored)?,
                psnr_noisy: Some(psnr(&noisy, &input)?),
                psnr_denoised: Some(psnr(&restored, &input)?),
                noisy: Some(PnmImage::from_tensor(&noisy)?),
            })
        }
    }
}
