use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

fn check(a: &Tensor4<impl Real>, b: &Tensor4<impl Real>) -> Result<()> {
    if a.shape().dims() != b.shape().dims() {
        return Err(Error::invalid(
            "metrics",
            format!("shape mismatch {} vs {}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Mean squared difference, accumulated in f64.
pub fn mse<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<f64> {
    check(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.numel().max(1) as f64)
}

/// `10 log10(1 / mse)` for images in `[0, 1]`; `+inf` when identical.
pub fn psnr<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}
