use crate::error::{Error, Result};

/// Cosine annealing without restarts: `0.5 lr0 (1 + cos(pi t / total))`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("cosine_lr", "total steps must be positive"));
    }
    if t > total {
        return Err(Error::invalid("cosine_lr", format!("step {t} beyond total {total}")));
    }
    let lr = 0.5 * lr0 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos());
    Ok(lr.max(0.0))
}
