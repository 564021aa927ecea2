use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor4};

/// Cuts `(1, c, h, w)` images into `patch x patch` tiles on a `stride` grid.
/// Rows and columns that cannot fill a whole patch are dropped.
pub fn sample_patches<T: Real>(image: &Tensor4<T>, patch: usize, stride: usize) -> Result<Vec<Tensor4<T>>> {
    let s = image.shape();
    if patch == 0 || stride == 0 {
        return Err(Error::invalid("sample_patches", "patch and stride must be positive"));
    }
    if s.h < patch || s.w < patch {
        return Err(Error::invalid(
            "sample_patches",
            format!("image {}x{} smaller than patch {patch}", s.h, s.w),
        ));
    }
    let mut out = Vec::new();
    for n in 0..s.n {
        for y0 in (0..=s.h - patch).step_by(stride) {
            for x0 in (0..=s.w - patch).step_by(stride) {
                out.push(Tensor4::from_fn(Shape::new(1, s.c, patch, patch), |_, c, y, x| {
                    image.at(n, c, y0 + y, x0 + x)
                }));
            }
        }
    }
    Ok(out)
}
