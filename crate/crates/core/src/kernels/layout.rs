//! Channel concatenation/slicing and spatial reflect-padding/cropping.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor4};

/// Concatenates along channels, `a` first.
pub fn concat_channels<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    for (dim, x, y) in [("batch", sa.n, sb.n), ("height", sa.h, sb.h), ("width", sa.w, sb.w)] {
        if x != y {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                dim,
                expected: x,
                actual: y,
            });
        }
    }
    let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for n in 0..sa.n {
        out.extend_from_slice(&a.data()[n * la..(n + 1) * la]);
        out.extend_from_slice(&b.data()[n * lb..(n + 1) * lb]);
    }
    Tensor4::from_vec(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), out)
}

/// Channels `[start, start + len)`.
pub fn slice_channels<T: Real>(x: &Tensor4<T>, start: usize, len: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if start + len > s.c {
        return Err(Error::ShapeMismatch {
            op: "slice_channels",
            dim: "channels",
            expected: s.c,
            actual: start + len,
        });
    }
    let hw = s.plane();
    let mut out = Vec::with_capacity(s.n * len * hw);
    for n in 0..s.n {
        let base = (n * s.c + start) * hw;
        out.extend_from_slice(&x.data()[base..base + len * hw]);
    }
    Tensor4::from_vec(Shape::new(s.n, len, s.h, s.w), out)
}

/// Scatters a channel-slice gradient back into a zero tensor of `input_shape`.
pub fn slice_channels_backward<T: Real>(input_shape: Shape, start: usize, grad_out: &[T]) -> Vec<T> {
    let s = input_shape;
    let hw = s.plane();
    let len = grad_out.len() / (s.n * hw).max(1);
    let mut dx = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        let base = (n * s.c + start) * hw;
        dx[base..base + len * hw].copy_from_slice(&grad_out[n * len * hw..(n + 1) * len * hw]);
    }
    dx
}

/// Mirror index without repeating the edge sample (`[a b c] -> a b c b a b ...`),
/// periodic so padding may exceed the source extent.
#[inline]
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Reflect-pads on the bottom and right up to `(h, w)`.
pub fn pad_reflect<T: Real>(x: &Tensor4<T>, h: usize, w: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if h < s.h || w < s.w {
        return Err(Error::invalid(
            "pad_reflect",
            format!("target {}x{} smaller than input {}x{}", h, w, s.h, s.w),
        ));
    }
    let src = x.data();
    let mut out = Vec::with_capacity(s.n * s.c * h * w);
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for y in 0..h {
            let row = base + reflect_index(y, s.h) * s.w;
            for xx in 0..w {
                out.push(src[row + reflect_index(xx, s.w)]);
            }
        }
    }
    Tensor4::from_vec(Shape::new(s.n, s.c, h, w), out)
}

pub fn pad_reflect_backward<T: Real>(input_shape: Shape, h: usize, w: usize, grad_out: &[T]) -> Vec<T> {
    let s = input_shape;
    let mut dx = vec![T::zero(); s.numel()];
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        let obase = nc * h * w;
        for y in 0..h {
            let row = base + reflect_index(y, s.h) * s.w;
            for xx in 0..w {
                dx[row + reflect_index(xx, s.w)] += grad_out[obase + y * w + xx];
            }
        }
    }
    dx
}

/// Keeps the top-left `h x w` window.
pub fn crop<T: Real>(x: &Tensor4<T>, h: usize, w: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if h > s.h || w > s.w {
        return Err(Error::invalid(
            "crop",
            format!("window {}x{} larger than input {}x{}", h, w, s.h, s.w),
        ));
    }
    let mut out = Vec::with_capacity(s.n * s.c * h * w);
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for y in 0..h {
            out.extend_from_slice(&x.data()[base + y * s.w..base + y * s.w + w]);
        }
    }
    Tensor4::from_vec(Shape::new(s.n, s.c, h, w), out)
}

pub fn crop_backward<T: Real>(input_shape: Shape, h: usize, w: usize, grad_out: &[T]) -> Vec<T> {
    let s = input_shape;
    let mut dx = vec![T::zero(); s.numel()];
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for y in 0..h {
            let src = &grad_out[(nc * h + y) * w..(nc * h + y + 1) * w];
            dx[base + y * s.w..base + y * s.w + w].copy_from_slice(src);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn concat_shape_and_slice_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = Tensor4::<f32>::randn(Shape::new(1, 2, 4, 4), 1.0, &mut rng);
        let b = Tensor4::<f32>::randn(Shape::new(1, 3, 4, 4), 1.0, &mut rng);
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.shape(), Shape::new(1, 5, 4, 4));
        assert_eq!(slice_channels(&ab, 0, 2).unwrap(), a);
        assert_eq!(slice_channels(&ab, 2, 3).unwrap(), b);
    }

    #[test]
    fn concat_spatial_mismatch_rejected() {
        let a = Tensor4::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let b = Tensor4::<f32>::zeros(Shape::new(1, 2, 4, 2));
        let err = concat_channels(&a, &b).unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
    }

    #[test]
    fn concat_batched_keeps_items_together() {
        let a = Tensor4::<f32>::from_fn(Shape::new(2, 1, 1, 2), |n, _, _, x| (n * 10 + x) as f32);
        let b = Tensor4::<f32>::from_fn(Shape::new(2, 1, 1, 2), |n, _, _, x| (100 + n * 10 + x) as f32);
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.data(), &[0.0, 1.0, 100.0, 101.0, 10.0, 11.0, 110.0, 111.0]);
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let seq: Vec<usize> = (0..9).map(|i| reflect_index(i, 3)).collect();
        assert_eq!(seq, vec![0, 1, 2, 1, 0, 1, 2, 1, 0]);
        assert_eq!(reflect_index(5, 1), 0);
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = Tensor4::<f32>::randn(Shape::new(2, 2, 5, 3), 1.0, &mut rng);
        let p = pad_reflect(&x, 16, 16).unwrap();
        assert_eq!(p.at(1, 1, 5, 0), x.at(1, 1, 3, 0));
        assert_eq!(p.at(0, 0, 0, 3), x.at(0, 0, 0, 1));
        assert_eq!(crop(&p, 5, 3).unwrap(), x);
    }
}
