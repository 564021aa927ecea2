//! Stride-1, shape-preserving 2-D cross-correlation via im2col + GEMM.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor4};

/// Gradients produced by [`conv2d_backward`]; `None` for the ones not requested.
#[derive(Debug, Default)]
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

fn check_shapes<T: Real>(input: &Tensor4<T>, weight: &Tensor4<T>, bias: Option<&Tensor4<T>>) -> Result<usize> {
    let ws = weight.shape();
    if ws.h != ws.w {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            dim: "kernel width",
            expected: ws.h,
            actual: ws.w,
        });
    }
    if ws.h != 1 && ws.h != 3 {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel size must be 1 or 3, got {}", ws.h),
        ));
    }
    if ws.c != input.shape().c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            dim: "input channels",
            expected: ws.c,
            actual: input.shape().c,
        });
    }
    if let Some(b) = bias {
        if b.numel() != ws.n {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                dim: "bias length",
                expected: ws.n,
                actual: b.numel(),
            });
        }
    }
    Ok(ws.h)
}

/// Upper bound on patch-matrix elements materialized at once by the forward
/// pass; larger images are processed in horizontal bands.
const MAX_COL_ELEMS: usize = 1 << 22;

/// Unfolds output rows `[y0, y1)` of one `(c, h, w)` image into a
/// `(c*k*k, (y1-y0)*w)` patch matrix with zero padding `(k-1)/2`.
#[allow(clippy::too_many_arguments)]
fn im2col_rows<T: Real>(src: &[T], c: usize, h: usize, w: usize, k: usize, y0: usize, y1: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let len = (y1 - y0) * w;
    let hw = h * w;
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * len..(row + 1) * len];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in y0..y1 {
                    let sy = y as isize + dy;
                    let out = &mut dst[(y - y0) * w..(y - y0 + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *o = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            srow[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn im2col<T: Real>(src: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    im2col_rows(src, c, h, w, k, 0, h, col);
}

/// Adjoint of [`im2col`]: scatters-adds patch gradients back onto the image.
fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, k: usize, dst: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let prow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let srow = &src[y * w..(y + 1) * w];
                    for (x, &g) in srow.iter().enumerate() {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            prow[sx as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// `weight` is `(c_out, c_in, k, k)` with `k` in {1, 3}; `bias`, when given,
/// holds `c_out` values. Output is `(n, c_out, h, w)`.
///
/// Large images are unfolded in row bands so the patch matrix stays bounded.
pub fn conv2d<T: Real>(input: &Tensor4<T>, weight: &Tensor4<T>, bias: Option<&Tensor4<T>>) -> Result<Tensor4<T>> {
    let k = check_shapes(input, weight, bias)?;
    let s = input.shape();
    let c_out = weight.shape().n;
    let hw = s.plane();
    let ckk = s.c * k * k;
    let in_len = s.c * hw;
    let out_len = c_out * hw;
    let mut out = vec![T::zero(); s.n * out_len];

    out.par_chunks_mut(out_len.max(1)).enumerate().for_each(|(i, o)| {
        let x = &input.data()[i * in_len..(i + 1) * in_len];
        if let Some(b) = bias {
            for (co, &bv) in b.data().iter().enumerate() {
                o[co * hw..(co + 1) * hw].fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        if k == 1 {
            T::gemm(c_out, ckk, hw, weight.data(), false, x, false, beta, o);
            return;
        }
        let band = (MAX_COL_ELEMS / (ckk * s.w).max(1)).clamp(1, s.h.max(1));
        if band >= s.h {
            let mut col = vec![T::zero(); ckk * hw];
            im2col(x, s.c, s.h, s.w, k, &mut col);
            T::gemm(c_out, ckk, hw, weight.data(), false, &col, false, beta, o);
            return;
        }
        let mut col = vec![T::zero(); ckk * band * s.w];
        let mut tile = vec![T::zero(); c_out * band * s.w];
        let mut y0 = 0;
        while y0 < s.h {
            let y1 = (y0 + band).min(s.h);
            let len = (y1 - y0) * s.w;
            im2col_rows(x, s.c, s.h, s.w, k, y0, y1, &mut col[..ckk * len]);
            T::gemm(
                c_out,
                ckk,
                len,
                weight.data(),
                false,
                &col[..ckk * len],
                false,
                T::zero(),
                &mut tile[..c_out * len],
            );
            for co in 0..c_out {
                let dst = &mut o[co * hw + y0 * s.w..co * hw + y1 * s.w];
                let src = &tile[co * len..(co + 1) * len];
                if bias.is_some() {
                    dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                } else {
                    dst.copy_from_slice(src);
                }
            }
            y0 = y1;
        }
    });

    Tensor4::from_vec(Shape::new(s.n, c_out, s.h, s.w), out)
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    grad_out: &[T],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let s = input.shape();
    let ws = weight.shape();
    let (c_out, k) = (ws.n, ws.h);
    let hw = s.plane();
    let ckk = s.c * k * k;
    let in_len = s.c * hw;
    let out_len = c_out * hw;
    debug_assert_eq!(grad_out.len(), s.n * out_len);

    type Partial<T> = (Option<Vec<T>>, Option<Vec<T>>);
    let per_item: Vec<Partial<T>> = (0..s.n)
        .into_par_iter()
        .map(|i| {
            let x = &input.data()[i * in_len..(i + 1) * in_len];
            let g = &grad_out[i * out_len..(i + 1) * out_len];
            let dw = need_weight.then(|| {
                let mut dw = vec![T::zero(); c_out * ckk];
                if k == 1 {
                    T::gemm(c_out, hw, ckk, g, false, x, true, T::zero(), &mut dw);
                } else {
                    let mut col = vec![T::zero(); ckk * hw];
                    im2col(x, s.c, s.h, s.w, k, &mut col);
                    T::gemm(c_out, hw, ckk, g, false, &col, true, T::zero(), &mut dw);
                }
                dw
            });
            let dx = need_input.then(|| {
                if k == 1 {
                    let mut dx = vec![T::zero(); in_len];
                    T::gemm(ckk, c_out, hw, weight.data(), true, g, false, T::zero(), &mut dx);
                    dx
                } else {
                    let mut dcol = vec![T::zero(); ckk * hw];
                    T::gemm(ckk, c_out, hw, weight.data(), true, g, false, T::zero(), &mut dcol);
                    let mut dx = vec![T::zero(); in_len];
                    col2im(&dcol, s.c, s.h, s.w, k, &mut dx);
                    dx
                }
            });
            (dx, dw)
        })
        .collect();

    let mut grads = ConvGrads::default();
    if need_input {
        let mut dx = Vec::with_capacity(s.n * in_len);
        for (item, _) in &per_item {
            dx.extend_from_slice(item.as_ref().expect("input grad computed"));
        }
        grads.input = Some(dx);
    }
    if need_weight {
        let mut dw = vec![T::zero(); c_out * ckk];
        for (_, item) in &per_item {
            for (acc, &v) in dw.iter_mut().zip(item.as_ref().expect("weight grad computed")) {
                *acc += v;
            }
        }
        grads.weight = Some(dw);
    }
    if need_bias {
        let mut db = vec![T::zero(); c_out];
        for i in 0..s.n {
            for (co, acc) in db.iter_mut().enumerate() {
                let start = i * out_len + co * hw;
                *acc += grad_out[start..start + hw].iter().copied().sum::<T>();
            }
        }
        grads.bias = Some(db);
    }
    grads
}
