//! 2x2 max pooling and nearest-neighbour 2x upsampling.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor4};

/// Returns the pooled tensor and, per output element, the flat input index
/// of the selected maximum. Ties go to the first element in row-major
/// window order.
pub fn maxpool2x2<T: Real>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<usize>)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) {
        return Err(Error::invalid("maxpool2x2", format!("height {} is odd", s.h)));
    }
    if !s.w.is_multiple_of(2) {
        return Err(Error::invalid("maxpool2x2", format!("width {} is odd", s.w)));
    }
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(os.numel());
    let mut argmax = Vec::with_capacity(os.numel());
    let src = x.data();
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let top = base + 2 * oy * s.w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + s.w, top + s.w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor4::from_vec(os, out)?, argmax))
}

pub fn maxpool2x2_backward<T: Real>(input_shape: Shape, argmax: &[usize], grad_out: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_shape.numel()];
    for (&i, &g) in argmax.iter().zip(grad_out) {
        dx[i] += g;
    }
    dx
}

pub fn upsample_nearest2x<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let s = x.shape();
    let os = Shape::new(s.n, s.c, 2 * s.h, 2 * s.w);
    let mut out = Vec::with_capacity(os.numel());
    let src = x.data();
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            let row = &src[base + (oy / 2) * s.w..base + (oy / 2 + 1) * s.w];
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
    }
    Tensor4::from_vec(os, out).expect("upsample shape")
}

/// Sums each 2x2 block of `grad_out` back onto its source pixel.
pub fn upsample_nearest2x_backward<T: Real>(input_shape: Shape, grad_out: &[T]) -> Vec<T> {
    let s = input_shape;
    let ow = 2 * s.w;
    let mut dx = vec![T::zero(); s.numel()];
    for nc in 0..s.n * s.c {
        let obase = nc * 4 * s.plane();
        for y in 0..s.h {
            for x in 0..s.w {
                let o = obase + 2 * y * ow + 2 * x;
                dx[nc * s.plane() + y * s.w + x] =
                    grad_out[o] + grad_out[o + 1] + grad_out[o + ow] + grad_out[o + ow + 1];
            }
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
    fn pool_picks_max_and_routes_grad() {
        let x = Tensor4::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(
            maxpool2x2_backward(x.shape(), &arg, &[1.0f32]),
            vec![0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn ties_route_to_top_left() {
        let x = Tensor4::<f32>::full(Shape::new(1, 2, 4, 4), 0.5);
        let (y, arg) = maxpool2x2(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        let dx = maxpool2x2_backward(x.shape(), &arg, &vec![1.0f32; y.numel()]);
        let dx = Tensor4::from_vec(x.shape(), dx).unwrap();
        for c in 0..2 {
            for yy in 0..4 {
                for xx in 0..4 {
                    let expect = if yy % 2 == 0 && xx % 2 == 0 { 1.0 } else { 0.0 };
                    assert_eq!(dx.at(0, c, yy, xx), expect);
                }
            }
        }
    }

    #[test]
    fn odd_sizes_rejected() {
        assert!(maxpool2x2(&Tensor4::<f32>::zeros(Shape::new(1, 1, 3, 4))).is_err());
        assert!(maxpool2x2(&Tensor4::<f32>::zeros(Shape::new(1, 1, 4, 5))).is_err());
    }

    #[test]
    fn pool_matches_window_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor4::<f32>::randn(Shape::new(1, 1, 6, 6), 1.0, &mut rng);
        let (y, _) = maxpool2x2(&x).unwrap();
        for oy in 0..3 {
            for ox in 0..3 {
                let mut m = f32::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.at(0, 0, 2 * oy + dy, 2 * ox + dx));
                    }
                }
                assert_eq!(y.at(0, 0, oy, ox), m);
            }
        }
    }

    #[test]
    fn upsample_replicates_and_pool_inverts() {
        let x = Tensor4::from_vec(Shape::new(1, 1, 1, 1), vec![2.5f32]).unwrap();
        assert_eq!(upsample_nearest2x(&x).data(), &[2.5; 4]);

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = Tensor4::<f32>::randn(Shape::new(2, 3, 3, 5), 1.0, &mut rng);
        let up = upsample_nearest2x(&x);
        for n in 0..2 {
            for c in 0..3 {
                for yy in 0..6 {
                    for xx in 0..10 {
                        assert_eq!(up.at(n, c, yy, xx), x.at(n, c, yy / 2, xx / 2));
                    }
                }
            }
        }
        assert_eq!(maxpool2x2(&up).unwrap().0, x);

        let g = vec![1.0f32; up.numel()];
        assert!(upsample_nearest2x_backward(x.shape(), &g).iter().all(|&v| v == 4.0));
    }
}
