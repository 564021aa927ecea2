use crate::tensor::{Real, Tensor4};

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor4<T>, grad_out: &[T]) -> Vec<T> {
    x.data()
        .iter()
        .zip(grad_out)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

#[inline]
fn sigmoid_scalar<T: Real>(v: T) -> T {
    // Split on sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(sigmoid_scalar)
}

/// Takes the forward *output*.
pub fn sigmoid_backward<T: Real>(y: &Tensor4<T>, grad_out: &[T]) -> Vec<T> {
    y.data()
        .iter()
        .zip(grad_out)
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect()
}

/// Softmax across the channel axis at every `(n, y, x)` location.
pub fn softmax_channels<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let s = x.shape();
    let hw = s.plane();
    let mut out = Tensor4::zeros(s);
    let src = x.data();
    let dst = out.data_mut();
    for n in 0..s.n {
        let base = n * s.c * hw;
        for p in 0..hw {
            let mut max = src[base + p];
            for c in 1..s.c {
                max = max.max(src[base + c * hw + p]);
            }
            let mut sum = T::zero();
            for c in 0..s.c {
                let e = (src[base + c * hw + p] - max).exp();
                dst[base + c * hw + p] = e;
                sum += e;
            }
            let inv = T::one() / sum;
            for c in 0..s.c {
                dst[base + c * hw + p] *= inv;
            }
        }
    }
    out
}

/// Takes the forward *output*: `dx = y * (g - sum_c(g * y))`.
pub fn softmax_channels_backward<T: Real>(y: &Tensor4<T>, grad_out: &[T]) -> Vec<T> {
    let s = y.shape();
    let hw = s.plane();
    let ys = y.data();
    let mut dx = vec![T::zero(); ys.len()];
    for n in 0..s.n {
        let base = n * s.c * hw;
        for p in 0..hw {
            let mut dot = T::zero();
            for c in 0..s.c {
                let i = base + c * hw + p;
                dot += grad_out[i] * ys[i];
            }
            for c in 0..s.c {
                let i = base + c * hw + p;
                dx[i] = ys[i] * (grad_out[i] - dot);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(v: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn relu_definition() {
        assert_eq!(relu(&row(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let neg = row(&[-3.0, -0.5, -1e-9]);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        assert!(relu_backward(&neg, &[1.0, 1.0, 1.0]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor4::<f32>::randn(Shape::new(2, 3, 4, 5), 1.0, &mut rng);
        let y = relu(&x);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert_eq!(*b, if *a > 0.0 { *a } else { 0.0 });
        }
    }

    #[test]
    fn sigmoid_values_and_saturation() {
        let y = sigmoid(&row(&[0.0, 1000.0, -1000.0, 50.0]));
        assert_eq!(y.data()[0], 0.5);
        assert_eq!(y.data()[1], 1.0);
        assert_eq!(y.data()[2], 0.0);
        assert!(y.all_finite());

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor4::<f64>::randn(Shape::new(1, 2, 3, 3), 3.0, &mut rng);
        let y = sigmoid(&x);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((b - 1.0 / (1.0 + (-a).exp())).abs() <= 1e-6);
        }
    }

    #[test]
    fn softmax_uniform_and_analytic() {
        let x = Tensor4::<f64>::full(Shape::new(1, 4, 2, 2), 3.3);
        assert!(softmax_channels(&x).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let x = Tensor4::from_vec(Shape::new(1, 2, 1, 1), vec![0.0, 3f64.ln()]).unwrap();
        let y = softmax_channels(&x);
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Tensor4::<f64>::randn(Shape::new(2, 8, 3, 3), 2.0, &mut rng);
        let y = softmax_channels(&x.cast::<f32>()).cast::<f64>();
        for n in 0..2 {
            for yy in 0..3 {
                for xx in 0..3 {
                    let denom: f64 = (0..8).map(|c| x.at(n, c, yy, xx).exp()).sum();
                    let mut total = 0.0;
                    for c in 0..8 {
                        let v = y.at(n, c, yy, xx);
                        assert!((v - x.at(n, c, yy, xx).exp() / denom).abs() <= 1e-5);
                        assert!(v > 0.0 && v < 1.0);
                        total += v;
                    }
                    assert!((total - 1.0).abs() <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let x = Tensor4::from_vec(Shape::new(1, 3, 1, 1), vec![1000.0f32, 999.0, -1000.0]).unwrap();
        let y = softmax_channels(&x);
        assert!(y.all_finite());
        assert!((y.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
