//! Per-channel batch normalization over `(n, h, w)`.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch statistics. `var` is the biased (population) variance
/// used for normalization; `count` is the number of values per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

fn check_affine<T: Real>(x: &Tensor4<T>, gamma: &Tensor4<T>, beta: &Tensor4<T>) -> Result<()> {
    let c = x.shape().c;
    for (dim, len) in [("gamma length", gamma.numel()), ("beta length", beta.numel())] {
        if len != c {
            return Err(Error::ShapeMismatch {
                op: "batchnorm2d",
                dim,
                expected: c,
                actual: len,
            });
        }
    }
    Ok(())
}

/// Two-pass mean/variance per channel, accumulated in f64.
pub fn channel_stats<T: Real>(x: &Tensor4<T>) -> ChannelStats<T> {
    let s = x.shape();
    let hw = s.plane();
    let count = s.n * hw;
    let mut mean = Vec::with_capacity(s.c);
    let mut var = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let mut sum = 0.0f64;
        for n in 0..s.n {
            let start = x.index(n, c, 0, 0);
            sum += x.data()[start..start + hw].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let m = sum / count as f64;
        let mut sq = 0.0f64;
        for n in 0..s.n {
            let start = x.index(n, c, 0, 0);
            sq += x.data()[start..start + hw]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean.push(T::of(m));
        var.push(T::of(sq / count as f64));
    }
    ChannelStats { mean, var, count }
}

fn normalize<T: Real>(x: &Tensor4<T>, gamma: &Tensor4<T>, beta: &Tensor4<T>, mean: &[T], inv_std: &[T]) -> Tensor4<T> {
    let s = x.shape();
    let hw = s.plane();
    let mut out = x.clone();
    out.grad = None;
    let data = out.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            let scale = gamma.data()[c] * inv_std[c];
            let shift = beta.data()[c] - mean[c] * scale;
            let start = (n * s.c + c) * hw;
            for v in &mut data[start..start + hw] {
                *v = *v * scale + shift;
            }
        }
    }
    out
}

pub fn inv_std<T: Real>(var: &[T]) -> Vec<T> {
    var.iter().map(|&v| T::one() / (v + T::of(BN_EPS)).sqrt()).collect()
}

/// Training-mode forward: normalizes with the batch statistics, which are
/// returned alongside the output.
pub fn batch_norm_train<T: Real>(
    x: &Tensor4<T>,
    gamma: &Tensor4<T>,
    beta: &Tensor4<T>,
) -> Result<(Tensor4<T>, ChannelStats<T>)> {
    check_affine(x, gamma, beta)?;
    let stats = channel_stats(x);
    let out = normalize(x, gamma, beta, &stats.mean, &inv_std(&stats.var));
    Ok((out, stats))
}

/// Eval-mode forward with externally supplied (running) statistics.
pub fn batch_norm_eval<T: Real>(
    x: &Tensor4<T>,
    gamma: &Tensor4<T>,
    beta: &Tensor4<T>,
    mean: &[T],
    var: &[T],
) -> Result<Tensor4<T>> {
    check_affine(x, gamma, beta)?;
    let c = x.shape().c;
    if mean.len() != c || var.len() != c {
        return Err(Error::ShapeMismatch {
            op: "batchnorm2d",
            dim: "running statistics length",
            expected: c,
            actual: mean.len().min(var.len()),
        });
    }
    Ok(normalize(x, gamma, beta, mean, &inv_std(var)))
}

/// Returns `(d_input, d_gamma, d_beta)`. With `batch_stats == true` the
/// mean and variance are treated as functions of the input.
pub fn batch_norm_backward<T: Real>(
    x: &Tensor4<T>,
    gamma: &Tensor4<T>,
    mean: &[T],
    inv_std: &[T],
    grad_out: &[T],
    batch_stats: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let s = x.shape();
    let hw = s.plane();
    let m = T::of((s.n * hw) as f64);
    let mut dx = vec![T::zero(); x.numel()];
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let (mu, is) = (mean[c], inv_std[c]);
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for n in 0..s.n {
            let start = (n * s.c + c) * hw;
            for (&g, &v) in grad_out[start..start + hw].iter().zip(&x.data()[start..start + hw]) {
                sum_g += g;
                sum_gx += g * (v - mu) * is;
            }
        }
        dgamma[c] = sum_gx;
        dbeta[c] = sum_g;
        let scale = gamma.data()[c] * is;
        for n in 0..s.n {
            let start = (n * s.c + c) * hw;
            let xs = &x.data()[start..start + hw];
            let gs = &grad_out[start..start + hw];
            for ((d, &g), &v) in dx[start..start + hw].iter_mut().zip(gs).zip(xs) {
                *d = if batch_stats {
                    let xhat = (v - mu) * is;
                    scale * (g - sum_g / m - xhat * sum_gx / m)
                } else {
                    scale * g
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn affine(c: usize, g: f64, b: f64) -> (Tensor4<f64>, Tensor4<f64>) {
        (
            Tensor4::full(Shape::new(1, c, 1, 1), g),
            Tensor4::full(Shape::new(1, c, 1, 1), b),
        )
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor4::<f64>::full(Shape::new(2, 1, 3, 3), 4.2);
        let (g, b) = affine(1, 1.7, -0.3);
        let (y, stats) = batch_norm_train(&x, &g, &b).unwrap();
        assert_eq!(stats.var[0], 0.0);
        assert!(y.data().iter().all(|&v| (v + 0.3).abs() < 1e-12));
    }

    #[test]
    fn unit_affine_normalizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor4::<f32>::randn(Shape::new(4, 3, 5, 5), 3.0, &mut rng).map(|v| v + 2.0);
        let (g, b) = affine(3, 1.0, 0.0);
        let (y, _) = batch_norm_train(&x, &g.cast(), &b.cast()).unwrap();
        let stats = channel_stats(&y);
        for c in 0..3 {
            assert!(stats.mean[c].abs() <= 1e-4);
            assert!((stats.var[c] - 1.0).abs() <= 1e-4, "var {}", stats.var[c]);
        }
    }

    #[test]
    fn matches_direct_statistics_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor4::<f64>::randn(Shape::new(4, 3, 5, 5), 1.0, &mut rng);
        let g = Tensor4::<f64>::randn(Shape::new(1, 3, 1, 1), 1.0, &mut rng);
        let b = Tensor4::<f64>::randn(Shape::new(1, 3, 1, 1), 1.0, &mut rng);
        let (y, _) = batch_norm_train(&x.cast::<f32>(), &g.cast(), &b.cast()).unwrap();
        // Oracle: gather each channel's values, compute mean and var directly.
        let s = x.shape();
        let mut expect = Tensor4::<f64>::zeros(s);
        for c in 0..s.c {
            let mut vals = Vec::new();
            for n in 0..s.n {
                for yy in 0..s.h {
                    for xx in 0..s.w {
                        vals.push(x.at(n, c, yy, xx));
                    }
                }
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            for n in 0..s.n {
                for yy in 0..s.h {
                    for xx in 0..s.w {
                        let i = expect.index(n, c, yy, xx);
                        expect.data_mut()[i] =
                            g.data()[c] * (x.at(n, c, yy, xx) - mean) / (var + BN_EPS).sqrt() + b.data()[c];
                    }
                }
            }
        }
        assert!(y.cast::<f64>().max_abs_diff(&expect) <= 1e-5);
    }

    #[test]
    fn eval_uses_supplied_statistics() {
        let x = Tensor4::<f64>::full(Shape::new(1, 2, 2, 2), 3.0);
        let (g, b) = affine(2, 2.0, 1.0);
        let y = batch_norm_eval(&x, &g, &b, &[1.0, 3.0], &[4.0 - BN_EPS, 1.0 - BN_EPS]).unwrap();
        assert!((y.at(0, 0, 0, 0) - 3.0).abs() < 1e-12);
        assert!((y.at(0, 1, 1, 1) - 1.0).abs() < 1e-12);
        assert!(batch_norm_eval(&x, &g, &b, &[0.0], &[1.0]).is_err());
    }
}
