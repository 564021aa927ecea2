use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Real, Tensor4};

/// `y + n` with `n ~ N(0, (sigma / 255)^2)` i.i.d.; the result is not clamped.
pub fn add_awgn<T: Real, R: Rng + ?Sized>(y: &Tensor4<T>, sigma: f64, rng: &mut R) -> Tensor4<T> {
    if sigma == 0.0 {
        return y.clone();
    }
    let std = sigma / 255.0;
    let data = y
        .data()
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + T::of(z * std)
        })
        .collect();
    Tensor4::from_vec(y.shape(), data).expect("same length")
}
