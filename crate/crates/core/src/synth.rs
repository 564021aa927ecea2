//! Procedural piecewise-smooth test scenes.

use rand::Rng;

use crate::tensor::{Shape, Tensor4};

/// `(1, c, h, w)` scene in `[0, 1]`: a linear gradient background with
/// overlapping flat rectangles and disks and one soft sinusoidal stripe.
pub fn scene<R: Rng + ?Sized>(h: usize, w: usize, c: usize, rng: &mut R) -> Tensor4<f32> {
    let (hf, wf) = (h as f32, w as f32);
    let base: Vec<f32> = (0..c).map(|_| rng.random_range(0.2..0.8)).collect();
    let gy: f32 = rng.random_range(-0.3..0.3);
    let gx: f32 = rng.random_range(-0.3..0.3);
    let mut img = Tensor4::from_fn(Shape::new(1, c, h, w), |_, ch, y, x| {
        base[ch] + gy * (y as f32 / hf - 0.5) + gx * (x as f32 / wf - 0.5)
    });
    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let value: Vec<f32> = (0..c).map(|_| rng.random_range(0.0..1.0)).collect();
        let cy = rng.random_range(0.0..hf);
        let cx = rng.random_range(0.0..wf);
        let ry = rng.random_range(0.08..0.3) * hf;
        let rx = rng.random_range(0.08..0.3) * wf;
        let disk = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f32 - cy) / ry;
                let dx = (x as f32 - cx) / rx;
                let inside = if disk {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    for (ch, &v) in value.iter().enumerate() {
                        let i = img.index(0, ch, y, x);
                        img.data_mut()[i] = v;
                    }
                }
            }
        }
    }
    let period = rng.random_range(6.0..16.0f32);
    let angle = rng.random_range(0.0..std::f32::consts::PI);
    let (s, co) = angle.sin_cos();
    let amp = rng.random_range(0.02..0.08f32);
    let data = img.data_mut();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let t = (y as f32 * s + x as f32 * co) * std::f32::consts::TAU / period;
                data[(ch * h + y) * w + x] += amp * t.sin();
            }
        }
    }
    img.clamp01()
}
