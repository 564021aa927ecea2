//! Central finite-difference verification of taped gradients (64-bit only).

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn eval_loss<F>(f: &F, inputs: &[Tensor4<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss);
    if value.numel() != 1 {
        return Err(Error::NonScalarLoss { numel: value.numel() });
    }
    Ok(value.data()[0])
}

/// Compares the taped gradient of `f` at `inputs` against
/// `(f(x + step) - f(x - step)) / (2 step)` for every coordinate of every
/// input. `f` receives one leaf per input, in order, and must return a scalar.
pub fn grad_check<F>(inputs: &[Tensor4<f64>], f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut point: Vec<Tensor4<f64>> = inputs.to_vec();
    for (ti, grads) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            let orig = point[ti].data()[ei];
            point[ti].data_mut()[ei] = orig + step;
            let up = eval_loss(&f, &point)?;
            point[ti].data_mut()[ei] = orig - step;
            let down = eval_loss(&f, &point)?;
            point[ti].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(a, numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (ti, ei);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_graph_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let a = Tensor4::randn(Shape::new(1, 2, 3, 3), 1.0, &mut rng);
        let b = Tensor4::randn(Shape::new(1, 1, 3, 3), 1.0, &mut rng);
        let report = grad_check(
            &[a, b],
            |t, v| {
                let c = t.concat_channels(v[0], v[1])?;
                Ok(t.sum(c))
            },
            1e-5,
        )
        .unwrap();
        assert_eq!(report.checked, 27);
        assert!(report.max_rel_error <= 1e-10, "{report:?}");
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor4::zeros(Shape::new(1, 1, 2, 2));
        let err = grad_check(&[x], |t, v| Ok(t.relu(v[0])), 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss { numel: 4 }));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // d/dx sum(x * x) = 2x; comparing against a tape that only sees one
        // factor as a leaf must fail.
        let x = Tensor4::full(Shape::new(1, 1, 1, 2), 1.5);
        let report = grad_check(
            &[x],
            |t, v| {
                let frozen = t.constant(t.value(v[0]).clone());
                let p = t.mul(v[0], frozen)?;
                Ok(t.sum(p))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error > 0.4);
    }
}
