use crate::tensor::Real;

/// Adam with bias correction. Moment buffers are created lazily per slot.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advances the shared step counter; call once before the updates of a step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates parameter slot `slot` in place.
    pub fn update<T: Real>(&mut self, slot: usize, param: &mut [T], grad: &[T], lr: f64) {
        assert!(self.step > 0, "begin_step must precede update");
        assert_eq!(param.len(), grad.len());
        if self.m.len() <= slot {
            self.m.resize(slot + 1, Vec::new());
            self.v.resize(slot + 1, Vec::new());
        }
        if self.m[slot].len() != param.len() {
            self.m[slot] = vec![0.0; param.len()];
            self.v[slot] = vec![0.0; param.len()];
        }
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..param.len() {
            let g = grad[i].as_f64();
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            param[i] = T::of(param[i].as_f64() - lr * mhat / (vhat.sqrt() + self.eps));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut a = Adam::default();
        let mut p = [1.5f32, -2.0];
        a.begin_step();
        a.update(0, &mut p, &[0.0, 0.0], 1e-3);
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut a = Adam::default();
        let mut p = [0.0f64];
        a.begin_step();
        a.update(0, &mut p, &[1.0], 1e-3);
        assert!((p[0] + 1e-3).abs() < 1e-8);
    }

    #[test]
    fn descends_a_parabola() {
        let mut a = Adam::default();
        let mut p = [1.0f64];
        for _ in 0..100 {
            let g = [2.0 * p[0]];
            a.begin_step();
            a.update(0, &mut p, &g, 0.01);
        }
        assert!(p[0].abs() < 0.5, "{}", p[0]);
    }
}
