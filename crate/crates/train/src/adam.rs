//! Adaptive-moment optimizer over flattened model parameters.
//!
//! Moment state is held in f64 regardless of the model precision, so an
//! f32 training run accumulates statistics without rounding them away.

use prefixforge_model::{Params, Real};

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One descent step along `grads`. Parameter order must match between
    /// calls; the moment vectors are keyed by flat position.
    pub fn step<F: Real>(&mut self, params: &mut Params<F>, grads: &Params<F>) {
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        let mut at = 0usize;
        for ((_, values), (_, grad)) in params.flatten_mut().into_iter().zip(grads.flatten()) {
            let grad = grad.as_slice();
            debug_assert_eq!(values.len(), grad.len());
            for (value, &g) in values.iter_mut().zip(grad) {
                let g = g.to_f64();
                self.m[at] = self.beta1 * self.m[at] + (1.0 - self.beta1) * g;
                self.v[at] = self.beta2 * self.v[at] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[at] / bias1;
                let v_hat = self.v[at] / bias2;
                let delta = self.lr * m_hat / (v_hat.sqrt() + self.eps);
                *value = F::from_f64(value.to_f64() - delta);
                at += 1;
            }
        }
        debug_assert_eq!(at, self.m.len(), "parameter count changed mid-run");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use prefixforge_model::ModelConfig;

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::new(4, 2);
        c.shared_layers = 1;
        c.row_layers = 0;
        c.col_layers = 1;
        c.heads = 2;
        c.ffn_mult = 1;
        c
    }

    #[test]
    fn descends_a_quadratic() {
        // With gradient = params, Adam drives every coordinate toward zero.
        let cfg = tiny();
        let mut params = Params::<f64>::init(&cfg, 3);
        let count: usize = params.flatten().iter().map(|(_, t)| t.as_slice().len()).sum();
        let mut opt = Adam::new(0.05, count);
        let norm = |p: &Params<f64>| -> f64 {
            p.flatten()
                .iter()
                .flat_map(|(_, t)| t.as_slice().to_vec())
                .map(|v| v * v)
                .sum()
        };
        let before = norm(&params);
        for _ in 0..200 {
            let grads = params.clone();
            opt.step(&mut params, &grads);
        }
        let after = norm(&params);
        assert!(
            after < before * 1e-2,
            "no progress: {before} -> {after}"
        );
        assert_eq!(opt.steps_taken(), 200);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Bias correction makes the first update exactly lr-sized for any
        // nonzero gradient.
        let cfg = tiny();
        let mut params = Params::<f64>::init(&cfg, 7);
        let grads = params.clone();
        let count: usize = params.flatten().iter().map(|(_, t)| t.as_slice().len()).sum();
        let before: Vec<f64> = params
            .flatten()
            .iter()
            .flat_map(|(_, t)| t.as_slice().to_vec())
            .collect();
        let gvals: Vec<f64> = before.clone();
        let mut opt = Adam::new(1e-3, count);
        opt.step(&mut params, &grads);
        let after: Vec<f64> = params
            .flatten()
            .iter()
            .flat_map(|(_, t)| t.as_slice().to_vec())
            .collect();
        for ((b, a), g) in before.iter().zip(&after).zip(&gvals) {
            if g.abs() > 1e-4 {
                let moved = (b - a) * g.signum();
                assert!((moved - 1e-3).abs() < 1e-6, "step size {moved}");
            }
        }
    }
}
