use crate::error::{Error, Result};

/// Bias-corrected adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut opt = OptimizerState::new(3, 0.1);
        let mut p = vec![1.0, -2.0, 3.0];
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_hand_trace() {
        // m = 0.1 g, v = 0.001 g^2, m_hat = g, v_hat = g^2:
        // x1 = x0 - lr * g / (|g| + eps)
        let mut opt = OptimizerState::new(1, 0.01);
        let mut p = vec![0.5];
        opt.step(&mut p, &[-4.0]).unwrap();
        let expected = 0.5 - 0.01 * -4.0 / (4.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn minimizes_square() {
        let mut opt = OptimizerState::new(1, 1e-2);
        let mut x = vec![1.0];
        for _ in 0..500 {
            let g = [2.0 * x[0]];
            opt.step(&mut x, &g).unwrap();
        }
        assert!(x[0].abs() < 1e-2, "x = {}", x[0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut opt = OptimizerState::new(2, 0.1);
        assert!(opt.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
