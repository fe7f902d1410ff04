//! Adam optimizer with bias correction, over flat f64 parameter vectors.

pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_roughly_lr() {
        let mut adam = Adam::new(2, 1e-3, 0.9, 0.999, 1e-8);
        let mut params = vec![1.0, -1.0];
        adam.update(&mut params, &[0.5, -2.0]);
        // With bias correction the first update is ~lr in magnitude.
        assert!((params[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!((params[1] - (-1.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::new(1, 1e-3, 0.9, 0.999, 1e-8);
        let mut params = vec![3.0];
        adam.update(&mut params, &[0.0]);
        assert_eq!(params, vec![3.0]);
    }
}
