use super::Tensor;
use crate::error::{GscError, Result};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears their gradients.
    ///
    /// Fails without touching anything if a parameter has no gradient or
    /// the parameter set changed shape since the first step.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(GscError::contract("adam: parameter count changed between steps"));
        }
        for (i, p) in params.iter().enumerate() {
            match &p.grad {
                None => return Err(GscError::contract(format!("adam: parameter {i} has no gradient"))),
                Some(g) if g.len() != p.numel() || self.first[i].len() != p.numel() => {
                    return Err(GscError::contract(format!("adam: shape mismatch for parameter {i}")))
                }
                _ => {}
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad.take().expect("checked above");
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[j] + self.weight_decay * *w;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Tensor {
        let mut t = Tensor::scalar(v).with_grad();
        t.grad = Some(vec![g]);
        t
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut w = Tensor::matrix(1, 3, vec![0.3, -1.0, 2.0]).unwrap().with_grad();
        w.grad = Some(vec![0.0; 3]);
        let before = w.data().to_vec();
        let mut adam = Adam::new(1e-4);
        adam.step(&mut [&mut w]).unwrap();
        assert_eq!(w.data(), before.as_slice());
        assert!(w.grad.is_none());
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.7, -0.02] {
            let mut w = param(1.0, g);
            let mut adam = Adam::new(1e-4);
            adam.eps = 0.0;
            adam.step(&mut [&mut w]).unwrap();
            assert!((w.item() - (1.0 - 1e-4 * g.signum())).abs() < 1e-15);
        }
    }

    #[test]
    fn two_steps_match_recurrence() {
        let (lr, g, w0) = (0.01, 0.5, 1.0);
        // hand-evaluated recurrence
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut expected = w0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            expected -= lr * mh / (vh.sqrt() + eps);
        }
        let mut w = param(w0, g);
        let mut adam = Adam::new(lr);
        adam.step(&mut [&mut w]).unwrap();
        w.grad = Some(vec![g]);
        adam.step(&mut [&mut w]).unwrap();
        assert!((w.item() - expected).abs() < 1e-15, "{} vs {expected}", w.item());
        assert_eq!(adam.steps(), 2);
    }

    #[test]
    fn missing_gradient_is_contract_violation() {
        let mut w = Tensor::scalar(1.0).with_grad();
        let mut adam = Adam::new(1e-3);
        assert!(matches!(adam.step(&mut [&mut w]), Err(GscError::Contract(_))));
    }
}
