//! Adaptive-moment gradient descent over a registered set of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam optimizer. Moment buffers mirror the tensor shapes passed to [`Adam::new`];
/// every call to [`Adam::step`] must present the same tensors in the same order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, tensor_sizes: &[usize]) -> Result<Self> {
        if learning_rate <= 0.0 || !learning_rate.is_finite() {
            return Err(Error::InvalidArgument(
                "learning rate must be a positive real".into(),
            ));
        }
        Ok(Adam {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step_count: 0,
            first_moment: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one bias-corrected moment update to every registered tensor.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != self.first_moment.len() {
            return Err(Error::shape(
                "optimizer tensors",
                self.first_moment.len(),
                params.len(),
            ));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != self.first_moment[k].len() || g.len() != p.len() {
                return Err(Error::shape(
                    "optimizer tensor width",
                    self.first_moment[k].len(),
                    p.len(),
                ));
            }
            let m = &mut self.first_moment[k];
            let v = &mut self.second_moment[k];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_fresh_parameters_unchanged() {
        let mut adam = Adam::new(0.1, &[2]).unwrap();
        let mut p = vec![1.5, -0.5];
        adam.step(&mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.5, -0.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn quadratic_loss_step_moves_toward_minimum() {
        // loss = (p - 3)^2, gradient 2(p - 3); from p=0 the step must increase p.
        let mut adam = Adam::new(0.05, &[1]).unwrap();
        let mut p = vec![0.0];
        let g = 2.0 * (p[0] - 3.0);
        adam.step(&mut [&mut p], &[&[g]]).unwrap();
        assert!(p[0] > 0.0);
    }

    #[test]
    fn repeated_steps_converge_on_scalar_quadratic() {
        let mut adam = Adam::new(0.1, &[1]).unwrap();
        let mut p = vec![0.0];
        for _ in 0..500 {
            let g = 2.0 * (p[0] - 3.0);
            adam.step(&mut [&mut p], &[&[g]]).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 0.05);
    }

    #[test]
    fn tensor_count_mismatch_is_an_error() {
        let mut adam = Adam::new(0.1, &[1, 2]).unwrap();
        let mut p = vec![0.0];
        assert!(adam.step(&mut [&mut p], &[&[0.0]]).is_err());
    }
}
