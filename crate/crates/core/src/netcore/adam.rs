use super::{NetError, ParamVector};

/// Bias-corrected Adam with moments kept alongside the parameters it owns.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Adam { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step_count: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one update from `params.grads`, then zeroes the gradients.
    pub fn step(&mut self, params: &mut ParamVector) -> Result<(), NetError> {
        if params.grads.iter().any(|g| !g.is_finite()) {
            return Err(NetError::NonFiniteGrad);
        }
        if params.len() != self.m.len() {
            return Err(NetError::DimMismatch { what: "optimizer state", expected: self.m.len(), got: params.len() });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.values.iter_mut().zip(&params.grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + self.epsilon);
        }
        params.zero_grads();
        Ok(())
    }
}
