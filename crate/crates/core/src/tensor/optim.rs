use super::Matrix;

/// Adaptive-moment gradient descent over a fixed list of parameter matrices.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    /// Applies one update. `grads[i]` of `None` is treated as zero.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Option<&Matrix>]) {
        assert_eq!(params.len(), self.first.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (i, param) in params.iter_mut().enumerate() {
            let Some(grad) = grads[i] else { continue };
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (k, (p, g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![Matrix::row_vector(vec![1.0, -1.0])];
        let g = Matrix::row_vector(vec![3.0, -0.5]);
        let mut adam = Adam::new(0.1, &[(1, 2)]);
        adam.step(&mut params, &[Some(&g)]);
        assert!((params[0].get(0, 0) - 0.9).abs() < 1e-6);
        assert!((params[0].get(0, 1) + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = vec![Matrix::scalar(5.0)];
        let mut adam = Adam::new(0.05, &[(1, 1)]);
        for _ in 0..2000 {
            let g = Matrix::scalar(2.0 * (params[0].item() - 1.5));
            adam.step(&mut params, &[Some(&g)]);
        }
        assert!((params[0].item() - 1.5).abs() < 1e-3);
    }
}
