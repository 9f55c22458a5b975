use serde::{Deserialize, Serialize};

use super::net::Gradients;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(learning_rate: f64, shapes: &Gradients) -> Self {
        let zeros: Gradients = shapes.iter().map(|g| vec![0.0; g.len()]).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of `params` (one slice per block).
    pub fn update<'a>(&mut self, params: impl Iterator<Item = &'a mut [f64]>, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let grads = vec![vec![3.0, -0.5, 0.0]];
        let mut adam = Adam::new(1e-3, &grads);
        let mut p = vec![1.0, 1.0, 1.0];
        adam.update(std::iter::once(p.as_mut_slice()), &grads);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (1.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut x = vec![5.0, -3.0];
        let mut adam = Adam::new(0.1, &vec![vec![0.0; 2]]);
        for _ in 0..2000 {
            let g = vec![x.iter().map(|v| 2.0 * v).collect::<Vec<f64>>()];
            adam.update(std::iter::once(x.as_mut_slice()), &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }
}
