//! Adam optimizer and the polynomial learning-rate schedule.

use crate::error::{Error, Result};

use super::tensor::{c, Scalar};

/// lr0 * (1 - iter/max_iters)^power.
pub fn poly_lr(iter: usize, max_iters: usize, lr0: f64, power: f64) -> Result<f64> {
    if max_iters == 0 {
        return Err(Error::invalid("poly_lr: max_iters must be positive"));
    }
    if iter > max_iters {
        return Err(Error::invalid(format!("poly_lr: iter {iter} > max_iters {max_iters}")));
    }
    Ok(lr0 * (1.0 - iter as f64 / max_iters as f64).powf(power))
}

/// A named mutable view of one parameter tensor, used by the optimizer and
/// the model serializer.
pub struct ParamSlot<'a, T> {
    pub name: &'static str,
    pub data: &'a mut Vec<T>,
    pub shape: Vec<usize>,
}

/// Bias-corrected Adam. Moment buffers are kept in f64 regardless of the
/// parameter scalar type; updates are sequential and deterministic.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies one update step. `grads` must align with `params` (same order
    /// and lengths); non-finite gradients abort with the parameter name.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut [ParamSlot<'_, T>],
        grads: &[Vec<T>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid("adam: params/grads arity mismatch"));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.data.len() != g.len() {
                return Err(Error::invalid(format!("adam: shape mismatch for '{}'", p.name)));
            }
            for i in 0..g.len() {
                let gi = g[i].to_f64().unwrap();
                if !gi.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient in parameter '{}' at index {i}",
                        p.name
                    )));
                }
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                let w = p.data[i].to_f64().unwrap() - lr * mhat / (vhat.sqrt() + self.eps);
                p.data[i] = c(w);
            }
        }
        Ok(())
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn slot(data: &mut Vec<f64>) -> ParamSlot<'_, f64> {
        let shape = vec![data.len()];
        ParamSlot { name: "w", data, shape }
    }

    #[test]
    fn poly_lr_endpoints_and_midpoint() {
        assert_relative_eq!(poly_lr(0, 100, 0.001, 0.9).unwrap(), 0.001, epsilon = 1e-15);
        assert_relative_eq!(poly_lr(100, 100, 0.001, 0.9).unwrap(), 0.0, epsilon = 1e-15);
        let mid = poly_lr(50, 100, 0.001, 0.9).unwrap();
        assert_relative_eq!(mid, 0.001 * 0.5f64.powf(0.9), epsilon = 1e-15);
        assert!((mid - 5.359e-4).abs() < 1e-6);
        assert!(poly_lr(101, 100, 0.001, 0.9).is_err());
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut w = vec![0.5, -0.25];
        let before = w.clone();
        let mut adam = Adam::new();
        adam.step(&mut [slot(&mut w)], &[vec![0.0, 0.0]], 0.1).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // Bias correction makes the first step exactly -lr * g/|g| (up to eps).
        let mut w = vec![0.0];
        let mut adam = Adam::new();
        adam.step(&mut [slot(&mut w)], &[vec![1.0]], 0.01).unwrap();
        assert_relative_eq!(w[0], -0.01, epsilon = 1e-8);
    }

    #[test]
    fn optimizes_scalar_quadratic() {
        // 100 steps on f(w) = w^2 from w = 1 with lr 0.1.
        let mut w = vec![1.0];
        let mut adam = Adam::new();
        for _ in 0..100 {
            let g = vec![2.0 * w[0]];
            adam.step(&mut [slot(&mut w)], &[g], 0.1).unwrap();
        }
        assert!(w[0].abs() < 0.1, "w = {}", w[0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut w = vec![0.0];
        let mut adam = Adam::new();
        let err = adam.step(&mut [slot(&mut w)], &[vec![f64::NAN]], 0.1).unwrap_err();
        assert!(err.to_string().contains("'w'"), "{err}");
    }
}
