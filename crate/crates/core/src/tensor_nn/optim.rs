use super::ParamTensor;
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerConfig {
    /// Plain gradient descent, `w -= lr * g`.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rate decayed linearly from `base` at step 0 to zero at `total`.
pub fn linear_decay(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 - (step as f64 / total as f64).min(1.0))
}

/// First-order optimizer over an ordered parameter list.
///
/// The moment buffers are bound to the order and sizes of the parameter list
/// seen on the first step; later steps must pass the same list.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    steps: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates `params` in place from their accumulated gradients. Gradients
    /// are left as they are; callers reset them explicitly. A non-finite
    /// gradient aborts the step before any parameter changes.
    pub fn step(&mut self, params: &mut [&mut ParamTensor<T>], lr: f64) -> Result<()> {
        for p in params.iter() {
            if let Some(g) = p.grad.iter().find(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {} ({g})", p.name)));
            }
        }
        if let OptimizerConfig::Adam { .. } = self.config {
            if self.first.is_empty() {
                self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
                self.second = self.first.clone();
            }
            let sizes_match = self.first.len() == params.len()
                && self.first.iter().zip(params.iter()).all(|(m, p)| m.len() == p.len());
            if !sizes_match {
                return Err(Error::invalid("optimizer called with a different parameter list"));
            }
        }
        self.steps += 1;
        let lr_t = T::lit(lr);
        match self.config {
            OptimizerConfig::Sgd => {
                for p in params.iter_mut() {
                    let ParamTensor { values, grad, .. } = &mut **p;
                    for (w, &g) in values.iter_mut().zip(grad.iter()) {
                        *w -= lr_t * g;
                    }
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = T::lit(1.0 - beta1.powi(t));
                let c2 = T::lit(1.0 - beta2.powi(t));
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let ParamTensor { values, grad, .. } = &mut **p;
                    for (((w, &g), m), v) in values.iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr_t * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
