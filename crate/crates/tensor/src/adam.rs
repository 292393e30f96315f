use crate::error::{NnError, Result};
use crate::{ParamStore, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub config: AdamConfig,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = |p: &crate::Parameter<T>| vec![T::zero(); p.tensor.numel()];
        Self {
            step: 0,
            config,
            first_moment: store.iter().map(zeros).collect(),
            second_moment: store.iter().map(zeros).collect(),
        }
    }

    /// Applies one bias-corrected Adam update to every trainable parameter
    /// holding a gradient, then clears all gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.first_moment.len() {
            return Err(NnError::Precondition(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first_moment.len(),
                store.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = T::lit(1.0 - beta1.powi(t));
        let c2 = T::lit(1.0 - beta2.powi(t));
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (lr, eps) = (T::lit(lr), T::lit(eps));
        for ((p, m), v) in store
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let Some(grad) = p.tensor.grad.take() else {
                continue;
            };
            if !p.trainable {
                continue;
            }
            if grad.len() != m.len() {
                return Err(NnError::Shape(format!(
                    "gradient for {} has {} values, expected {}",
                    p.name,
                    grad.len(),
                    m.len()
                )));
            }
            for (((w, g), m), v) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (T::one() - b1) * *g;
                *v = b2 * *v + (T::one() - b2) * *g * *g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}
