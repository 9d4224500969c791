//! Adam with bias correction.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Real;

#[derive(Debug, Clone)]
pub struct Adam<R> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<R>>,
    second: Vec<Vec<R>>,
}

impl<R: Real> Adam<R> {
    /// Moments sized to match every parameter in `store`.
    pub fn new(store: &ParamStore<R>, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<R>> = store
            .entries()
            .iter()
            .map(|e| vec![R::zero(); e.value().numel()])
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears the gradients.
    pub fn step(&mut self, store: &mut ParamStore<R>) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(Error::Config("optimizer state does not match parameters".to_string()));
        }
        if let Some(id) = store.ids().find(|&id| store.grad(id).is_none()) {
            return Err(Error::MissingGrad(store.name(id).to_string()));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = R::from_f64(self.beta1);
        let b2 = R::from_f64(self.beta2);
        let correction1 = R::one() - b1.powi(t);
        let correction2 = R::one() - b2.powi(t);
        let lr = R::from_f64(self.learning_rate);
        let eps = R::from_f64(self.epsilon);

        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let grad = store.grad(id).expect("checked above").data().to_vec();
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let value = store.value_mut(id);
            for (((p, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (R::one() - b1) * gi;
                *vi = b2 * *vi + (R::one() - b2) * gi * gi;
                let m_hat = *mi / correction1;
                let v_hat = *vi / correction2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
