//! Adam with bias correction.

use crate::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state over a fixed sequence of parameter slots. One [`Adam::begin`]
/// per optimizer step; slots must then be visited in a stable order.
pub struct Adam<T> {
    cfg: AdamConfig,
    step: u64,
    slots: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            slots: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    #[cfg(test)]
    pub(crate) fn slots_first_moment(&self) -> Vec<T> {
        self.slots.first().map(|(m, _)| m.clone()).unwrap_or_default()
    }

    pub fn begin(&mut self, lr: T) -> AdamPass<'_, T> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - T::of_f64(self.cfg.beta1).powi(t);
        let bc2 = T::one() - T::of_f64(self.cfg.beta2).powi(t);
        AdamPass {
            adam: self,
            lr,
            bc1,
            bc2,
            slot: 0,
            error: None,
        }
    }
}

pub struct AdamPass<'a, T: Scalar> {
    adam: &'a mut Adam<T>,
    lr: T,
    bc1: T,
    bc2: T,
    slot: usize,
    error: Option<Error>,
}

impl<T: Scalar> AdamPass<'_, T> {
    /// Updates one parameter array in place. Slots are identified by call
    /// order, so every step must visit the same parameters in the same
    /// sequence.
    pub fn update(&mut self, name: &str, param: &mut Array<T>, grad: &Array<T>) {
        if self.error.is_some() {
            return;
        }
        if param.shape() != grad.shape() {
            self.error = Some(Error::shape(format!(
                "adam: gradient shape {:?} != parameter `{name}` shape {:?}",
                grad.shape(),
                param.shape()
            )));
            return;
        }
        if !grad.is_finite() {
            self.error = Some(Error::NonFinite(format!("gradient of `{name}`")));
            return;
        }
        let adam = &mut *self.adam;
        if self.slot == adam.slots.len() {
            adam.slots
                .push((vec![T::zero(); param.numel()], vec![T::zero(); param.numel()]));
        }
        let (m, v) = &mut adam.slots[self.slot];
        self.slot += 1;
        let b1 = T::of_f64(adam.cfg.beta1);
        let b2 = T::of_f64(adam.cfg.beta2);
        let eps = T::of_f64(adam.cfg.eps);
        let one = T::one();
        for ((p, g), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = b1 * *mi + (one - b1) * *g;
            *vi = b2 * *vi + (one - b2) * *g * *g;
            let m_hat = *mi / self.bc1;
            let v_hat = *vi / self.bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    pub fn finish(self) -> Result<()> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}
