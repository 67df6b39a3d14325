use serde::{Deserialize, Serialize};

use super::{ParamGroup, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    /// Rate for [`ParamGroup::Backbone`] parameters; `None` uses `learning_rate`.
    pub backbone_learning_rate: Option<f64>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            backbone_learning_rate: None,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step_count: u64,
    first_moment: Vec<Option<Tensor<T>>>,
    second_moment: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        if config.learning_rate <= 0.0 || config.backbone_learning_rate.is_some_and(|lr| lr <= 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if config.weight_decay < 0.0 {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(Self {
            config,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn lr_for(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Backbone => self.config.backbone_learning_rate.unwrap_or(self.config.learning_rate),
            ParamGroup::Other => self.config.learning_rate,
        }
    }

    /// Applies one update to every trainable parameter, then zeroes all grads.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (_, p) in store.iter() {
            if p.trainable && p.grad.is_none() {
                return Err(Error::MissingGrad(p.name.clone()));
            }
        }
        if self.first_moment.len() < store.len() {
            self.first_moment.resize(store.len(), None);
            self.second_moment.resize(store.len(), None);
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = &self.config;
        let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.epsilon));
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);

        let lrs: Vec<f64> = store.iter().map(|(_, p)| self.lr_for(p.group)).collect();
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let lr = T::lit(lrs[i]);
            let decay = T::one() - lr * T::lit(c.weight_decay);
            let grad = p.grad.as_ref().expect("checked above");
            let m = self.first_moment[i].get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            let v = self.second_moment[i].get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            for (((w, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
