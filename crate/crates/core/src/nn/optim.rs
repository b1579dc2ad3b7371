use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale the gradient when its global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }
}

/// Adam with bias correction; one moment pair per parameter tensor.
pub struct Adam<T> {
    cfg: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            cfg,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.learning_rate = lr;
    }

    /// Apply one update. `grads` may omit parameters (treated as zero gradient).
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) {
        self.step += 1;
        let scale = match self.cfg.clip_norm {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flat_map(|(_, g)| g.data())
                    .map(|x| x.as_f64() * x.as_f64())
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let t = self.step as f64;
        let lr = T::of(self.cfg.learning_rate);
        let c1 = T::of(1.0 - b1.powf(t));
        let c2 = T::of(1.0 - b2.powf(t));
        let eps = T::of(self.cfg.epsilon);
        let (b1, b2, scale) = (T::of(b1), T::of(b2), T::of(scale));
        for (id, g) in grads {
            let i = id.index();
            let p = params.get_mut(*id).data_mut();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pj, mj), vj), gj) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                let gj = *gj * scale;
                *mj = b1 * *mj + (T::one() - b1) * gj;
                *vj = b2 * *vj + (T::one() - b2) * gj * gj;
                let mhat = *mj / c1;
                let vhat = *vj / c2;
                *pj -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
