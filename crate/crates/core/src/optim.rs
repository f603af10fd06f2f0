//! First-order optimizers over a [`ParamStore`]. Only trainable parameters move.

use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// SGD with heavy-ball momentum.
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Optimizer {
            kind,
            lr,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Applies `grad * grad_scale` to every trainable parameter and clears all gradients.
    pub fn step(&mut self, store: &mut ParamStore, grad_scale: f64) {
        self.step += 1;
        let ids: Vec<_> = store.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let m = self.first[slot].data_mut();
            let v = self.second[slot].data_mut();
            let value = p.value.data_mut();
            let grad = p.grad.data();
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    for i in 0..value.len() {
                        m[i] = momentum * m[i] + grad[i] * grad_scale;
                        value[i] -= self.lr * m[i];
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(self.step as i32);
                    let bc2 = 1.0 - beta2.powi(self.step as i32);
                    for i in 0..value.len() {
                        let g = grad[i] * grad_scale;
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        value[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                    }
                }
            }
        }
        store.zero_grads();
    }
}
