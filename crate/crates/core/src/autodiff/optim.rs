use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Updates trainable parameters from their accumulated gradients.
pub trait Optimizer<T: Scalar> {
    fn step(&mut self, store: &mut ParamStore<T>, lr: T);
}

#[derive(Clone, Debug, Default)]
pub struct Sgd;

impl<T: Scalar> Optimizer<T> for Sgd {
    fn step(&mut self, store: &mut ParamStore<T>, lr: T) {
        for p in store.iter_mut().filter(|p| p.trainable) {
            for (v, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *v -= lr * g;
            }
        }
    }
}

/// Adam with bias correction; moment buffers are keyed by parameter position.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn step(&mut self, store: &mut ParamStore<T>, lr: T) {
        if self.m.len() != store.len() {
            self.m = store
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - T::lit(self.beta1.powi(self.t));
        let c2 = T::one() - T::lit(self.beta2.powi(self.t));
        let eps = T::lit(self.eps);
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((w, &g), (mi, vi)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Boxed optimizer of the requested kind.
pub fn make_optimizer<T: Scalar>(kind: OptimizerKind) -> Box<dyn Optimizer<T>> {
    match kind {
        OptimizerKind::Sgd => Box::new(Sgd),
        OptimizerKind::Adam => Box::new(Adam::default()),
    }
}
