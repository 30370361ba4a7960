use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    #[serde(rename = "SGD")]
    Sgd,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Adam => "Adam",
            Self::Sgd => "SGD",
        })
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

pub trait Optimizer<T> {
    fn step(&mut self, params: &mut [T], grad: &[T]);
}

/// `w ← w − η(g + λw)`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    lr: T,
    weight_decay: T,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr: T::lit(lr),
            weight_decay: T::lit(weight_decay),
        }
    }
}

impl<T: Scalar> Optimizer<T> for Sgd<T> {
    fn step(&mut self, params: &mut [T], grad: &[T]) {
        for (w, &g) in params.iter_mut().zip(grad) {
            *w = *w - self.lr * (g + self.weight_decay * *w);
        }
    }
}

/// Adam with decoupled weight decay:
/// `w ← w − η(m̂ / (√v̂ + ε) + λw)`.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    weight_decay: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, weight_decay: f64, n_params: usize) -> Self {
        Self {
            lr: T::lit(lr),
            weight_decay: T::lit(weight_decay),
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
        }
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let (b1, b2, eps) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2), T::lit(ADAM_EPSILON));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for (((w, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + eps);
            *w = *w - self.lr * (update + self.weight_decay * *w);
        }
    }
}
