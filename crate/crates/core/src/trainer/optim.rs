use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AdamW with decoupled weight decay over an ordered list of tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    pub m: Vec<Array2<f64>>,
    #[serde(skip)]
    pub v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes.into_iter().map(|s| (Array2::zeros(s), Array2::zeros(s))).unzip();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    /// One update. `lr[i]` is the learning rate of tensor `i`.
    pub fn update(&mut self, params: &mut [&mut Array2<f64>], grads: &[&Array2<f64>], lr: &[f64], weight_decay: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() || lr.len() != self.m.len() {
            return Err(Error::shape("optimizer tensors", self.m.len(), params.len()));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((p, g), (m, v)), &lr) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())).zip(lr) {
            if p.dim() != g.dim() || p.dim() != m.dim() {
                return Err(Error::shape("optimizer tensor", format!("{:?}", m.dim()), format!("{:?}", p.dim())));
            }
            ndarray::Zip::from(&mut **p).and(*g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * weight_decay * *p;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            });
        }
        if self.m.iter().chain(&self.v).any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("optimizer moments".into()));
        }
        Ok(())
    }
}
