use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam (bias-corrected) or plain SGD with per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<F> {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Updates applied so far.
    pub step: u64,
    /// First moments, one per parameter.
    pub m: Vec<Tensor<F>>,
    /// Second moments, one per parameter.
    pub v: Vec<Tensor<F>>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[Param<F>]) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect()
        };
        Ok(Optimizer {
            kind,
            lr,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    /// Applies one update. `grads[i]` belongs to `params[i]`.
    pub fn apply(&mut self, params: &mut [Param<F>], grads: &[Option<&[F]>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer holds {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            match g {
                Some(g) if g.len() == p.value.numel() => {}
                _ => return Err(Error::MissingGradient(p.name.clone())),
            }
        }
        self.step += 1;
        let lr = F::lit(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, &gv) in p.value.data_mut().iter_mut().zip(g.unwrap()) {
                        *w -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let (b1, b2) = (F::lit(BETA1), F::lit(BETA2));
                let c1 = F::one() / (F::one() - b1.powi(t));
                let c2 = F::one() / (F::one() - b2.powi(t));
                let eps = F::lit(EPSILON);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
                    for (k, (w, &gv)) in p.value.data_mut().iter_mut().zip(g.unwrap()).enumerate() {
                        m[k] = b1 * m[k] + (F::one() - b1) * gv;
                        v[k] = b2 * v[k] + (F::one() - b2) * gv * gv;
                        let mhat = m[k] * c1;
                        let vhat = v[k] * c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
