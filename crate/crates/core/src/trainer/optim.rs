use crate::error::{Error, Result};
use crate::model::ParamTensors;

/// RMSProp: `v ← ρv + (1−ρ)g²`, `θ ← θ − lr·g/(√v + ε)`, elementwise.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub decay: f64,
    pub eps: f64,
    /// Squared-gradient accumulators, one per parameter entry.
    pub accum: ParamTensors,
    pub steps: u64,
}

impl RmsProp {
    pub fn new(like: &ParamTensors, decay: f64, eps: f64) -> Self {
        Self { decay, eps, accum: like.zeros_like(), steps: 0 }
    }

    pub fn step(&mut self, params: &mut ParamTensors, grads: &ParamTensors, lr: f64) -> Result<()> {
        if !params.same_shapes(grads) || !params.same_shapes(&self.accum) {
            return Err(Error::Shape("optimizer, parameter and gradient shapes differ".into()));
        }
        let (rho, eps) = (self.decay, self.eps);
        for ((p, g), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(self.accum.tensors_mut()) {
            for ((p, &g), v) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(v.as_mut_slice()) {
                *v = rho * *v + (1.0 - rho) * g * g;
                *p -= lr * g / (v.sqrt() + eps);
            }
        }
        self.steps += 1;
        Ok(())
    }
}
