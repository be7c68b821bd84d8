//! Optimizers and the alternating two-optimizer training loop.
//!
//! Every mini-batch gets two gradient steps, in this order:
//!
//! 1. cross-entropy (scaled by γ) over all parameters, with the supervised
//!    optimizer;
//! 2. hint penalty (scaled by λ) over θ_Γ only, with the hint optimizer,
//!    using the pairs of the same mini-batch.
//!
//! The two optimizers never share state. With λ = 0 the second step is
//! skipped entirely.

mod state;
mod trainer;

pub use trainer::{
    classification_error, hint_step, supervised_step, train, train_with_observer, EpochRecord, TrainData,
    TrainLog, TrainOutcome, TrainSchedule, Trainer,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Gradients, NetworkSplit};
use crate::tensor::{Tensor, TensorError};

/// Running averages E[g²] and E[Δx²] for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaState {
    pub sq_grad: Tensor,
    pub sq_update: Tensor,
}

impl AdaDeltaState {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            sq_grad: Tensor::zeros(shape),
            sq_update: Tensor::zeros(shape),
        }
    }
}

/// One AdaDelta update of `param` in place.
pub fn adadelta_step(param: &mut Tensor, grad: &Tensor, state: &mut AdaDeltaState, rho: f64, eps: f64) -> Result<()> {
    for other in [grad.shape(), state.sq_grad.shape(), state.sq_update.shape()] {
        if other != param.shape() {
            return Err(TensorError::Shape {
                op: "adadelta_step",
                lhs: param.shape().to_vec(),
                rhs: other.to_vec(),
            }
            .into());
        }
    }
    let eg = state.sq_grad.data_mut();
    let edx = state.sq_update.data_mut();
    for (((p, &g), eg), edx) in param.data_mut().iter_mut().zip(grad.data()).zip(eg).zip(edx) {
        *eg = rho * *eg + (1.0 - rho) * g * g;
        let dx = -((*edx + eps).sqrt() / (*eg + eps).sqrt()) * g;
        *edx = rho * *edx + (1.0 - rho) * dx * dx;
        *p += dx;
    }
    if let Some(i) = param.data().iter().position(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: "adadelta_step", index: i }.into());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    AdaDelta { rho: f64, eps: f64 },
    Sgd { lr: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::AdaDelta { rho: 0.95, eps: 1e-6 }
    }
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::AdaDelta { rho, eps } if !(0.0..1.0).contains(&rho) || !(eps > 0.0) => Err(
                Error::Config(format!("adadelta needs 0 ≤ rho < 1 and eps > 0, got rho={rho} eps={eps}")),
            ),
            OptimizerKind::Sgd { lr } if !(lr > 0.0 && lr.is_finite()) => {
                Err(Error::Config(format!("sgd learning rate must be positive, got {lr}")))
            }
            _ => Ok(()),
        }
    }
}

/// Per-layer AdaDelta accumulators, created the first time a layer
/// receives a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDelta {
    rho: f64,
    eps: f64,
    slots: Vec<Option<[AdaDeltaState; 2]>>,
}

impl AdaDelta {
    pub fn new(rho: f64, eps: f64) -> Self {
        Self {
            rho,
            eps,
            slots: Vec::new(),
        }
    }

    /// Accumulators of layer `i` as `[weight, bias]`, if it was ever stepped.
    pub fn slot(&self, layer: usize) -> Option<&[AdaDeltaState; 2]> {
        self.slots.get(layer).and_then(Option::as_ref)
    }

    pub fn slots(&self) -> &[Option<[AdaDeltaState; 2]>] {
        &self.slots
    }

    pub(crate) fn from_slots(rho: f64, eps: f64, slots: Vec<Option<[AdaDeltaState; 2]>>) -> Self {
        Self { rho, eps, slots }
    }

    pub fn step(&mut self, net: &mut NetworkSplit, grads: &Gradients) -> Result<()> {
        if grads.len() != net.depth() {
            return Err(Error::State("gradient layer count differs from network depth".into()));
        }
        if self.slots.len() < net.depth() {
            self.slots.resize(net.depth(), None);
        }
        let (rho, eps) = (self.rho, self.eps);
        for (i, layer) in net.layers_mut().iter_mut().enumerate() {
            let Some(g) = grads.layer(i) else { continue };
            let slot = self.slots[i].get_or_insert_with(|| {
                [
                    AdaDeltaState::zeros(layer.weight().shape()),
                    AdaDeltaState::zeros(layer.bias().shape()),
                ]
            });
            adadelta_step(layer.weight_mut(), &g.weight, &mut slot[0], rho, eps)?;
            adadelta_step(layer.bias_mut(), &g.bias, &mut slot[1], rho, eps)?;
        }
        Ok(())
    }
}

fn sgd_update(p: &mut Tensor, d: &Tensor, lr: f64) -> Result<()> {
    if p.shape() != d.shape() {
        return Err(TensorError::Shape {
            op: "sgd_step",
            lhs: p.shape().to_vec(),
            rhs: d.shape().to_vec(),
        }
        .into());
    }
    for (v, g) in p.data_mut().iter_mut().zip(d.data()) {
        *v -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&mut self, net: &mut NetworkSplit, grads: &Gradients) -> Result<()> {
        if grads.len() != net.depth() {
            return Err(Error::State("gradient layer count differs from network depth".into()));
        }
        for (i, layer) in net.layers_mut().iter_mut().enumerate() {
            let Some(g) = grads.layer(i) else { continue };
            sgd_update(layer.weight_mut(), &g.weight, self.lr)?;
            sgd_update(layer.bias_mut(), &g.bias, self.lr)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    AdaDelta(AdaDelta),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::AdaDelta { rho, eps } => Optimizer::AdaDelta(AdaDelta::new(rho, eps)),
            OptimizerKind::Sgd { lr } => Optimizer::Sgd(Sgd { lr }),
        }
    }

    pub fn step(&mut self, net: &mut NetworkSplit, grads: &Gradients) -> Result<()> {
        match self {
            Optimizer::AdaDelta(o) => o.step(net, grads),
            Optimizer::Sgd(o) => o.step(net, grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_no_op() {
        let mut p = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut s = AdaDeltaState::zeros(&[3]);
        adadelta_step(&mut p, &Tensor::zeros(&[3]), &mut s, 0.95, 1e-6).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_closed_form() {
        let (rho, eps, g) = (0.95, 1e-6, 0.3);
        let mut p = scalar(1.0);
        let mut s = AdaDeltaState::zeros(&[1]);
        adadelta_step(&mut p, &scalar(g), &mut s, rho, eps).unwrap();
        let expected = -(eps.sqrt()) / ((1.0 - rho) * g * g + eps).sqrt() * g;
        assert!((p.data()[0] - (1.0 + expected)).abs() < 1e-15);
        assert!((s.sq_grad.data()[0] - (1.0 - rho) * g * g).abs() < 1e-18);
        assert!((s.sq_update.data()[0] - (1.0 - rho) * expected * expected).abs() < 1e-20);
    }

    #[test]
    fn constant_gradient_reaches_a_plateau() {
        // Scalar simulation: with a constant gradient the step size settles
        // instead of diverging.
        let (rho, eps) = (0.95, 1e-6);
        let mut p = scalar(0.0);
        let mut s = AdaDeltaState::zeros(&[1]);
        let mut steps = Vec::new();
        for _ in 0..1000 {
            let before = p.data()[0];
            adadelta_step(&mut p, &scalar(1.0), &mut s, rho, eps).unwrap();
            steps.push((p.data()[0] - before).abs());
        }
        assert!(steps.iter().all(|s| s.is_finite()));
        let tail = &steps[900..];
        let (lo, hi) = tail
            .iter()
            .fold((f64::MAX, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert!(hi < 10.0, "update magnitude blew up: {hi}");
        assert!(hi / lo < 1.5, "no plateau: {lo}..{hi}");
        assert!(steps[999] > steps[0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut s = AdaDeltaState::zeros(&[2]);
        assert!(adadelta_step(&mut p, &Tensor::zeros(&[3]), &mut s, 0.95, 1e-6).is_err());
    }

    #[test]
    fn optimizer_kind_validation() {
        assert!(OptimizerKind::default().validate().is_ok());
        assert!(OptimizerKind::AdaDelta { rho: 1.0, eps: 1e-6 }.validate().is_err());
        assert!(OptimizerKind::Sgd { lr: 0.0 }.validate().is_err());
    }
}
