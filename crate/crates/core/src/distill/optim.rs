use super::config::OptimizerKind;
use crate::autodiff::{Gradients, Tensor};
use crate::error::{Error, Result};
use crate::lm::Parameters;

/// First-order optimizer over a [`Parameters`] set. Adam moments are kept per
/// slot and can be exported for checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    clip_norm: Option<f64>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, clip_norm: Option<f64>, params: &Parameters) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => {
                let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
                (zeros.clone(), zeros)
            }
        };
        Self { kind, lr, clip_norm, m, v, t: 0 }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies `grads` to `params`; returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients) -> Result<f64> {
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(Error::InvalidArgument("non-finite gradient norm".into()));
        }
        let factor = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        for (slot, g) in grads.iter() {
            if slot >= params.len() || g.shape() != params.tensor(slot).shape() {
                return Err(Error::Shape { op: "optimizer", detail: format!("gradient for slot {slot}") });
            }
            let p = params.tensor_mut(slot);
            match self.kind {
                OptimizerKind::Sgd => {
                    let lr = self.lr;
                    for (w, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * (gv * factor);
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(self.t as i32);
                    let bc2 = 1.0 - beta2.powi(self.t as i32);
                    let m = self.m[slot].data_mut();
                    let v = self.v[slot].data_mut();
                    for (((w, &gv), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                        let gv = gv * factor;
                        *mi = beta1 * *mi + (1.0 - beta1) * gv;
                        *vi = beta2 * *vi + (1.0 - beta2) * gv * gv;
                        *w -= self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(norm)
    }

    /// Optimizer state as named tensors (`optim.t`, `optim.m.{slot}`, ...).
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("optim.t".to_string(), Tensor::scalar(self.t as f64))];
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            out.push((format!("optim.m.{i}"), m.clone()));
            out.push((format!("optim.v.{i}"), v.clone()));
        }
        out
    }

    /// Restores state written by [`Optimizer::state_tensors`].
    pub fn load_state<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor>) -> Result<()> {
        let t = lookup("optim.t").ok_or_else(|| Error::Checkpoint("missing optim.t".into()))?;
        self.t = t.item() as u64;
        for i in 0..self.m.len() {
            for (name, dst) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let key = format!("optim.{name}.{i}");
                let src = lookup(&key).ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
                if src.shape() != dst.shape() {
                    return Err(Error::Checkpoint(format!("{key} has shape {:?}", src.shape())));
                }
                *dst = src.clone();
            }
        }
        Ok(())
    }
}
