//! Parameter updates and gradient clipping.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adam (β₁ 0.9, β₂ 0.999, ε 1e-8) or plain gradient descent.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: i32,
    first: IndexMap<String, Tensor>,
    second: IndexMap<String, Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        self.steps = self.steps.saturating_add(1);
        // a zero rate is a no-op, bit for bit
        if self.lr == 0.0 {
            return Ok(());
        }
        let t = self.steps;
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("no gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::dimension("optimizer::step", g.shape(), p.shape()));
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (v, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *v -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
                    let s = self.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
                    let c1 = 1.0 - self.beta1.powi(t);
                    let c2 = 1.0 - self.beta2.powi(t);
                    let (m, s) = (m.data_mut(), s.data_mut());
                    for (i, (v, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gv;
                        s[i] = self.beta2 * s[i] + (1.0 - self.beta2) * gv * gv;
                        *v -= self.lr * (m[i] / c1) / ((s[i] / c2).sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Global L2 norm over all gradients.
pub fn grad_norm(grads: &Gradients) -> f64 {
    grads.values().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping. A non-positive `max_norm` disables clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: Vec<f64>) -> (ParamStore, Gradients) {
        let mut p = ParamStore::new();
        p.insert(name, Tensor::vector(v.clone()));
        let mut g = Gradients::new();
        g.insert(name.to_string(), Tensor::vector(v));
        (p, g)
    }

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let (mut p, g) = one("w", vec![2.0, -3.0]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1);
        opt.step(&mut p, &g).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 1.9).abs() < 1e-8 && (w[1] + 2.9).abs() < 1e-8);
    }

    #[test]
    fn sgd_step_and_zero_rate() {
        let (mut p, g) = one("w", vec![1.0, -0.0]);
        Optimizer::new(OptimizerKind::Sgd, 0.5).step(&mut p, &g).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.5);
        let (mut p, g) = one("w", vec![1.0, -0.0]);
        let before = p.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.0);
        for _ in 0..3 {
            opt.step(&mut p, &g).unwrap();
        }
        assert_eq!(p, before);
        assert!(p.get("w").unwrap().data()[1].is_sign_negative());
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let (_, mut g) = one("w", vec![3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((grad_norm(&g) - 1.0).abs() < 1e-15);
        assert_eq!(clip_grad_norm(&mut g, 0.0), grad_norm(&g));
    }
}
