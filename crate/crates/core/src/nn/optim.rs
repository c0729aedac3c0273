use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer '{other}'")),
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Applies the gradients held in a [`ParamStore`] to its trainable values.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore) -> Self {
        let zeros = || params.ids().map(|id| {
            let v = params.value(id);
            Tensor::zeros(v.rows(), v.cols())
        });
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (zeros().collect(), zeros().collect()),
        };
        Optimizer { kind, lr, m, v, t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamStore) {
        self.t = self.t.saturating_add(1);
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (value, grad, trainable) in params.values_and_grads_mut() {
                    if trainable {
                        value.axpy(-lr, grad);
                    }
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - BETA1.powi(self.t);
                let c2 = 1.0 - BETA2.powi(self.t);
                for (k, (value, grad, trainable)) in params.values_and_grads_mut().enumerate() {
                    if !trainable {
                        continue;
                    }
                    let m = self.m[k].data_mut();
                    let v = self.v[k].data_mut();
                    for (((w, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                        *mi = BETA1 * *mi + (1.0 - BETA1) * g;
                        *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
                        *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Gradients;

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut p = ParamStore::new();
        let w = p.add("w", Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap());
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, &p);
        let mut g = Gradients::zeros_like(&p);
        g.accumulate(w, &Tensor::from_rows(&[vec![3.0, -0.5]]).unwrap());
        p.accumulate_grads(&g);
        opt.step(&mut p);
        let d = p.value(w).data();
        assert!((d[0] - 0.99).abs() < 1e-9 && (d[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut p = ParamStore::new();
        let f = p.add_frozen("f", Tensor::scalar(2.0));
        let mut g = Gradients::zeros_like(&p);
        g.accumulate(f, &Tensor::scalar(1.0));
        p.accumulate_grads(&g);
        Optimizer::new(OptimizerKind::Sgd, 0.5, &p).step(&mut p);
        assert_eq!(p.value(f).data(), &[2.0]);
    }
}
