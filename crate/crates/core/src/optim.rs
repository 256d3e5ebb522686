//! Parameter update rules.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradientSet, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Moments {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: i32,
}

/// Update state for one network.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    moments: Option<Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            moments: None,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &GradientSet, lr: f64) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => net.apply_gradients(grads, lr),
            OptimizerKind::Adam => self.adam_step(net, grads, lr),
        }
    }

    fn adam_step(&mut self, net: &mut Mlp, grads: &GradientSet, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        if grads.weights.len() != net.weights().len() {
            return Err(Error::ArchitectureMismatch(
                "gradient set does not match this network".into(),
            ));
        }
        let moments = self.moments.get_or_insert_with(|| Moments {
            m_w: net.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: net.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: net.biases().iter().map(|b| Array1::zeros(b.dim())).collect(),
            v_b: net.biases().iter().map(|b| Array1::zeros(b.dim())).collect(),
            t: 0,
        });
        moments.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(moments.t);
        let c2 = 1.0 - ADAM_BETA2.powi(moments.t);
        let step = lr * c2.sqrt() / c1;
        for (k, w) in net.weights_mut().iter_mut().enumerate() {
            if w.dim() != grads.weights[k].dim() {
                return Err(Error::ArchitectureMismatch("weight shape".into()));
            }
            Zip::from(w)
                .and(&grads.weights[k])
                .and(&mut moments.m_w[k])
                .and(&mut moments.v_w[k])
                .for_each(|p, &g, m, v| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= step * *m / (v.sqrt() + ADAM_EPS);
                });
        }
        for (k, b) in net.biases_mut().iter_mut().enumerate() {
            if b.dim() != grads.biases[k].dim() {
                return Err(Error::ArchitectureMismatch("bias shape".into()));
            }
            Zip::from(b)
                .and(&grads.biases[k])
                .and(&mut moments.m_b[k])
                .and(&mut moments.v_b[k])
                .for_each(|p, &g, m, v| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= step * *m / (v.sqrt() + ADAM_EPS);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OutputActivation;
    use ndarray::array;

    #[test]
    fn sgd_matches_plain_descent() {
        let mut a = Mlp::zeros(&[1, 1], OutputActivation::Linear).unwrap();
        a.set_parameters(&[1.0, 1.0]).unwrap();
        let g = GradientSet {
            weights: vec![array![[2.0]]],
            biases: vec![array![-2.0]],
            input: Array2::zeros((1, 1)),
        };
        Optimizer::new(OptimizerKind::Sgd).step(&mut a, &g, 0.1).unwrap();
        assert!((a.parameters()[0] - 0.8).abs() < 1e-15);
        assert!((a.parameters()[1] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut a = Mlp::zeros(&[1, 1], OutputActivation::Linear).unwrap();
        let g = GradientSet {
            weights: vec![array![[5.0]]],
            biases: vec![array![-0.01]],
            input: Array2::zeros((1, 1)),
        };
        Optimizer::new(OptimizerKind::Adam).step(&mut a, &g, 0.01).unwrap();
        let p = a.parameters();
        assert!((p[0] + 0.01).abs() < 1e-8);
        assert!((p[1] - 0.01).abs() < 1e-6);
    }
}
