use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Gradients, Network};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OptimizerKind {
    /// `v ← μ·v + g; θ ← θ − lr·v`.
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::SgdMomentum { momentum: 0.0 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

type Slots = Vec<(Array2<f64>, Array1<f64>)>;

/// Optimizer with per-parameter accumulators shaped like the network.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    steps: u64,
    first: Slots,
    second: Slots,
}

fn zeros(net: &Network) -> Slots {
    Gradients::zeros_like(net).layers
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, net: &Network) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(invalid("learning_rate", format!("must be > 0, got {learning_rate}")));
        }
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(net),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Ok(Self {
            kind,
            learning_rate,
            steps: 0,
            first: zeros(net),
            second,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update in place.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for (layer, ((vw, vb), (gw, gb))) in net
                    .layers_mut()
                    .iter_mut()
                    .zip(self.first.iter_mut().zip(&grads.layers))
                {
                    Zip::from(&mut layer.weights).and(vw).and(gw).for_each(|p, v, &g| {
                        *v = momentum * *v + g;
                        *p -= lr * *v;
                    });
                    Zip::from(&mut layer.bias).and(vb).and(gb).for_each(|p, v, &g| {
                        *v = momentum * *v + g;
                        *p -= lr * *v;
                    });
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                };
                for ((layer, ((mw, mb), (vw, vb))), (gw, gb)) in net
                    .layers_mut()
                    .iter_mut()
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                    .zip(&grads.layers)
                {
                    Zip::from(&mut layer.weights)
                        .and(mw)
                        .and(vw)
                        .and(gw)
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                    Zip::from(&mut layer.bias)
                        .and(mb)
                        .and(vb)
                        .and(gb)
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                }
            }
        }
    }
}
