use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adam (or plain SGD) over a fixed list of parameter blocks.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: i32,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, block_sizes: &[usize]) -> Self {
        Optimizer {
            kind,
            lr,
            t: 0,
            moments: block_sizes
                .iter()
                .map(|&n| (vec![0.0; n], vec![0.0; n]))
                .collect(),
        }
    }

    /// Blocks must be passed in the same order as at construction.
    pub fn step<'a>(&mut self, blocks: impl IntoIterator<Item = (&'a mut [f64], &'a [f64])>) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for ((param, grad), (m, v)) in blocks.into_iter().zip(self.moments.iter_mut()) {
            debug_assert_eq!(param.len(), grad.len());
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in param.iter_mut().zip(grad) {
                        *p -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    for i in 0..param.len() {
                        let g = grad[i];
                        m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g;
                        v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g * g;
                        param[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                    }
                }
            }
        }
    }
}
