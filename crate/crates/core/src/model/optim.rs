use serde::{Deserialize, Serialize};

use super::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state. Adam moments are kept in parameter-shaped buffers.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u32,
        m: Box<ModelParams>,
        v: Box<ModelParams>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, like: &ModelParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                t: 0,
                m: Box::new(ModelParams::zeros(like.config)),
                v: Box::new(ModelParams::zeros(like.config)),
            },
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        match self {
            Optimizer::Sgd { lr } => params.add_scaled(-*lr, grads),
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                let blocks = params
                    .blocks_mut()
                    .into_iter()
                    .zip(grads.blocks())
                    .zip(m.blocks_mut())
                    .zip(v.blocks_mut());
                for (((p, g), m), v) in blocks {
                    for i in 0..p.data.len() {
                        let gi = g.data[i];
                        m.data[i] = *beta1 * m.data[i] + (1.0 - *beta1) * gi;
                        v.data[i] = *beta2 * v.data[i] + (1.0 - *beta2) * gi * gi;
                        let mh = m.data[i] / bc1;
                        let vh = v.data[i] / bc2;
                        p.data[i] -= *lr * mh / (vh.sqrt() + *eps);
                    }
                }
            }
        }
    }
}
