//! Adam optimizer and the training step.

use bytetr_core::vsg::EncodedGraph;
use serde::{Deserialize, Serialize};

use crate::model::{loss_and_grad, GgnnConfig, ModelParams};
use crate::GgnnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ModelParams) -> Self {
        Adam {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// One optimizer step on a labelled batch; returns the batch loss measured
/// before the update.
pub fn train_step(
    params: &mut ModelParams,
    cfg: &GgnnConfig,
    opt: &mut Adam,
    batch: &[&EncodedGraph],
) -> Result<f64, GgnnError> {
    let (loss, grads) = loss_and_grad(params, cfg, batch)?;
    if !loss.is_finite() {
        return Err(GgnnError::NonFinite(format!(
            "loss is {loss} at optimizer step {}",
            opt.step + 1
        )));
    }
    if let Some((name, _)) = grads.tensors().into_iter().find(|(_, t)| !t.all_finite()) {
        return Err(GgnnError::NonFinite(format!(
            "gradient of {name} is not finite at optimizer step {}",
            opt.step + 1
        )));
    }
    opt.update(params, &grads);
    Ok(loss)
}
