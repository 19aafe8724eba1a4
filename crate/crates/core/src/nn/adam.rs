use serde::{Deserialize, Serialize};

use super::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments, congruent with the model they optimise.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(model: &ModelParams, config: AdamConfig) -> Self {
        Self {
            first_moment: model.zeros_like(),
            second_moment: model.zeros_like(),
            step: 0,
            config,
        }
    }

    pub(super) fn apply(&mut self, model: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (beta1 as f32, beta2 as f32);
        let step_size = (learning_rate / c1) as f32;
        let c2 = c2 as f32;
        let eps = epsilon as f32;

        let layers = model
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.first_moment.layers.iter_mut())
            .zip(self.second_moment.layers.iter_mut());
        for (((layer, grad), m), v) in layers {
            let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
            let g = grad.weights.iter().chain(&grad.biases);
            let m = m.weights.iter_mut().chain(m.biases.iter_mut());
            let v = v.weights.iter_mut().chain(v.biases.iter_mut());
            for (((p, &g), m), v) in params.zip(g).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / ((*v / c2).sqrt() + eps);
            }
        }
    }
}
