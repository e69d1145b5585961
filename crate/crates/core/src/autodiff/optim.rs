use super::tensor::{GradSet, ParamSet};

/// How gradients are limited before an optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipMode {
    /// Clamp every component to `[-threshold, threshold]`.
    Value,
    /// Rescale the whole gradient when its L2 norm exceeds `threshold`.
    GlobalNorm,
}

impl ClipMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClipMode::Value => "value",
            ClipMode::GlobalNorm => "global_norm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "value" => Some(ClipMode::Value),
            "global_norm" => Some(ClipMode::GlobalNorm),
            _ => None,
        }
    }
}

/// Clips `grads` in place. For [`ClipMode::GlobalNorm`] the norm is taken
/// jointly over every set passed in.
pub fn clip_gradients(grads: &mut [&mut GradSet], mode: ClipMode, threshold: f64) {
    match mode {
        ClipMode::Value => {
            for set in grads.iter_mut() {
                for g in set.iter_mut() {
                    g.iter_mut()
                        .for_each(|v| *v = v.clamp(-threshold, threshold));
                }
            }
        }
        ClipMode::GlobalNorm => {
            let norm = grads
                .iter()
                .flat_map(|s| s.iter())
                .flatten()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > threshold {
                let f = threshold / norm;
                grads.iter_mut().for_each(|s| s.scale(f));
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            decay: 0.99,
            eps: 1e-8,
        }
    }
}

/// RMSProp running mean-square accumulators for one [`ParamSet`].
///
/// `v <- decay * v + (1 - decay) * g^2;  p <- p - lr * g / (sqrt(v) + eps)`
#[derive(Clone, Debug, PartialEq)]
pub struct RmsPropState {
    pub config: RmsPropConfig,
    pub square_avg: Vec<Vec<f64>>,
}

impl RmsPropState {
    pub fn new(params: &ParamSet, config: RmsPropConfig) -> Self {
        Self {
            config,
            square_avg: params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet) {
        let RmsPropConfig { lr, decay, eps } = self.config;
        for ((tensor, g), v) in params
            .tensors_mut()
            .zip(grads.iter())
            .zip(&mut self.square_avg)
        {
            for ((p, gi), vi) in tensor.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = decay * *vi + (1.0 - decay) * gi * gi;
                *p -= lr * gi / (vi.sqrt() + eps);
            }
        }
    }
}
