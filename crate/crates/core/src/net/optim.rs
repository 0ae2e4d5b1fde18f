use serde::{Deserialize, Serialize};

use super::{Network, ParamKind};
use crate::error::{Error, Result};

/// Learning-rate schedule as a function of training progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    /// Divide by `factor` once `drop_epoch` epochs have completed.
    Step { drop_epoch: usize, factor: f64 },
    /// `l_p = l_0 / (1 + gamma * p)^power`.
    Inv { gamma: f64, power: f64 },
}

impl Schedule {
    pub const INV_DEFAULT: Schedule = Schedule::Inv {
        gamma: 10.0,
        power: 0.75,
    };

    pub fn learning_rate(&self, base: f64, progress: Progress) -> f64 {
        match *self {
            Schedule::Constant => base,
            Schedule::Step { drop_epoch, factor } => {
                if progress.epoch >= drop_epoch {
                    base / factor
                } else {
                    base
                }
            }
            Schedule::Inv { gamma, power } => base / (1.0 + gamma * progress.fraction).powf(power),
        }
    }
}

/// Where training stands: the current (0-based) epoch and the fraction of
/// all iterations already done, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Progress {
    pub epoch: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: Schedule::Constant,
        }
    }
}

/// Mini-batch SGD with momentum and L2 weight decay. Alphas are never
/// decayed; pinned alphas are never updated.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    pub fn learning_rate(&self, progress: Progress) -> f64 {
        self.config.schedule.learning_rate(self.config.learning_rate, progress)
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// `v <- momentum * v - lr * (g + decay * theta); theta <- theta + v`,
    /// then clips every alpha. Returns the learning rate used.
    pub fn step(&mut self, net: &mut Network, grads: &[f64], progress: Progress) -> Result<f64> {
        let kinds = net.param_kinds();
        if grads.len() != kinds.len() {
            return Err(Error::Dimension(format!(
                "{} gradients for {} parameters",
                grads.len(),
                kinds.len()
            )));
        }
        if self.velocity.len() != kinds.len() {
            self.velocity = vec![0.0; kinds.len()];
        }
        let lr = self.learning_rate(progress);
        let SgdConfig {
            momentum, weight_decay, ..
        } = self.config;
        let mut params = net.parameters();
        for (((theta, v), &g), kind) in params.iter_mut().zip(&mut self.velocity).zip(grads).zip(&kinds) {
            let decay = match kind {
                ParamKind::Alpha { trainable: false } => continue,
                ParamKind::Alpha { trainable: true } => 0.0,
                ParamKind::Weight | ParamKind::Bias => weight_decay,
            };
            *v = momentum * *v - lr * (g + decay * *theta);
            *theta += *v;
        }
        net.set_parameters(&params)?;
        net.clip_alphas();
        Ok(lr)
    }
}
