//! RMSprop: `v <- alpha v + (1 - alpha) g^2`, `theta <- theta - lr g / (sqrt(v) + eps)`.

use serde::{Deserialize, Serialize};

use super::{Parameter, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmspropConfig {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            alpha: 0.99,
            eps: 1e-8,
        }
    }
}

impl RmspropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Optimizer state: one running second moment per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Rmsprop<T: Real = f32> {
    pub config: RmspropConfig,
    pub(crate) square_avg: Vec<Tensor<T>>,
}

impl<T: Real> Rmsprop<T> {
    pub fn new(config: RmspropConfig, params: &[Parameter<T>]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            square_avg: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn square_avg(&self) -> &[Tensor<T>] {
        &self.square_avg
    }

    /// Replaces the second-moment state (checkpoint restore).
    pub fn set_square_avg(&mut self, state: Vec<Tensor<T>>) -> Result<()> {
        if state.len() != self.square_avg.len()
            || state
                .iter()
                .zip(&self.square_avg)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("rmsprop", "optimizer state does not match parameters"));
        }
        if state.iter().flat_map(|t| t.data()).any(|&v| v < T::ZERO) {
            return Err(Error::InvalidArgument("negative second moment".into()));
        }
        self.square_avg = state;
        Ok(())
    }

    /// Applies one update. Every parameter must carry a gradient.
    pub fn step(&mut self, params: &mut [Parameter<T>]) -> Result<()> {
        if params.len() != self.square_avg.len() {
            return Err(Error::shape(
                "rmsprop",
                format!("{} parameters, state for {}", params.len(), self.square_avg.len()),
            ));
        }
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        let lr = T::from_f64(self.config.lr);
        let alpha = T::from_f64(self.config.alpha);
        let one_minus = T::from_f64(1.0 - self.config.alpha);
        let eps = T::from_f64(self.config.eps);
        for (p, v) in params.iter_mut().zip(&mut self.square_avg) {
            let g = p.grad.as_ref().expect("checked above");
            if g.shape() != p.value.shape() {
                return Err(Error::shape("rmsprop", format!("gradient shape of `{}`", p.name)));
            }
            for ((theta, vi), &gi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(v.data_mut())
                .zip(g.data())
            {
                *vi = alpha * *vi + one_minus * gi * gi;
                *theta = *theta - lr * gi / (vi.sqrt() + eps);
            }
        }
        if params.iter().any(|p| !p.value.is_finite()) {
            return Err(Error::NonFinite { op: "rmsprop_step" });
        }
        Ok(())
    }
}
