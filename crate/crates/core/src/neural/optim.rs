//! RMSProp with per-parameter squared-gradient moving averages.

use crate::error::{Error, Result};
use crate::neural::net::{Gradients, PolicyValueNet};

pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Core update rule applied to one buffer:
/// `m <- decay*m + (1-decay)*g^2; p <- p - lr*g/(sqrt(m) + epsilon)`.
pub fn rmsprop_update(
    params: &mut [f32],
    grads: &[f64],
    moments: &mut [f64],
    lr: f64,
    decay: f64,
    epsilon: f64,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), moments.len());
    for ((p, &g), m) in params.iter_mut().zip(grads).zip(moments) {
        *m = decay * *m + (1.0 - decay) * g * g;
        *p = (*p as f64 - lr * g / (m.sqrt() + epsilon)) as f32;
    }
}

#[derive(Clone, Debug)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub epsilon: f64,
    moments: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(net: &PolicyValueNet, lr: f64, decay: f64, epsilon: f64) -> Self {
        let moments = net
            .param_buffers()
            .iter()
            .map(|b| vec![0.0f64; b.len()])
            .collect();
        Self {
            lr,
            decay,
            epsilon,
            moments,
        }
    }

    /// Moment buffers in the canonical parameter order.
    pub fn moments(&self) -> &[Vec<f64>] {
        &self.moments
    }

    pub fn from_moments(lr: f64, decay: f64, epsilon: f64, moments: Vec<Vec<f64>>) -> Self {
        Self {
            lr,
            decay,
            epsilon,
            moments,
        }
    }

    pub fn step(&mut self, net: &mut PolicyValueNet, grads: &Gradients) -> Result<()> {
        let params = net.param_buffers_mut();
        let grad_bufs = grads.buffers();
        if params.len() != grad_bufs.len() || params.len() != self.moments.len() {
            return Err(Error::ShapeMismatch("optimizer buffer count".into()));
        }
        for ((p, g), m) in params.into_iter().zip(grad_bufs).zip(&mut self.moments) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::ShapeMismatch("optimizer buffer length".into()));
            }
            rmsprop_update(p, g, m, self.lr, self.decay, self.epsilon);
        }
        Ok(())
    }
}
