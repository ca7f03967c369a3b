//! Adam with bias-corrected moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.lr.is_finite() && self.lr > 0.0) {
            bad.push(format!("learning rate must be positive (got {})", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                bad.push(format!("{name} must lie in (0, 1) (got {b})"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            bad.push(format!("adam eps must be positive (got {})", self.eps));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

/// First and second moments per parameter, in parameter order.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    pub step: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            moments: Vec::new(),
        }
    }
}

/// Applies one update using each parameter's accumulated `grad` (absent
/// gradients count as zero). Gradients are checked for finiteness before any
/// parameter is touched.
pub fn adam_step<T: Scalar>(
    params: &mut [(String, &mut Tensor<T>)],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        if let Some(g) = &p.grad {
            if g.len() != p.len() {
                return Err(Error::Shape {
                    op: "adam gradient",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    context: format!("gradient of {name}"),
                });
            }
        }
    }
    if state.moments.is_empty() {
        state.moments = params
            .iter()
            .map(|(_, p)| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]))
            .collect();
    } else if state.moments.len() != params.len()
        || state
            .moments
            .iter()
            .zip(params.iter())
            .any(|((m, _), (_, p))| m.len() != p.len())
    {
        return Err(Error::Config(
            "optimizer state does not match the parameter list".into(),
        ));
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let lr = T::from_f64_lossy(cfg.lr);
    let eps = T::from_f64_lossy(cfg.eps);
    let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t));

    for ((_, p), (m, v)) in params.iter_mut().zip(state.moments.iter_mut()) {
        let grad = p.grad.take();
        let data = p.data_mut();
        for j in 0..data.len() {
            let g = grad.as_ref().map_or(T::zero(), |g| g[j]);
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.grad = grad;
    }
    Ok(())
}
