use ndarray::{Array, ArrayViewMut, Dimension};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T, D: Dimension> {
    pub m: Array<T, D>,
    pub v: Array<T, D>,
}

impl<T: Scalar, D: Dimension> AdamMoments<T, D> {
    pub fn zeros(dim: D) -> Self {
        AdamMoments {
            m: Array::zeros(dim.clone()),
            v: Array::zeros(dim),
        }
    }
}

/// Adam with decoupled weight decay; decay is applied before the moment update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub hyper: AdamHyper,
}

impl AdamW {
    /// One update of `param` at (1-based) step `step`.
    pub fn update<T: Scalar, D: Dimension>(
        &self,
        name: &str,
        mut param: ArrayViewMut<'_, T, D>,
        grad: &Array<T, D>,
        moments: &mut AdamMoments<T, D>,
        step: u64,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "{name}: gradient shape {:?} does not match parameter {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        if let Some((i, g)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite gradient {g} in {name} at flat index {i}")));
        }
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powi(step as i32);
        let bc2 = 1.0 - beta2.powi(step as i32);
        let step_size = lr / bc1;
        let bc2_sqrt = bc2.sqrt();
        let decay = 1.0 - lr * weight_decay;
        ndarray::Zip::from(&mut param)
            .and(grad)
            .and(&mut moments.m)
            .and(&mut moments.v)
            .for_each(|p, &g, m, v| {
                let g = g.f64();
                let mut pv = p.f64();
                if weight_decay != 0.0 {
                    pv *= decay;
                }
                let mn = beta1 * m.f64() + (1.0 - beta1) * g;
                let vn = beta2 * v.f64() + (1.0 - beta2) * g * g;
                pv -= step_size * mn / (vn.sqrt() / bc2_sqrt + eps);
                *m = T::of(mn);
                *v = T::of(vn);
                *p = T::of(pv);
            });
        Ok(())
    }
}

/// Moments of every trainable tensor of a network plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub weight: Vec<AdamMoments<T, ndarray::Ix2>>,
    pub threshold_mean: Vec<AdamMoments<T, ndarray::Ix1>>,
    pub threshold_rho: Vec<AdamMoments<T, ndarray::Ix1>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn for_network(net: &crate::network::Network<T>) -> Self {
        OptimizerState {
            step: 0,
            weight: net.layers.iter().map(|l| AdamMoments::zeros(l.synapse.weight().raw_dim())).collect(),
            threshold_mean: net.layers.iter().map(|l| AdamMoments::zeros(l.threshold.mean.raw_dim())).collect(),
            threshold_rho: net.layers.iter().map(|l| AdamMoments::zeros(l.threshold.rho.raw_dim())).collect(),
        }
    }
}
