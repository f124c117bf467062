use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng as _;

use super::quant::{quantize, ste_backward, WeightBits, W_MAX};
use super::{SigmaType, INPUT_MASK_FLOOR, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Latent real weights (out × in) with their quantised projection and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLinear<T> {
    weight: Array2<T>,
    quantized: Array2<T>,
    bits: WeightBits,
    pub grad: Array2<T>,
}

impl<T: Scalar> QuantizedLinear<T> {
    pub fn new(weight: Array2<T>, bits: WeightBits) -> Self {
        let quantized = quantize(weight.view(), bits);
        let grad = Array2::zeros(weight.raw_dim());
        QuantizedLinear {
            weight,
            quantized,
            bits,
            grad,
        }
    }

    /// Uniform on `±gain/sqrt(fan_in)`, clipped to the quantisation range.
    pub fn init_uniform(outputs: usize, inputs: usize, gain: f64, bits: WeightBits, rng: &mut Rng) -> Self {
        let bound = (gain / (inputs as f64).sqrt()).min(W_MAX);
        let w = Array2::from_shape_simple_fn((outputs, inputs), || T::of(rng.random_range(-bound..bound)));
        Self::new(w, bits)
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn bits(&self) -> WeightBits {
        self.bits
    }

    pub fn weight(&self) -> &Array2<T> {
        &self.weight
    }

    pub fn quantized(&self) -> &Array2<T> {
        &self.quantized
    }

    /// Edits the latent weights in place, then re-quantises.
    pub fn update_weight(&mut self, f: impl FnOnce(&mut Array2<T>)) {
        f(&mut self.weight);
        self.quantized = quantize(self.weight.view(), self.bits);
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn stats(&self, p: ArrayView2<'_, T>, sigma_type: SigmaType) -> Result<LayerStats<T>> {
        layer_stats_dense(p, self.quantized.view(), sigma_type)
    }

    /// Accumulates `∂L/∂W_real` (through the clipped STE) and returns `∂L/∂P`.
    pub fn backward(&mut self, d_mean: ArrayView2<'_, T>, d_std: ArrayView2<'_, T>, stats: &LayerStats<T>) -> Array2<T> {
        let (grad_wq, grad_p) = layer_stats_backward(d_mean, d_std, stats, self.quantized.view());
        self.grad += &ste_backward(grad_wq.view(), self.weight.view());
        grad_p
    }
}

/// Mean and standard deviation of each neuron's drive, batch-major (batch × out).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats<T> {
    pub mean: Array2<T>,
    pub std: Array2<T>,
    pub(crate) masked_input: Array2<T>,
    pub(crate) variance: Array2<T>,
    pub(crate) sigma_type: SigmaType,
}

pub(crate) fn mask_inputs<T: Scalar>(p: ArrayView2<'_, T>) -> Array2<T> {
    let floor = T::of(INPUT_MASK_FLOOR);
    p.mapv(|v| if v > floor { v } else { T::zero() })
}

pub(crate) fn bernoulli_variance<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| v * (T::one() - v))
}

pub(crate) fn floored_std<T: Scalar>(variance: &Array2<T>) -> Array2<T> {
    let floor = T::of(VARIANCE_FLOOR);
    variance.mapv(|v| v.max(floor).sqrt())
}

/// `μ_D = X_mask·W_qᵀ`, `σ_D² = v·f(W_q)ᵀ` with `v = X_mask(1 − X_mask)`.
pub fn layer_stats_dense<T: Scalar>(
    p: ArrayView2<'_, T>,
    w_q: ArrayView2<'_, T>,
    sigma_type: SigmaType,
) -> Result<LayerStats<T>> {
    if p.ncols() != w_q.ncols() {
        return Err(Error::Shape(format!(
            "input has {} features, weight expects {}",
            p.ncols(),
            w_q.ncols()
        )));
    }
    let masked_input = mask_inputs(p);
    let mean = masked_input.dot(&w_q.t());
    let w_term = w_q.mapv(|w| sigma_type.weight_term(w));
    let variance = bernoulli_variance(&masked_input).dot(&w_term.t());
    let std = floored_std(&variance);
    Ok(LayerStats {
        mean,
        std,
        masked_input,
        variance,
        sigma_type,
    })
}

/// Gradient of the variance through the floored square root.
pub(crate) fn variance_grad<T: Scalar>(d_std: ArrayView2<'_, T>, std: &Array2<T>, variance: &Array2<T>) -> Array2<T> {
    let floor = T::of(VARIANCE_FLOOR);
    let half = T::of(0.5);
    Zip::from(d_std)
        .and(std)
        .and(variance)
        .map_collect(|&g, &s, &v| if v > floor { g * half / s } else { T::zero() })
}

/// Returns `(∂L/∂W_q, ∂L/∂P)`; masked inputs receive zero gradient.
pub fn layer_stats_backward<T: Scalar>(
    d_mean: ArrayView2<'_, T>,
    d_std: ArrayView2<'_, T>,
    stats: &LayerStats<T>,
    w_q: ArrayView2<'_, T>,
) -> (Array2<T>, Array2<T>) {
    let x = &stats.masked_input;
    let d_var = variance_grad(d_std, &stats.std, &stats.variance);
    let v = bernoulli_variance(x);
    let st = stats.sigma_type;

    let mut grad_wq = d_mean.t().dot(x);
    let var_part = d_var.t().dot(&v);
    Zip::from(&mut grad_wq)
        .and(&var_part)
        .and(w_q)
        .for_each(|g, &vp, &w| *g += vp * st.weight_term_grad(w));

    let w_term = w_q.mapv(|w| st.weight_term(w));
    let mut grad_p = d_mean.dot(&w_q);
    let var_in = d_var.dot(&w_term);
    let two = T::of(2.0);
    Zip::from(&mut grad_p)
        .and(&var_in)
        .and(x)
        .for_each(|g, &vi, &xv| {
            *g = if xv > T::zero() { *g + vi * (T::one() - two * xv) } else { T::zero() };
        });
    (grad_wq, grad_p)
}

/// Instantaneous drive `D = W_q · s` for one binary input vector.
pub fn synaptic_drive<T: Scalar>(spikes: ArrayView1<'_, T>, w_q: ArrayView2<'_, T>) -> Result<Array1<T>> {
    if spikes.len() != w_q.ncols() {
        return Err(Error::Shape(format!(
            "spike vector has {} entries, weight expects {}",
            spikes.len(),
            w_q.ncols()
        )));
    }
    Ok(w_q.dot(&spikes))
}
