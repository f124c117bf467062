//! Convolutional drive statistics via an explicit patch matrix.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Zip};

use super::dense::{bernoulli_variance, floored_std, mask_inputs, variance_grad};
use super::SigmaType;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        if self.stride == 0 || kh == 0 || kw == 0 {
            return Err(Error::Shape("kernel and stride must be positive".into()));
        }
        let (h, w) = (height + 2 * self.padding, width + 2 * self.padding);
        if h < kh || w < kw {
            return Err(Error::Shape(format!("kernel {kh}x{kw} larger than padded input {h}x{w}")));
        }
        Ok(((h - kh) / self.stride + 1, (w - kw) / self.stride + 1))
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, geometry expects {}",
                shape[1], self.in_channels
            )));
        }
        Ok(())
    }

    fn check_kernel(&self, kernel: &ArrayView2<'_, impl Scalar>) -> Result<()> {
        if kernel.dim() != (self.out_channels, self.patch_len()) {
            return Err(Error::Shape(format!(
                "kernel matrix is {:?}, geometry expects {:?}",
                kernel.dim(),
                (self.out_channels, self.patch_len())
            )));
        }
        Ok(())
    }
}

/// Flattens an (out, in, kh, kw) kernel to (out, in·kh·kw), matching the patch layout.
pub fn kernel_matrix<T: Scalar>(kernel: ArrayView4<'_, T>) -> Array2<T> {
    let (o, i, kh, kw) = kernel.dim();
    Array2::from_shape_fn((o, i * kh * kw), |(r, c)| {
        kernel[[r, c / (kh * kw), (c / kw) % kh, c % kw]]
    })
}

/// Rows ordered (batch, out_y, out_x); columns (channel, ky, kx). Padding reads as zero.
fn im2col<T: Scalar>(p: ArrayView4<'_, T>, g: &ConvGeometry, out: (usize, usize)) -> Array2<T> {
    let (b, c, h, w) = p.dim();
    let (kh, kw) = g.kernel;
    let (oh, ow) = out;
    let mut cols = Array2::zeros((b * oh * ow, g.patch_len()));
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (bi * oh + oy) * ow + ox;
                for ci in 0..c {
                    for ky in 0..kh {
                        let y = (oy * g.stride + ky) as isize - g.padding as isize;
                        if y < 0 || y as usize >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let x = (ox * g.stride + kx) as isize - g.padding as isize;
                            if x < 0 || x as usize >= w {
                                continue;
                            }
                            cols[[row, (ci * kh + ky) * kw + kx]] = p[[bi, ci, y as usize, x as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &Array2<T>, g: &ConvGeometry, input: (usize, usize, usize, usize), out: (usize, usize)) -> Array4<T> {
    let (b, c, h, w) = input;
    let (kh, kw) = g.kernel;
    let (oh, ow) = out;
    let mut img = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (bi * oh + oy) * ow + ox;
                for ci in 0..c {
                    for ky in 0..kh {
                        let y = (oy * g.stride + ky) as isize - g.padding as isize;
                        if y < 0 || y as usize >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let x = (ox * g.stride + kx) as isize - g.padding as isize;
                            if x < 0 || x as usize >= w {
                                continue;
                            }
                            img[[bi, ci, y as usize, x as usize]] += cols[[row, (ci * kh + ky) * kw + kx]];
                        }
                    }
                }
            }
        }
    }
    img
}

/// Drive statistics of a convolution, flattened to rows (batch, y, x) × out channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStats<T> {
    pub mean: Array2<T>,
    pub std: Array2<T>,
    pub output_hw: (usize, usize),
    pub(crate) input_dim: (usize, usize, usize, usize),
    pub(crate) patches: Array2<T>,
    pub(crate) variance: Array2<T>,
    pub(crate) sigma_type: SigmaType,
}

impl<T: Scalar> ConvStats<T> {
    /// Reshapes a flattened (rows × channels) map to (batch, channel, y, x).
    pub fn to_nchw(&self, flat: &Array2<T>) -> Array4<T> {
        let (oh, ow) = self.output_hw;
        let b = self.input_dim.0;
        Array4::from_shape_fn((b, flat.ncols(), oh, ow), |(bi, c, y, x)| flat[[(bi * oh + y) * ow + x, c]])
    }

    pub fn from_nchw(&self, map: ArrayView4<'_, T>) -> Array2<T> {
        let (oh, ow) = self.output_hw;
        let (b, c, _, _) = map.dim();
        Array2::from_shape_fn((b * oh * ow, c), |(r, ci)| map[[r / (oh * ow), ci, (r / ow) % oh, r % ow]])
    }
}

/// `μ_D = P ⋆ W`, `σ_D² = P(1−P) ⋆ f(W)` with the same input mask and variance floor as the dense case.
pub fn layer_stats_conv<T: Scalar>(
    p: ArrayView4<'_, T>,
    kernel_q: ArrayView2<'_, T>,
    geometry: &ConvGeometry,
    sigma_type: SigmaType,
) -> Result<ConvStats<T>> {
    geometry.check_input(p.shape())?;
    geometry.check_kernel(&kernel_q)?;
    let (_, _, h, w) = p.dim();
    let out = geometry.output_size(h, w)?;
    let patches = mask_inputs(im2col(p, geometry, out).view());
    let mean = patches.dot(&kernel_q.t());
    let w_term = kernel_q.mapv(|v| sigma_type.weight_term(v));
    let variance = bernoulli_variance(&patches).dot(&w_term.t());
    let std = floored_std(&variance);
    Ok(ConvStats {
        mean,
        std,
        output_hw: out,
        input_dim: p.dim(),
        patches,
        variance,
        sigma_type,
    })
}

/// Returns `(∂L/∂W_q as a kernel matrix, ∂L/∂P as an NCHW map)`.
pub fn layer_stats_conv_backward<T: Scalar>(
    d_mean: ArrayView2<'_, T>,
    d_std: ArrayView2<'_, T>,
    stats: &ConvStats<T>,
    kernel_q: ArrayView2<'_, T>,
    geometry: &ConvGeometry,
) -> (Array2<T>, Array4<T>) {
    let x = &stats.patches;
    let st = stats.sigma_type;
    let d_var = variance_grad(d_std, &stats.std, &stats.variance);
    let v = bernoulli_variance(x);

    let mut grad_k = d_mean.t().dot(x);
    let var_part = d_var.t().dot(&v);
    Zip::from(&mut grad_k)
        .and(&var_part)
        .and(kernel_q)
        .for_each(|g, &vp, &w| *g += vp * st.weight_term_grad(w));

    let w_term = kernel_q.mapv(|w| st.weight_term(w));
    let mut grad_cols = d_mean.dot(&kernel_q);
    let var_in = d_var.dot(&w_term);
    let two = T::of(2.0);
    Zip::from(&mut grad_cols)
        .and(&var_in)
        .and(x)
        .for_each(|g, &vi, &xv| {
            *g = if xv > T::zero() { *g + vi * (T::one() - two * xv) } else { T::zero() };
        });
    let grad_p = col2im(&grad_cols, geometry, stats.input_dim, stats.output_hw);
    (grad_k, grad_p)
}
