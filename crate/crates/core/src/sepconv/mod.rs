//! The adaptive separable convolution operator: every output pixel is
//! filtered with its own rank-1 kernel `outer(kv, kh)`.
//!
//! Kernels are shared across color channels. Kernel tensors have shape
//! `[K, H, W]`: tap index first, then the output pixel they belong to.

mod field;
mod interpolate;

pub use field::SeparableKernelField;
pub use interpolate::{
    interpolate_backward, interpolate_forward, interpolate_tensors, interpolate_with_kernels,
    normalization_denominator, InterpolationTape, DENOMINATOR_EPS,
};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{replicate_pad, KahanLanes, Tensor};

/// Inputs retained by [`sepconv_forward_taped`] for the backward pass.
#[derive(Clone, Debug)]
pub struct OperatorTape<T> {
    padded: Tensor<T>,
    kh: Tensor<T>,
    kv: Tensor<T>,
}

impl<T: Real> OperatorTape<T> {
    pub fn padded(&self) -> &Tensor<T> {
        &self.padded
    }
}

/// Validates operand shapes and returns `(c, h, w, k)` of the output.
fn check_operands<T: Real>(padded: &Tensor<T>, kh: &Tensor<T>, kv: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let (c, ph, pw) = padded.expect_chw("sepconv input")?;
    let (k, h, w) = kh.expect_chw("horizontal kernel")?;
    if kv.shape() != kh.shape() {
        return Err(Error::shape(format!(
            "vertical kernel {:?} vs horizontal kernel {:?}",
            kv.shape(),
            kh.shape()
        )));
    }
    if k % 2 == 0 {
        return Err(Error::shape(format!("kernel size must be odd, got {k}")));
    }
    if ph != h + k - 1 || pw != w + k - 1 {
        return Err(Error::shape(format!(
            "padded input {ph}x{pw} does not match {h}x{w} output with {k}-tap kernels"
        )));
    }
    Ok((c, h, w, k))
}

/// Filters a padded `[C, H+K-1, W+K-1]` tensor with per-pixel separable
/// kernels, producing `[C, H, W]`.
///
/// Per output sample the `K * K` terms `kv[j] * kh[i] * padded[y+j, x+i]`
/// are accumulated with compensated summation, horizontal taps innermost.
pub fn sepconv_forward<T: Real>(padded: &Tensor<T>, kh: &Tensor<T>, kv: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w, k) = check_operands(padded, kh, kv)?;
    let (ph, pw) = (h + k - 1, w + k - 1);
    let (p, khd, kvd) = (padded.data(), kh.data(), kv.data());
    let mut out = vec![T::zero(); c * h * w];
    let mut acc = KahanLanes::<T>::new(c * w);
    let mut weight = vec![T::zero(); w];
    for y in 0..h {
        acc.reset();
        for j in 0..k {
            let kv_row = &kvd[(j * h + y) * w..][..w];
            for i in 0..k {
                let kh_row = &khd[(i * h + y) * w..][..w];
                for ((wt, &a), &b) in weight.iter_mut().zip(kv_row).zip(kh_row) {
                    *wt = a * b;
                }
                for ch in 0..c {
                    acc.add_products(ch * w, &weight, &p[(ch * ph + y + j) * pw + i..][..w]);
                }
            }
        }
        for ch in 0..c {
            acc.values_into(ch * w, &mut out[(ch * h + y) * w..][..w]);
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Forward pass that also records what [`sepconv_backward`] needs.
pub fn sepconv_forward_taped<T: Real>(
    padded: Tensor<T>,
    kh: &Tensor<T>,
    kv: &Tensor<T>,
) -> Result<(Tensor<T>, OperatorTape<T>)> {
    let out = sepconv_forward(&padded, kh, kv)?;
    Ok((
        out,
        OperatorTape {
            padded,
            kh: kh.clone(),
            kv: kv.clone(),
        },
    ))
}

/// Gradients of the separable convolution with respect to all three operands.
#[derive(Clone, Debug)]
pub struct OperatorGrad<T> {
    pub padded: Tensor<T>,
    pub kh: Tensor<T>,
    pub kv: Tensor<T>,
}

/// Exact adjoint of [`sepconv_forward`].
pub fn sepconv_backward<T: Real>(tape: &OperatorTape<T>, grad_out: &Tensor<T>) -> Result<OperatorGrad<T>> {
    let (c, h, w, k) = check_operands(&tape.padded, &tape.kh, &tape.kv)?;
    if grad_out.shape() != [c, h, w] {
        return Err(Error::shape(format!(
            "grad_out {:?} does not match forward output [{c}, {h}, {w}]",
            grad_out.shape()
        )));
    }
    let (ph, pw) = (h + k - 1, w + k - 1);
    let (p, khd, kvd, g) = (tape.padded.data(), tape.kh.data(), tape.kv.data(), grad_out.data());
    let mut gp = vec![T::zero(); c * ph * pw];
    let mut gkh = vec![T::zero(); k * h * w];
    let mut gkv = vec![T::zero(); k * h * w];
    let mut proj = vec![T::zero(); w];
    for y in 0..h {
        for j in 0..k {
            let kv_row = &kvd[(j * h + y) * w..][..w];
            for i in 0..k {
                let kh_row = &khd[(i * h + y) * w..][..w];
                proj.iter_mut().for_each(|v| *v = T::zero());
                for ch in 0..c {
                    let g_row = &g[(ch * h + y) * w..][..w];
                    let p_row = &p[(ch * ph + y + j) * pw + i..][..w];
                    for ((s, &gv), &pv) in proj.iter_mut().zip(g_row).zip(p_row) {
                        *s += gv * pv;
                    }
                    let gp_row = &mut gp[(ch * ph + y + j) * pw + i..][..w];
                    for x in 0..w {
                        gp_row[x] += g_row[x] * kv_row[x] * kh_row[x];
                    }
                }
                let gkh_row = &mut gkh[(i * h + y) * w..][..w];
                for x in 0..w {
                    gkh_row[x] += kv_row[x] * proj[x];
                }
                let gkv_row = &mut gkv[(j * h + y) * w..][..w];
                for x in 0..w {
                    gkv_row[x] += kh_row[x] * proj[x];
                }
            }
        }
    }
    Ok(OperatorGrad {
        padded: Tensor::new(vec![c, ph, pw], gp)?,
        kh: Tensor::new(vec![k, h, w], gkh)?,
        kv: Tensor::new(vec![k, h, w], gkv)?,
    })
}

/// Brute-force reference: pads `img` internally, forms the explicit `K x K`
/// kernel at every pixel and applies it with a double loop, all in 64-bit.
pub fn full2d_oracle<T: Real>(img: &Tensor<T>, kh: &Tensor<T>, kv: &Tensor<T>) -> Result<Tensor<f64>> {
    let (c, h, w) = img.expect_chw("oracle input")?;
    let (k, kh_h, kh_w) = kh.expect_chw("horizontal kernel")?;
    if (kh_h, kh_w) != (h, w) || kv.shape() != kh.shape() || k % 2 == 0 {
        return Err(Error::shape(format!(
            "oracle kernels {:?}/{:?} do not fit image {:?}",
            kh.shape(),
            kv.shape(),
            img.shape()
        )));
    }
    let r = (k - 1) / 2;
    let padded = replicate_pad(&img.cast::<f64>(), r);
    let (pw, ph) = (w + 2 * r, h + 2 * r);
    let (kh, kv) = (kh.cast::<f64>(), kv.cast::<f64>());
    let mut out = Tensor::<f64>::zeros(&[c, h, w]);
    let mut kernel = vec![0.0f64; k * k];
    for y in 0..h {
        for x in 0..w {
            for j in 0..k {
                for i in 0..k {
                    kernel[j * k + i] = kv.data()[(j * h + y) * w + x] * kh.data()[(i * h + y) * w + x];
                }
            }
            for ch in 0..c {
                let mut s = 0.0;
                for j in 0..k {
                    for i in 0..k {
                        s += kernel[j * k + i] * padded.data()[(ch * ph + y + j) * pw + x + i];
                    }
                }
                out.data_mut()[(ch * h + y) * w + x] = s;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
