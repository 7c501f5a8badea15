use super::{sepconv_backward, sepconv_forward, sepconv_forward_taped, OperatorTape, SeparableKernelField};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{replicate_pad, Image, KahanLanes, Tensor};

/// Pixels whose normalization denominator is smaller than this in magnitude
/// fall back to the unnormalized numerator.
pub const DENOMINATOR_EPS: f64 = 1e-6;

/// Per-pixel tap sums of one `[K, H, W]` kernel field, compensated and
/// accumulated in tap order.
fn tap_sums<T: Real>(k: &Tensor<T>) -> Vec<T> {
    let (taps, h, w) = k.chw();
    let n = h * w;
    let ones = vec![T::one(); n];
    let mut lanes = KahanLanes::new(n);
    for t in 0..taps {
        lanes.add_products(0, &ones, &k.data()[t * n..][..n]);
    }
    let mut sums = vec![T::zero(); n];
    lanes.values_into(0, &mut sums);
    sums
}

/// Filtering of an all-ones mask with both frames' kernels, `[1, H, W]`.
///
/// Replicate padding of a constant mask is constant, so each frame contributes
/// the product of its horizontal and vertical tap sums.
pub fn normalization_denominator<T: Real>(kf: &SeparableKernelField<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    if (kf.height(), kf.width()) != (h, w) {
        return Err(Error::shape(format!(
            "kernel field is {}x{}, expected {h}x{w}",
            kf.height(),
            kf.width()
        )));
    }
    let [s1h, s1v, s2h, s2v] = kf.fields().map(tap_sums);
    let data = (0..h * w).map(|p| s1h[p] * s1v[p] + s2h[p] * s2v[p]).collect();
    Tensor::new(vec![1, h, w], data)
}

/// State retained by [`interpolate_tensors`] for [`interpolate_backward`].
#[derive(Clone, Debug)]
pub struct InterpolationTape<T> {
    frame1: OperatorTape<T>,
    frame2: OperatorTape<T>,
    normalized: Option<Normalization<T>>,
}

#[derive(Clone, Debug)]
struct Normalization<T> {
    sums: [Vec<T>; 4],
    /// Denominator, or `None` where the guard replaced it with one.
    divisor: Vec<Option<T>>,
    out: Tensor<T>,
}

fn check_frames<T: Real>(
    i1: &Tensor<T>,
    i2: &Tensor<T>,
    kf: &SeparableKernelField<T>,
) -> Result<(usize, usize, usize)> {
    let (c, h, w) = i1.expect_chw("first frame")?;
    i1.expect_same_shape(i2, "interpolation frames")?;
    if (kf.height(), kf.width()) != (h, w) {
        return Err(Error::shape(format!(
            "kernel field is {}x{}, frames are {h}x{w}",
            kf.height(),
            kf.width()
        )));
    }
    Ok((c, h, w))
}

/// Divides every channel of `out` by the guarded denominator built from the
/// four tap sums and returns the divisor used at each pixel.
fn normalize<T: Real>(out: &mut Tensor<T>, sums: &[Vec<T>; 4]) -> Vec<Option<T>> {
    let (c, h, w) = out.chw();
    let eps = T::of(DENOMINATOR_EPS);
    let divisor: Vec<Option<T>> = (0..h * w)
        .map(|p| {
            let d = sums[0][p] * sums[1][p] + sums[2][p] * sums[3][p];
            (d.abs() >= eps).then_some(d)
        })
        .collect();
    for ch in 0..c {
        for (v, d) in out.plane_mut(ch).iter_mut().zip(&divisor) {
            if let Some(d) = d {
                *v /= *d;
            }
        }
    }
    divisor
}

/// Synthesizes the intermediate frame from two `[C, H, W]` tensors and the
/// predicted kernels. Inputs are replicate padded by `(K - 1) / 2` here.
///
/// With `normalized`, the sum of both filtered frames is divided by the
/// filtered all-ones mask; the mask is single channel and broadcast across
/// channels.
pub fn interpolate_tensors<T: Real>(
    i1: &Tensor<T>,
    i2: &Tensor<T>,
    kf: &SeparableKernelField<T>,
    normalized: bool,
) -> Result<(Tensor<T>, InterpolationTape<T>)> {
    check_frames(i1, i2, kf)?;
    let pad = (kf.kernel_size() - 1) / 2;
    let (mut out, frame1) = sepconv_forward_taped(replicate_pad(i1, pad), &kf.k1h, &kf.k1v)?;
    let (second, frame2) = sepconv_forward_taped(replicate_pad(i2, pad), &kf.k2h, &kf.k2v)?;
    out.add_assign(&second);
    if !normalized {
        return Ok((
            out,
            InterpolationTape {
                frame1,
                frame2,
                normalized: None,
            },
        ));
    }
    let sums = kf.fields().map(tap_sums);
    let divisor = normalize(&mut out, &sums);
    Ok((
        out.clone(),
        InterpolationTape {
            frame1,
            frame2,
            normalized: Some(Normalization { sums, divisor, out }),
        },
    ))
}

/// [`interpolate_tensors`] without recording a tape, for inference. The
/// output is bit-identical.
pub fn interpolate_forward<T: Real>(
    i1: &Tensor<T>,
    i2: &Tensor<T>,
    kf: &SeparableKernelField<T>,
    normalized: bool,
) -> Result<Tensor<T>> {
    check_frames(i1, i2, kf)?;
    let pad = (kf.kernel_size() - 1) / 2;
    let mut out = sepconv_forward(&replicate_pad(i1, pad), &kf.k1h, &kf.k1v)?;
    out.add_assign(&sepconv_forward(&replicate_pad(i2, pad), &kf.k2h, &kf.k2v)?);
    if normalized {
        normalize(&mut out, &kf.fields().map(tap_sums));
    }
    Ok(out)
}

/// Image-level wrapper around [`interpolate_forward`].
pub fn interpolate_with_kernels<T: Real>(
    i1: &Image<T>,
    i2: &Image<T>,
    kf: &SeparableKernelField<T>,
    normalized: bool,
) -> Result<Image<T>> {
    Image::new(interpolate_forward(i1.tensor(), i2.tensor(), kf, normalized)?)
}

/// Gradient of the synthesized frame with respect to the four kernel fields.
pub fn interpolate_backward<T: Real>(
    tape: &InterpolationTape<T>,
    grad_out: &Tensor<T>,
) -> Result<SeparableKernelField<T>> {
    let (c, h, w) = grad_out.expect_chw("interpolation gradient")?;
    let mut mass_grad = None;
    let grad_num = match &tape.normalized {
        None => grad_out.clone(),
        Some(norm) => {
            grad_out.expect_same_shape(&norm.out, "interpolation gradient")?;
            let mut gn = grad_out.clone();
            let mut gd = vec![T::zero(); h * w];
            for ch in 0..c {
                let o = norm.out.plane(ch);
                for (p, g) in gn.plane_mut(ch).iter_mut().enumerate() {
                    if let Some(d) = norm.divisor[p] {
                        gd[p] -= *g * o[p] / d;
                        *g /= d;
                    }
                }
            }
            mass_grad = Some(gd);
            gn
        }
    };
    let g1 = sepconv_backward(&tape.frame1, &grad_num)?;
    let g2 = sepconv_backward(&tape.frame2, &grad_num)?;
    let mut grads = SeparableKernelField {
        k1h: g1.kh,
        k1v: g1.kv,
        k2h: g2.kh,
        k2v: g2.kv,
    };
    if let (Some(gd), Some(norm)) = (mass_grad, &tape.normalized) {
        let [s1h, s1v, s2h, s2v] = &norm.sums;
        // d(mass)/d(kh[i]) is the vertical tap sum and vice versa.
        let partners = [s1v, s1h, s2v, s2h];
        for (field, partner) in grads.fields_mut().into_iter().zip(partners) {
            let taps = field.shape()[0];
            let data = field.data_mut();
            for t in 0..taps {
                for p in 0..h * w {
                    data[t * h * w + p] += gd[p] * partner[p];
                }
            }
        }
    }
    Ok(grads)
}
