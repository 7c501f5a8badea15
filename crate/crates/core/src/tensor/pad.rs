use super::{Image, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

/// Replication padding of a `[C, H, W]` tensor by `pad` pixels on every side.
///
/// Out-of-range coordinates clamp to the nearest valid pixel.
pub fn replicate_pad<T: Real>(t: &Tensor<T>, pad: usize) -> Tensor<T> {
    let (c, h, w) = t.chw();
    if pad == 0 {
        return t.clone();
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let src = t.data();
    let mut out = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..ph {
            let sy = y.saturating_sub(pad).min(h - 1);
            let row = &plane[sy * w..(sy + 1) * w];
            out.extend(std::iter::repeat(row[0]).take(pad));
            out.extend_from_slice(row);
            out.extend(std::iter::repeat(row[w - 1]).take(pad));
        }
    }
    Tensor::new(vec![c, ph, pw], out).expect("padded extent")
}

/// Adjoint of [`replicate_pad`]: folds gradients on the padded grid back onto
/// the source pixels they were replicated from.
pub fn replicate_pad_adjoint<T: Real>(grad_padded: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let (c, ph, pw) = grad_padded.expect_chw("replicate_pad_adjoint")?;
    if ph <= 2 * pad || pw <= 2 * pad {
        return Err(Error::shape(format!("padded extent {ph}x{pw} too small for pad {pad}")));
    }
    let (h, w) = (ph - 2 * pad, pw - 2 * pad);
    let mut out = Tensor::zeros(&[c, h, w]);
    let src = grad_padded.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..ph {
            let sy = y.saturating_sub(pad).min(h - 1);
            for x in 0..pw {
                let sx = x.saturating_sub(pad).min(w - 1);
                dst[(ch * h + sy) * w + sx] += src[(ch * ph + y) * pw + x];
            }
        }
    }
    Ok(out)
}

/// Removes `pad` pixels from every side of a `[C, H, W]` tensor.
pub fn center_crop<T: Real>(t: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let (c, ph, pw) = t.expect_chw("center_crop")?;
    if ph <= 2 * pad || pw <= 2 * pad {
        return Err(Error::shape(format!("cannot crop {pad} from {ph}x{pw}")));
    }
    let (h, w) = (ph - 2 * pad, pw - 2 * pad);
    let src = t.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let start = (ch * ph + y + pad) * pw + pad;
            out.extend_from_slice(&src[start..start + w]);
        }
    }
    Tensor::new(vec![c, h, w], out)
}

impl<T: Real> Image<T> {
    pub fn replicate_pad(&self, pad: usize) -> Image<T> {
        Image {
            tensor: replicate_pad(self.tensor(), pad),
        }
    }
}
