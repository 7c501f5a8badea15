use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{read_skf1_bundle, write_skf1_bundle, Tensor};

const FIELD_NAMES: [&str; 4] = ["k1h", "k1v", "k2h", "k2v"];

/// The four per-pixel 1-D kernel fields: horizontal and vertical kernels for
/// the first and the second frame. Each has shape `[K, H, W]` with odd `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableKernelField<T = f32> {
    pub k1h: Tensor<T>,
    pub k1v: Tensor<T>,
    pub k2h: Tensor<T>,
    pub k2v: Tensor<T>,
}

impl<T: Real> SeparableKernelField<T> {
    pub fn new(k1h: Tensor<T>, k1v: Tensor<T>, k2h: Tensor<T>, k2v: Tensor<T>) -> Result<Self> {
        let f = Self { k1h, k1v, k2h, k2v };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        let (k, h, w) = self.k1h.expect_chw("kernel field")?;
        for t in [&self.k1v, &self.k2h, &self.k2v] {
            if t.shape() != [k, h, w] {
                return Err(Error::shape(format!(
                    "kernel fields disagree: {:?} vs [{k}, {h}, {w}]",
                    t.shape()
                )));
            }
        }
        if k % 2 == 0 {
            return Err(Error::shape(format!("kernel size must be odd, got {k}")));
        }
        Ok(())
    }

    pub fn zeros(k: usize, h: usize, w: usize) -> Self {
        let z = Tensor::zeros(&[k, h, w]);
        Self {
            k1h: z.clone(),
            k1v: z.clone(),
            k2h: z.clone(),
            k2v: z,
        }
    }

    /// Every pixel of every field carries the same 1-D kernel `taps`.
    pub fn constant(taps: &[T], h: usize, w: usize) -> Self {
        let k = taps.len();
        let t = Tensor::from_fn(&[k, h, w], |idx| taps[idx / (h * w)]);
        Self {
            k1h: t.clone(),
            k1v: t.clone(),
            k2h: t.clone(),
            k2v: t,
        }
    }

    /// Unit impulse at the center tap.
    pub fn delta_taps(k: usize) -> Vec<T> {
        let mut taps = vec![T::zero(); k];
        taps[k / 2] = T::one();
        taps
    }

    pub fn kernel_size(&self) -> usize {
        self.k1h.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.k1h.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.k1h.shape()[2]
    }

    pub fn fields(&self) -> [&Tensor<T>; 4] {
        [&self.k1h, &self.k1v, &self.k2h, &self.k2v]
    }

    pub fn fields_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [&mut self.k1h, &mut self.k1v, &mut self.k2h, &mut self.k2v]
    }

    pub fn cast<U: Real>(&self) -> SeparableKernelField<U> {
        SeparableKernelField {
            k1h: self.k1h.cast(),
            k1v: self.k1v.cast(),
            k2h: self.k2h.cast(),
            k2v: self.k2v.cast(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            k1h: self.k1h.scale(s),
            k1v: self.k1v.scale(s),
            k2h: self.k2h.scale(s),
            k2v: self.k2v.scale(s),
        }
    }

    /// Exchanges the kernels of the two frames.
    pub fn swap_frames(self) -> Self {
        Self {
            k1h: self.k2h,
            k1v: self.k2v,
            k2h: self.k1h,
            k2v: self.k1v,
        }
    }

    /// Adds `other` field by field; shapes must agree.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        for (a, b) in self.fields_mut().into_iter().zip(other.fields()) {
            a.expect_same_shape(b, "kernel field sum")?;
            a.add_assign(b);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.fields().iter().all(|t| t.all_finite())
    }
}

impl SeparableKernelField<f32> {
    /// Writes the four fields as a named SKF1 bundle (`k1h`, `k1v`, `k2h`, `k2v`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let entries: Vec<_> = FIELD_NAMES.iter().copied().zip(self.fields()).collect();
        write_skf1_bundle(&entries, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let entries = read_skf1_bundle(path)?;
        let names: Vec<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
        if names != FIELD_NAMES {
            return Err(Error::corrupt(
                "kernel field bundle",
                format!("expected entries {FIELD_NAMES:?}, found {names:?}"),
            ));
        }
        let mut it = entries.into_iter().map(|(_, t)| t);
        let mut next = || it.next().expect("four entries");
        Self::new(next(), next(), next(), next())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_even_or_mismatched_fields() {
        let a = Tensor::<f32>::zeros(&[4, 2, 2]);
        assert!(SeparableKernelField::new(a.clone(), a.clone(), a.clone(), a).is_err());
        let b = Tensor::<f32>::zeros(&[3, 2, 2]);
        let c = Tensor::<f32>::zeros(&[3, 2, 3]);
        assert!(SeparableKernelField::new(b.clone(), b.clone(), b, c).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kf.skf");
        let mut f = SeparableKernelField::<f32>::constant(&[0.1, 0.2, 0.7], 2, 3);
        f.k2v.data_mut()[4] = -3.5;
        f.save(&path).unwrap();
        assert_eq!(SeparableKernelField::load(&path).unwrap(), f);
    }
}
