//! Dense tensors, images, and the elementary operations every other module
//! builds on.
//!
//! All spatial data uses a row-major `[C, H, W]` layout.

mod io;
mod kahan;
mod metrics;
mod pad;
mod transform;

pub use io::{read_png, read_skf1, read_skf1_bundle, write_png, write_skf1, write_skf1_bundle};
pub use kahan::{kahan_sum, KahanLanes, KahanSum};
pub use metrics::{format_psnr, mse, psnr};
pub use pad::{center_crop, replicate_pad, replicate_pad_adjoint};
pub use transform::{spatial_transform, Dihedral};

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense row-major N-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Builds a tensor by evaluating `f` on every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Extents of a 3-D tensor as `(c, h, w)`.
    ///
    /// Panics if the tensor is not 3-D; callers validate with [`Tensor::expect_chw`].
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected a [C, H, W] tensor");
        (self.shape[0], self.shape[1], self.shape[2])
    }

    /// Validates that the tensor is 3-D and returns its extents.
    pub fn expect_chw(&self, what: &str) -> Result<(usize, usize, usize)> {
        if self.shape.len() != 3 {
            return Err(Error::shape(format!(
                "{what}: expected [C, H, W], got {:?}",
                self.shape
            )));
        }
        Ok(self.chw())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn expect_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{what}: {:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Largest absolute elementwise difference, evaluated in 64-bit.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel `c` of a `[C, H, W]` tensor as a flat `H * W` slice.
    pub fn plane(&self, c: usize) -> &[T] {
        let (_, h, w) = self.chw();
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let (_, h, w) = self.chw();
        &mut self.data[c * h * w..(c + 1) * h * w]
    }

    /// Concatenates `[C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::contract("concat_channels needs at least one tensor"));
        };
        let (_, h, w) = first.expect_chw("concat_channels")?;
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.expect_chw("concat_channels")?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape(format!("concat_channels: spatial {ph}x{pw} vs {h}x{w}")));
            }
            channels += c;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: vec![channels, h, w],
            data,
        })
    }
}

/// A `[C, H, W]` frame with `C` in {1, 3} and nominal value range `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T = f32> {
    tensor: Tensor<T>,
}

impl<T: Real> Image<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        let (c, h, w) = tensor.expect_chw("image")?;
        if c != 1 && c != 3 {
            return Err(Error::shape(format!("image needs 1 or 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::shape("image must have non-zero extent"));
        }
        Ok(Self { tensor })
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Tensor::new(vec![channels, height, width], data)?)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(Tensor::full(&[channels, height, width], value))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape[2]
    }

    pub fn data(&self) -> &[T] {
        self.tensor.data()
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        self.tensor.data_mut()
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.tensor.data[(c * self.height() + y) * self.width() + x]
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            tensor: self.tensor.cast(),
        }
    }

    /// Applies `a * v + b` to every sample.
    pub fn affine(&self, a: T, b: T) -> Self {
        Image {
            tensor: self.tensor.map(|v| a * v + b),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Image {
            tensor: self.tensor.map(f),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        Ok(Image {
            tensor: self.tensor.zip_map(&other.tensor, f)?,
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.tensor.max_abs_diff(&other.tensor)
    }
}

impl<T: Real> TryFrom<Tensor<T>> for Image<T> {
    type Error = Error;

    fn try_from(t: Tensor<T>) -> Result<Self> {
        Image::new(t)
    }
}

impl<T> AsRef<Tensor<T>> for Image<T> {
    fn as_ref(&self) -> &Tensor<T> {
        &self.tensor
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn image_channel_contract() {
        assert!(Image::<f32>::filled(2, 4, 4, 0.0).is_err());
        assert!(Image::<f32>::filled(3, 4, 4, 0.0).is_ok());
        assert!(Image::<f32>::new(Tensor::zeros(&[1, 0, 4])).is_err());
    }

    #[test]
    fn concat_stacks_channels() {
        let a = Tensor::<f32>::full(&[1, 2, 2], 1.0);
        let b = Tensor::<f32>::full(&[2, 2, 2], 2.0);
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[3, 2, 2]);
        assert_eq!(c.plane(0), &[1.0; 4]);
        assert_eq!(c.plane(2), &[2.0; 4]);
    }
}
