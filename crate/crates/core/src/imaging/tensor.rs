use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A `channels x height x width` intensity grid with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> ImageTensor<T> {
    /// Validating constructor: checks the shape, finiteness and the `[0, 1]` range.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image extent must be positive, got {height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::InvalidArgument("image size overflows".into()))?;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{channels}x{height}x{width} image needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_finite() || **v < T::zero() || **v > T::one())
        {
            return Err(Error::InvalidArgument(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds an image by clamping arbitrary values into `[0, 1]`; non-finite
    /// values are rejected.
    pub fn from_clamped(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite intensity".into()));
        }
        let data = data
            .into_iter()
            .map(|v| v.max(T::zero()).min(T::one()))
            .collect();
        Self::new(channels, height, width, data)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub fn cast<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| U::of(v.as_f64()).max(U::zero()).min(U::one()))
                .collect(),
        }
    }

    /// `[1, C, H, W]` tensor view for the networks.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(
            vec![1, self.channels, self.height, self.width],
            self.data.clone(),
        )
        .expect("image shape is consistent")
    }

    /// Stacks equally sized images into a `[N, C, H, W]` batch.
    pub fn batch(images: &[ImageTensor<T>]) -> Result<Tensor<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::Empty("image batch".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * images.len());
        for img in images {
            if !img.same_shape(first) {
                return Err(Error::ShapeMismatch(format!(
                    "batch mixes {:?} and {:?}",
                    first.dims(),
                    img.dims()
                )));
            }
            data.extend_from_slice(&img.data);
        }
        Tensor::new(
            vec![images.len(), first.channels, first.height, first.width],
            data,
        )
    }

    /// Splits a `[N, C, H, W]` batch back into images, clamping into `[0, 1]`.
    pub fn unbatch(t: &Tensor<T>) -> Result<Vec<ImageTensor<T>>> {
        let s = t.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch(format!("expected NCHW, got {s:?}")));
        }
        (0..s[0])
            .map(|i| Self::from_clamped(s[1], s[2], s[3], t.row(i).to_vec()))
            .collect()
    }
}
