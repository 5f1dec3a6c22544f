use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::imaging::{augment, center_crop_resize, load_image, AugmentSpec, ImageTensor};
use crate::pairing::{FundusRecord, PairSampler};
use crate::scalar::Scalar;

/// Supplies `(sources, targets)` batches to the trainer.
pub trait BatchSource<T: Scalar> {
    /// Number of source samples; an epoch covers them once in expectation.
    fn source_len(&self) -> usize;

    /// Draws one batch. Sampling and augmentation use separate streams.
    fn draw<R: Rng + ?Sized>(&self, batch_size: usize, sample: &mut R, augment: &mut R) -> Result<(Tensor<T>, Tensor<T>)>;

    fn steps_per_epoch(&self, batch_size: usize) -> usize {
        self.source_len().div_ceil(batch_size)
    }
}

/// Grade-matched low/high quality images held in memory.
#[derive(Clone, Debug)]
pub struct ImageSource<T> {
    sampler: PairSampler,
    low: Vec<ImageTensor<T>>,
    high: Vec<ImageTensor<T>>,
    augment: AugmentSpec,
}

impl<T: Scalar> ImageSource<T> {
    /// Loads every record, center-cropped and resized to `side`.
    pub fn load(low: Vec<FundusRecord>, high: Vec<FundusRecord>, side: usize, augment: AugmentSpec) -> Result<Self> {
        let read = |r: &FundusRecord| -> Result<ImageTensor<T>> { center_crop_resize(&load_image(&r.path)?, side) };
        let low_images = low.iter().map(read).collect::<Result<Vec<_>>>()?;
        let high_images = high.iter().map(read).collect::<Result<Vec<_>>>()?;
        Self::from_images(low, low_images, high, high_images, augment)
    }

    /// Uses already decoded images, aligned with their records.
    pub fn from_images(
        low: Vec<FundusRecord>,
        low_images: Vec<ImageTensor<T>>,
        high: Vec<FundusRecord>,
        high_images: Vec<ImageTensor<T>>,
        augment: AugmentSpec,
    ) -> Result<Self> {
        augment.validate()?;
        if low.len() != low_images.len() || high.len() != high_images.len() {
            return Err(Error::ShapeMismatch("records and images differ in count".into()));
        }
        let first = low_images.first().or(high_images.first());
        if let Some(f) = first {
            if let Some(bad) = low_images.iter().chain(&high_images).find(|i| !i.same_shape(f)) {
                return Err(Error::ShapeMismatch(format!("image {:?} vs {:?}", bad.dims(), f.dims())));
            }
        }
        Ok(Self {
            sampler: PairSampler::new(low, high)?,
            low: low_images,
            high: high_images,
            augment,
        })
    }

    pub fn sampler(&self) -> &PairSampler {
        &self.sampler
    }
}

impl<T: Scalar> BatchSource<T> for ImageSource<T> {
    fn source_len(&self) -> usize {
        self.low.len()
    }

    fn draw<R: Rng + ?Sized>(&self, batch_size: usize, sample: &mut R, aug: &mut R) -> Result<(Tensor<T>, Tensor<T>)> {
        let pairs = self.sampler.sample_indices(batch_size, sample)?;
        let mut inputs = Vec::with_capacity(batch_size);
        let mut targets = Vec::with_capacity(batch_size);
        for (i, j) in pairs {
            inputs.push(augment(&self.low[i], &self.augment, aug)?);
            targets.push(augment(&self.high[j], &self.augment, aug)?);
        }
        Ok((ImageTensor::batch(&inputs)?, ImageTensor::batch(&targets)?))
    }
}

/// Two point clouds `[M, D]` and `[K, D]`, sampled uniformly with
/// replacement and independently of each other.
#[derive(Clone, Debug)]
pub struct CloudSource<T> {
    source: Tensor<T>,
    target: Tensor<T>,
}

impl<T: Scalar> CloudSource<T> {
    pub fn new(source: Tensor<T>, target: Tensor<T>) -> Result<Self> {
        for t in [&source, &target] {
            if t.shape().len() != 2 || t.shape()[0] == 0 {
                return Err(Error::Empty(format!("point cloud of shape {:?}", t.shape())));
            }
        }
        if source.shape()[1] != target.shape()[1] {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", source.shape(), target.shape())));
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &Tensor<T> {
        &self.source
    }

    pub fn target(&self) -> &Tensor<T> {
        &self.target
    }
}

fn pick<T: Scalar, R: Rng + ?Sized>(cloud: &Tensor<T>, n: usize, rng: &mut R) -> Tensor<T> {
    let d = cloud.row_len();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        data.extend_from_slice(cloud.row(rng.gen_range(0..cloud.rows())));
    }
    Tensor::new(vec![n, d], data).expect("consistent shape")
}

impl<T: Scalar> BatchSource<T> for CloudSource<T> {
    fn source_len(&self) -> usize {
        self.source.rows()
    }

    fn draw<R: Rng + ?Sized>(&self, batch_size: usize, sample: &mut R, _aug: &mut R) -> Result<(Tensor<T>, Tensor<T>)> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        let y = pick(&self.source, batch_size, sample);
        let x = pick(&self.target, batch_size, sample);
        Ok((y, x))
    }
}
