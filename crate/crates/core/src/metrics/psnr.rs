use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::scalar::Scalar;

fn check_shapes<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "images {:?} and {:?}",
            a.dims(),
            b.dims()
        )))
    }
}

/// Mean squared error over every channel and pixel.
pub fn mse<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<T> {
    check_shapes(a, b)?;
    let sum: T = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(sum / T::of(a.data().len() as f64))
}

/// Peak signal-to-noise ratio in dB for peak value 1.
///
/// Identical images give `+inf`.
pub fn psnr<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<T> {
    let m = mse(a, b)?;
    if m == T::zero() {
        return Ok(T::infinity());
    }
    Ok(T::of(10.0) * (T::one() / m).log10())
}
