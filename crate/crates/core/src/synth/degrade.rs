use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{gaussian_blur, ImageTensor};
use crate::scalar::Scalar;

/// Illumination, blur and occlusion parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationSpec {
    /// Amplitude `s` of the multiplicative field, which spans `[1 - s, 1 + s]`.
    pub illumination_strength: f64,
    pub blur_sigma: f64,
    pub artifact_count: usize,
    /// Occlusion radii in pixels, `[min, max]`.
    pub artifact_radius_range: [f64; 2],
    /// Peak darkening of an occlusion, in `[0, 1]`.
    pub artifact_opacity: f64,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            illumination_strength: 0.45,
            blur_sigma: 1.5,
            artifact_count: 3,
            artifact_radius_range: [4.0, 10.0],
            artifact_opacity: 0.7,
            seed: 0,
        }
    }
}

impl DegradationSpec {
    /// The null degradation.
    pub fn zero() -> Self {
        Self {
            illumination_strength: 0.0,
            blur_sigma: 0.0,
            artifact_count: 0,
            artifact_radius_range: [0.0, 0.0],
            artifact_opacity: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.illumination_strength) || !finite_nonneg(self.blur_sigma) {
            return Err(Error::InvalidArgument(
                "illumination_strength and blur_sigma must be finite and >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.artifact_opacity) {
            return Err(Error::InvalidArgument("artifact_opacity must lie in [0, 1]".into()));
        }
        let [lo, hi] = self.artifact_radius_range;
        if self.artifact_count > 0 && !(finite_nonneg(lo) && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "artifact_radius_range [{lo}, {hi}] must be a nonempty positive interval"
            )));
        }
        Ok(())
    }
}

/// Applies illumination, blur and occlusions in that order. Every random
/// draw comes from `rng`; the same number of draws is made for any spec
/// with the same `artifact_count`.
pub fn degrade<T: Scalar, R: Rng + ?Sized>(
    img: &ImageTensor<T>,
    spec: &DegradationSpec,
    rng: &mut R,
) -> Result<ImageTensor<T>> {
    spec.validate()?;
    let (c, h, w) = img.dims();
    let theta = rng.gen_range(0.0..2.0 * PI);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let omega = rng.gen_range(0.5 * PI..1.5 * PI);
    let s = spec.illumination_strength;
    let mut data: Vec<f64> = img.data().iter().map(|v| v.as_f64()).collect();
    if s > 0.0 {
        let (ct, st) = (theta.cos(), theta.sin());
        for ch in 0..c {
            for y in 0..h {
                let v = (y as f64 + 0.5) / h as f64;
                for x in 0..w {
                    let u = (x as f64 + 0.5) / w as f64;
                    let field = 1.0 + s * (omega * (ct * u + st * v) + phase).sin();
                    let p = &mut data[(ch * h + y) * w + x];
                    *p = (*p * field).clamp(0.0, 1.0);
                }
            }
        }
    }
    let mut out = ImageTensor::new(c, h, w, data.into_iter().map(T::of).collect())?;
    out = gaussian_blur(&out, spec.blur_sigma);
    if spec.artifact_count == 0 {
        return Ok(out);
    }
    let [lo, hi] = spec.artifact_radius_range;
    let mut data: Vec<f64> = out.data().iter().map(|v| v.as_f64()).collect();
    for _ in 0..spec.artifact_count {
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let r = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        for y in 0..h {
            for x in 0..w {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                if d >= r {
                    continue;
                }
                let t = 1.0 - d / r;
                let m = t * t * (3.0 - 2.0 * t);
                let keep = 1.0 - spec.artifact_opacity * m;
                for ch in 0..c {
                    data[(ch * h + y) * w + x] *= keep;
                }
            }
        }
    }
    ImageTensor::from_clamped(c, h, w, data.into_iter().map(T::of).collect())
}

/// [`degrade`] with a generator seeded from `spec.seed`.
pub fn degrade_seeded<T: Scalar>(img: &ImageTensor<T>, spec: &DegradationSpec) -> Result<ImageTensor<T>> {
    degrade(img, spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}
