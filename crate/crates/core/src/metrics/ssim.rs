//! Gaussian-windowed SSIM and its multi-scale extension.
//!
//! Statistics are taken over valid window positions only (no padding). For
//! multi-channel images each channel is scored separately and the results
//! averaged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::scalar::Scalar;

/// Canonical five-scale MS-SSIM exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub window_side: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_side: 11,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_side < 3 || self.window_side % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "window_side must be odd and >= 3, got {}",
                self.window_side
            )));
        }
        if !(self.gaussian_sigma > 0.0 && self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::InvalidArgument(
                "sigma, k1, k2 and dynamic_range must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window_side / 2) as f64;
        let mut k: Vec<f64> = (0..self.window_side)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.gaussian_sigma * self.gaussian_sigma)).exp()
            })
            .collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        k
    }

    fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        if h < self.window_side || w < self.window_side {
            return Err(Error::ImageTooSmall {
                height: h,
                width: w,
                window: self.window_side,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsSsimParams {
    pub base: SsimParams,
    pub scale_weights: Vec<f64>,
}

impl Default for MsSsimParams {
    fn default() -> Self {
        Self {
            base: SsimParams::default(),
            scale_weights: MS_SSIM_WEIGHTS.to_vec(),
        }
    }
}

impl MsSsimParams {
    /// Validates and renormalises the weights to sum to one.
    pub fn new(base: SsimParams, scale_weights: Vec<f64>) -> Result<Self> {
        base.validate()?;
        if scale_weights.is_empty() || scale_weights.len() > 5 {
            return Err(Error::InvalidArgument(format!(
                "between 1 and 5 scales required, got {}",
                scale_weights.len()
            )));
        }
        if scale_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("scale weights must be positive".into()));
        }
        let total: f64 = scale_weights.iter().sum();
        Ok(Self {
            base,
            scale_weights: scale_weights.iter().map(|w| w / total).collect(),
        })
    }

    /// The largest prefix of the canonical weights whose coarsest scale
    /// still admits the window on a `side x side` image.
    pub fn for_side(base: SsimParams, side: usize) -> Result<Self> {
        base.validate()?;
        let mut scales = 0;
        let mut s = side;
        while scales < MS_SSIM_WEIGHTS.len() && s >= base.window_side {
            scales += 1;
            s /= 2;
        }
        if scales == 0 {
            return Err(Error::ImageTooSmall {
                height: side,
                width: side,
                window: base.window_side,
            });
        }
        Self::new(base, MS_SSIM_WEIGHTS[..scales].to_vec())
    }

    /// A single-scale configuration that reduces to plain SSIM.
    pub fn single_scale(base: SsimParams) -> Result<Self> {
        Self::new(base, vec![1.0])
    }

    pub fn scales(&self) -> usize {
        self.scale_weights.len()
    }

    /// Checks that an `h x w` image survives every downsampling step.
    pub fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        let shrink = 1usize << (self.scales() - 1);
        let (sh, sw) = (h / shrink, w / shrink);
        if sh < self.base.window_side || sw < self.base.window_side {
            return Err(Error::ImageTooSmall {
                height: h,
                width: w,
                window: self.base.window_side * shrink,
            });
        }
        Ok(())
    }
}

/// Separable valid-region filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            tmp[y * wo + x] = k.iter().enumerate().map(|(j, kv)| kv * plane[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = k.iter().enumerate().map(|(i, kv)| kv * tmp[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term over valid windows of one plane.
pub(crate) fn plane_stats(a: &[f64], b: &[f64], h: usize, w: usize, p: &SsimParams) -> (f64, f64) {
    let k = p.kernel();
    let (c1, c2) = (p.c1(), p.c2());
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let e_aa = filter_valid(&prod(|x, _| x * x), h, w, &k);
    let e_bb = filter_valid(&prod(|_, y| y * y), h, w, &k);
    let e_ab = filter_valid(&prod(|x, y| x * y), h, w, &k);
    let n = mu_a.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let c = (2.0 * cov + c2) / (va + vb + c2);
        ssim += l * c;
        cs += c;
    }
    (ssim / n, cs / n)
}

fn downsample2(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = 0.25
                * (plane[2 * y * w + 2 * x]
                    + plane[2 * y * w + 2 * x + 1]
                    + plane[(2 * y + 1) * w + 2 * x]
                    + plane[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    out
}

fn planes<T: Scalar>(img: &ImageTensor<T>) -> Vec<Vec<f64>> {
    (0..img.channels())
        .map(|c| img.plane(c).iter().map(|v| v.as_f64()).collect())
        .collect()
}

fn check_pair<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "images {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Structural similarity in `[-1, 1]`; 1 only for identical inputs.
pub fn ssim<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>, p: &SsimParams) -> Result<T> {
    p.validate()?;
    check_pair(a, b)?;
    let (_, h, w) = a.dims();
    p.check_extent(h, w)?;
    let (pa, pb) = (planes(a), planes(b));
    let total: f64 = pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| plane_stats(x, y, h, w, p).0)
        .sum();
    Ok(T::of(total / a.channels() as f64))
}

/// Multi-scale SSIM: contrast-structure terms at every scale, luminance at
/// the coarsest only, combined as a weighted geometric mean.
///
/// Negative per-scale terms are clamped to zero before exponentiation.
pub fn ms_ssim<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>, p: &MsSsimParams) -> Result<T> {
    p.base.validate()?;
    check_pair(a, b)?;
    let (_, h, w) = a.dims();
    p.check_extent(h, w)?;
    let mut total = 0.0;
    for (mut x, mut y) in planes(a).into_iter().zip(planes(b)) {
        let (mut hh, mut ww) = (h, w);
        let mut value = 1.0;
        for (s, &weight) in p.scale_weights.iter().enumerate() {
            let (full, cs) = plane_stats(&x, &y, hh, ww, &p.base);
            let term = if s + 1 == p.scales() { full } else { cs };
            value *= term.max(0.0).powf(weight);
            if s + 1 < p.scales() {
                x = downsample2(&x, hh, ww);
                y = downsample2(&y, hh, ww);
                hh /= 2;
                ww /= 2;
            }
        }
        total += value;
    }
    Ok(T::of(total / a.channels() as f64))
}
