//! Geometric preprocessing and stochastic augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::scalar::Scalar;

const MAX_SIDE: usize = 1 << 15;

#[inline]
fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    a + t * (b - a)
}

/// Corner-aligned bilinear resize to `out_h x out_w`.
pub fn resize_bilinear<T: Scalar>(
    img: &ImageTensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<ImageTensor<T>> {
    if out_h == 0 || out_w == 0 || out_h > MAX_SIDE || out_w > MAX_SIDE {
        return Err(Error::InvalidArgument(format!(
            "resize target {out_h}x{out_w} outside 1..={MAX_SIDE}"
        )));
    }
    let (c, h, w) = img.dims();
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, T) {
        let pos = if n_out == 1 {
            (n_in - 1) as f64 / 2.0
        } else {
            (i * (n_in - 1)) as f64 / (n_out - 1) as f64
        };
        let i0 = (pos.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, T::of(pos - i0 as f64))
    };
    let xs: Vec<_> = (0..out_w).map(|x| coord(x, w, out_w)).collect();
    let ys: Vec<_> = (0..out_h).map(|y| coord(y, h, out_h)).collect();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = img.plane(ch);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], fx);
                let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], fx);
                out.push(lerp(top, bottom, fy));
            }
        }
    }
    ImageTensor::from_clamped(c, out_h, out_w, out)
}

/// Extracts the `crop_h x crop_w` window whose top-left corner is `(y0, x0)`.
pub fn crop<T: Scalar>(
    img: &ImageTensor<T>,
    y0: usize,
    x0: usize,
    crop_h: usize,
    crop_w: usize,
) -> Result<ImageTensor<T>> {
    let (c, h, w) = img.dims();
    if crop_h == 0 || crop_w == 0 || y0 + crop_h > h || x0 + crop_w > w {
        return Err(Error::InvalidArgument(format!(
            "crop {crop_h}x{crop_w}+{y0}+{x0} outside {h}x{w}"
        )));
    }
    let mut out = Vec::with_capacity(c * crop_h * crop_w);
    for ch in 0..c {
        let plane = img.plane(ch);
        for y in y0..y0 + crop_h {
            out.extend_from_slice(&plane[y * w + x0..y * w + x0 + crop_w]);
        }
    }
    ImageTensor::new(c, crop_h, crop_w, out)
}

/// Crops the largest centred square and resizes it to `side x side`.
pub fn center_crop_resize<T: Scalar>(img: &ImageTensor<T>, side: usize) -> Result<ImageTensor<T>> {
    if side < 8 {
        return Err(Error::InvalidArgument(format!("side must be >= 8, got {side}")));
    }
    if side > MAX_SIDE {
        return Err(Error::InvalidArgument(format!(
            "side {side} exceeds the supported maximum {MAX_SIDE}"
        )));
    }
    let (_, h, w) = img.dims();
    let s = h.min(w);
    let square = crop(img, (h - s) / 2, (w - s) / 2, s, s)?;
    resize_bilinear(&square, side, side)
}

pub fn flip_horizontal<T: Scalar>(img: &ImageTensor<T>) -> ImageTensor<T> {
    let (c, h, w) = img.dims();
    let mut out = Vec::with_capacity(img.data().len());
    for ch in 0..c {
        for row in img.plane(ch).chunks(w) {
            out.extend(row.iter().rev());
        }
    }
    ImageTensor::new(c, h, w, out).expect("same shape")
}

pub fn flip_vertical<T: Scalar>(img: &ImageTensor<T>) -> ImageTensor<T> {
    let (c, h, w) = img.dims();
    let mut out = Vec::with_capacity(img.data().len());
    for ch in 0..c {
        for row in img.plane(ch).chunks(w).rev() {
            out.extend_from_slice(row);
        }
    }
    ImageTensor::new(c, h, w, out).expect("same shape")
}

/// Rotates about the image centre by `degrees` (counter-clockwise), sampling
/// bilinearly; source pixels outside the image read as 0.
pub fn rotate<T: Scalar>(img: &ImageTensor<T>, degrees: f64) -> ImageTensor<T> {
    let (c, h, w) = img.dims();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![T::zero(); img.data().len()];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // Inverse rotation maps the output pixel back into the source.
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let fetch = |plane: &[T], yy: f64, xx: f64| -> f64 {
                if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                    0.0
                } else {
                    plane[yy as usize * w + xx as usize].as_f64()
                }
            };
            for ch in 0..c {
                let plane = img.plane(ch);
                let v = (1.0 - fy) * ((1.0 - fx) * fetch(plane, y0, x0) + fx * fetch(plane, y0, x0 + 1.0))
                    + fy * ((1.0 - fx) * fetch(plane, y0 + 1.0, x0) + fx * fetch(plane, y0 + 1.0, x0 + 1.0));
                out[(ch * h + y) * w + x] = T::of(v.clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(c, h, w, out).expect("same shape")
}

/// Same-size Gaussian blur with edge-replicated borders.
pub fn gaussian_blur<T: Scalar>(img: &ImageTensor<T>, sigma: f64) -> ImageTensor<T> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (c, h, w) = img.dims();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut out = vec![T::zero(); img.data().len()];
    let mut tmp = vec![0.0f64; h * w];
    for ch in 0..c {
        let plane = img.plane(ch);
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, k)| k * plane[y * w + clamp(x as isize + j as isize - radius, w)].as_f64())
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * tmp[clamp(y as isize + i as isize - radius, h) * w + x])
                    .sum();
                out[(ch * h + y) * w + x] = T::of(v.clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(c, h, w, out).expect("same shape")
}

/// Probabilities and ranges for training-time augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub max_rotation_deg: f64,
    pub crop_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            max_rotation_deg: 10.0,
            crop_fraction: 0.9,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// No-op augmentation.
    pub fn identity() -> Self {
        Self {
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            max_rotation_deg: 0.0,
            crop_fraction: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.hflip_prob) || !prob_ok(self.vflip_prob) {
            return Err(Error::InvalidArgument("flip probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(Error::InvalidArgument("max_rotation_deg must lie in [0, 180]".into()));
        }
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(Error::InvalidArgument("crop_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Horizontal flip, vertical flip, random crop (resized back), random
/// rotation, applied in that order.
///
/// Random draws happen in a fixed order regardless of which transforms fire,
/// so the stream position after a call depends only on the spec.
pub fn augment<T: Scalar, R: Rng + ?Sized>(
    img: &ImageTensor<T>,
    spec: &AugmentSpec,
    rng: &mut R,
) -> Result<ImageTensor<T>> {
    spec.validate()?;
    let (_, h, w) = img.dims();
    let mut out = img.clone();
    if rng.gen::<f64>() < spec.hflip_prob {
        out = flip_horizontal(&out);
    }
    if rng.gen::<f64>() < spec.vflip_prob {
        out = flip_vertical(&out);
    }
    if spec.crop_fraction < 1.0 {
        let ch = ((h as f64 * spec.crop_fraction).round() as usize).clamp(1, h);
        let cw = ((w as f64 * spec.crop_fraction).round() as usize).clamp(1, w);
        let y0 = rng.gen_range(0..=h - ch);
        let x0 = rng.gen_range(0..=w - cw);
        out = resize_bilinear(&crop(&out, y0, x0, ch, cw)?, h, w)?;
    }
    if spec.max_rotation_deg > 0.0 {
        let angle = rng.gen_range(-spec.max_rotation_deg..=spec.max_rotation_deg);
        out = rotate(&out, angle);
    }
    Ok(out)
}
