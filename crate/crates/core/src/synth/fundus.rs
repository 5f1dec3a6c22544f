use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::scalar::Scalar;

/// Optic disc placement as fractions of the image side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticDisc {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
}

impl Default for OpticDisc {
    fn default() -> Self {
        Self {
            center_x: 0.68,
            center_y: 0.5,
            radius: 0.08,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub side: usize,
    pub vessel_count: usize,
    pub dr_grade: u8,
    /// Lesions rendered per grade step; grade `g` shows `g * lesion_base_count`.
    pub lesion_base_count: usize,
    pub optic_disc: OpticDisc,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            side: 64,
            vessel_count: 6,
            dr_grade: 0,
            lesion_base_count: 3,
            optic_disc: OpticDisc::default(),
            seed: 0,
        }
    }
}

/// A rendered image with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthFundus<T> {
    pub image: ImageTensor<T>,
    pub dr_grade: u8,
    /// Row-major `side x side` mask of lesion pixels.
    pub lesion_mask: Vec<bool>,
    pub lesion_count: usize,
}

const FOV_RADIUS: f64 = 0.46;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.side < 32 {
            return Err(Error::Geometry(format!("side {} is below 32", self.side)));
        }
        if self.side > 4096 {
            return Err(Error::Geometry(format!("side {} exceeds 4096", self.side)));
        }
        if self.dr_grade > 4 {
            return Err(Error::InvalidArgument(format!("dr_grade {} is not in 0..=4", self.dr_grade)));
        }
        let d = &self.optic_disc;
        let reach = ((d.center_x - 0.5).powi(2) + (d.center_y - 0.5).powi(2)).sqrt() + d.radius;
        if !(d.radius > 0.0 && reach.is_finite() && reach <= FOV_RADIUS) {
            return Err(Error::Geometry("optic disc must lie inside the field of view".into()));
        }
        Ok(())
    }

    pub fn lesion_count(&self) -> usize {
        self.lesion_base_count * self.dr_grade as usize
    }

    fn lesion_radius(&self) -> f64 {
        (self.side as f64 * 0.03).max(1.5)
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Renders a fundus-like RGB image: black surround, orange field of view,
/// bright optic disc, dark vessels leaving the disc and `grade × base`
/// lesion blobs, alternately bright and dark.
pub fn synth_fundus<T: Scalar, R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<SynthFundus<T>> {
    spec.validate()?;
    let n = spec.side;
    let s = n as f64;
    let (cx, cy, fov) = (0.5 * s, 0.5 * s, FOV_RADIUS * s);
    let disc = &spec.optic_disc;
    let (dx, dy, dr) = (disc.center_x * s, disc.center_y * s, disc.radius * s);

    let tint = [
        0.72 + rng.gen_range(-0.06..0.06),
        0.34 + rng.gen_range(-0.05..0.05),
        0.14 + rng.gen_range(-0.03..0.03),
    ];
    let grad_angle = rng.gen_range(0.0..2.0 * PI);
    let grad_amp = rng.gen_range(0.0..0.12);

    // Vessels are traced as curved walks from the disc rim and accumulated
    // into a coverage map.
    let mut vessel = vec![0.0f64; n * n];
    let width = (s / 64.0).max(0.8);
    for k in 0..spec.vessel_count {
        let base = 2.0 * PI * k as f64 / spec.vessel_count.max(1) as f64;
        let mut angle = base + rng.gen_range(-0.4..0.4);
        let bend = rng.gen_range(-0.03..0.03) * 64.0 / s;
        let (mut px, mut py) = (dx + dr * angle.cos(), dy + dr * angle.sin());
        let w = width * rng.gen_range(0.8..1.3);
        for _ in 0..4 * n {
            let reach = w.ceil() as isize + 1;
            for oy in -reach..=reach {
                for ox in -reach..=reach {
                    let (ix, iy) = (px.floor() as isize + ox, py.floor() as isize + oy);
                    if ix < 0 || iy < 0 || ix >= n as isize || iy >= n as isize {
                        continue;
                    }
                    let d = ((ix as f64 + 0.5 - px).powi(2) + (iy as f64 + 0.5 - py).powi(2)).sqrt();
                    let cov = 1.0 - smoothstep(0.5 * w, w, d);
                    let slot = &mut vessel[iy as usize * n + ix as usize];
                    *slot = slot.max(cov);
                }
            }
            angle += bend;
            px += 0.5 * angle.cos();
            py += 0.5 * angle.sin();
            if ((px - cx).powi(2) + (py - cy).powi(2)).sqrt() > fov {
                break;
            }
        }
    }

    // Lesion centres: inside the inner field, clear of the disc and of
    // each other so every blob is its own connected component.
    let lr = spec.lesion_radius();
    let mut lesions: Vec<(f64, f64)> = Vec::with_capacity(spec.lesion_count());
    let mut attempts = 0;
    while lesions.len() < spec.lesion_count() {
        attempts += 1;
        if attempts > 20_000 {
            return Err(Error::Geometry(format!(
                "{} lesions of radius {lr:.1} do not fit a {n}x{n} canvas",
                spec.lesion_count()
            )));
        }
        let a = rng.gen_range(0.0..2.0 * PI);
        let rho = (fov - lr - 3.0) * rng.gen::<f64>().sqrt();
        let (lx, ly) = (cx + rho * a.cos(), cy + rho * a.sin());
        if ((lx - dx).powi(2) + (ly - dy).powi(2)).sqrt() < dr + lr + 2.0 {
            continue;
        }
        if lesions
            .iter()
            .any(|&(ox, oy)| ((lx - ox).powi(2) + (ly - oy).powi(2)).sqrt() < 2.0 * lr + 2.5)
        {
            continue;
        }
        lesions.push((lx, ly));
    }

    let mut data = vec![0.0f64; 3 * n * n];
    let mut mask = vec![false; n * n];
    let (ga, gb) = (grad_angle.cos(), grad_angle.sin());
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let r = ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt();
            let inside = 1.0 - smoothstep(fov - 1.0, fov + 0.5, r);
            if inside <= 0.0 {
                continue;
            }
            let rn = r / fov;
            let shade = (1.0 - 0.35 * rn * rn) * (1.0 + grad_amp * ((fx - cx) * ga + (fy - cy) * gb) / fov);
            let mut rgb = [tint[0] * shade, tint[1] * shade, tint[2] * shade];
            let v = vessel[y * n + x];
            let vessel_rgb = [0.45 * rgb[0], 0.3 * rgb[1], 0.35 * rgb[2]];
            for c in 0..3 {
                rgb[c] += v * (vessel_rgb[c] - rgb[c]);
            }
            let dd = ((fx - dx).powi(2) + (fy - dy).powi(2)).sqrt();
            let od = 1.0 - smoothstep(0.7 * dr, dr, dd);
            let disc_rgb = [0.97, 0.88, 0.62];
            for c in 0..3 {
                rgb[c] += od * (disc_rgb[c] - rgb[c]);
            }
            for (i, &(lx, ly)) in lesions.iter().enumerate() {
                let d = ((fx - lx).powi(2) + (fy - ly).powi(2)).sqrt();
                if d <= lr {
                    mask[y * n + x] = true;
                    let col = if i % 2 == 0 { [1.0, 0.9, 0.45] } else { [0.32, 0.04, 0.04] };
                    let a = 1.0 - 0.3 * smoothstep(0.5 * lr, lr, d);
                    for c in 0..3 {
                        rgb[c] += a * (col[c] - rgb[c]);
                    }
                }
            }
            for c in 0..3 {
                data[(c * n + y) * n + x] = (inside * rgb[c]).clamp(0.0, 1.0);
            }
        }
    }
    Ok(SynthFundus {
        image: ImageTensor::new(3, n, n, data.into_iter().map(T::of).collect())?,
        dr_grade: spec.dr_grade,
        lesion_mask: mask,
        lesion_count: lesions.len(),
    })
}
