use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};
use crate::seeding::{rng_for, Stream};

/// Parameters of a synthetic domain shift. The all-zero value (with an empty
/// palette) is the identity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftConfig {
    /// Hue rotation as a fraction of a full turn.
    pub hue_shift: f64,
    pub noise_std: f64,
    /// Gaussian blur sigma in pixels.
    pub blur_radius: f64,
    /// Replacement background colors; empty keeps the generator default.
    pub background_palette: Vec<[f64; 3]>,
    /// Relative jitter applied to object sizes.
    pub scale_jitter: f64,
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.hue_shift, self.noise_std, self.blur_radius, self.scale_jitter]
            .iter()
            .all(|v| v.is_finite())
            && self.background_palette.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("shift parameters must be finite".into()));
        }
        if self.noise_std < 0.0 || self.blur_radius < 0.0 || self.scale_jitter < 0.0 {
            return Err(Error::Config(
                "noise_std, blur_radius and scale_jitter must be >= 0".into(),
            ));
        }
        if self.scale_jitter >= 1.0 {
            return Err(Error::Config("scale_jitter must be < 1".into()));
        }
        if self
            .background_palette
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::Config("palette colors must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.hue_shift == 0.0
            && self.noise_std == 0.0
            && self.blur_radius == 0.0
            && self.scale_jitter == 0.0
            && self.background_palette.is_empty()
    }
}

/// Applies the pixel-level part of a shift: hue rotation, Gaussian blur, then
/// additive Gaussian noise. Output is clamped to `[0, 1]`; each stage with a
/// zero parameter is skipped, so the zero shift returns the input unchanged.
pub fn apply_domain_shift(image: &Image, shift: &ShiftConfig, seed: u64) -> Image {
    let mut out = image.clone();
    if shift.hue_shift != 0.0 {
        rotate_hue(&mut out, shift.hue_shift);
    }
    if shift.blur_radius > 0.0 {
        out = gaussian_blur(&out, shift.blur_radius);
    }
    if shift.noise_std > 0.0 {
        let mut rng = rng_for(seed, Stream::Shift, 0);
        let normal = Normal::new(0.0, shift.noise_std).expect("validated noise std");
        for v in out.data.iter_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    out
}

fn rotate_hue(image: &mut Image, turn: f64) {
    for px in image.data.chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
        let h = (h + turn).rem_euclid(1.0);
        let (r, g, b) = hsv_to_rgb(h, s, v);
        px[0] = r.clamp(0.0, 1.0);
        px[1] = g.clamp(0.0, 1.0);
        px[2] = b.clamp(0.0, 1.0);
    }
}

pub(crate) fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Separable Gaussian blur with reflected borders.
fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (h, w) = (image.height as isize, image.width as isize);
    let reflect = |i: isize, n: isize| -> usize {
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0; image.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let xx = reflect(x + k as isize - radius, w);
                    acc += kv * image.data[(y as usize * w as usize + xx) * 3 + c];
                }
                tmp[(y as usize * w as usize + x as usize) * 3 + c] = acc;
            }
        }
    }
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let yy = reflect(y + k as isize - radius, h);
                    acc += kv * tmp[(yy * w as usize + x as usize) * 3 + c];
                }
                out.data[(y as usize * w as usize + x as usize) * 3 + c] = acc.clamp(0.0, 1.0);
            }
        }
    }
    out
}
