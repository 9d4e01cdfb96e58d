//! Simulated sensor differences: color jitter, gamma, Gaussian blur.
//!
//! Jitter operators follow the usual augmentation conventions: brightness
//! scales, contrast blends with the mean luma, saturation blends with the
//! per-pixel luma, hue rotates the HSV hue by a fraction of the circle.
//! Their order is shuffled per seed.

use crate::sampler::Image;
use crate::Rgb;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_JITTER_STRENGTH: f64 = 0.4;
pub const MAX_HUE_STRENGTH: f64 = 0.06;
pub const MAX_BLUR_SIGMA: f64 = 0.75;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JitterOp {
    Brightness,
    Contrast,
    Saturation,
    Hue,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColorEffectParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue shift as a fraction of the full circle.
    pub hue_shift: f64,
    pub order: [JitterOp; 4],
    pub gamma: f64,
    pub blur_sigma: f64,
}

impl ColorEffectParams {
    pub fn identity() -> Self {
        Self {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue_shift: 0.0,
            order: [
                JitterOp::Brightness,
                JitterOp::Contrast,
                JitterOp::Saturation,
                JitterOp::Hue,
            ],
            gamma: 1.0,
            blur_sigma: 0.0,
        }
    }

    /// Draws strengths uniformly in `[0, 0.4]` (jitter) and `[0, 0.06]`
    /// (hue), then factors uniformly within `1 ± strength`; gamma from
    /// `[0.5, 1]` or `[1, 2]` on a coin flip; blur sigma from `[0, 0.75]`.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factor = |rng: &mut ChaCha8Rng| {
            let s = rng.random_range(0.0..=MAX_JITTER_STRENGTH);
            rng.random_range((1.0 - s)..=(1.0 + s))
        };
        let brightness = factor(&mut rng);
        let contrast = factor(&mut rng);
        let saturation = factor(&mut rng);
        let h = rng.random_range(0.0..=MAX_HUE_STRENGTH);
        let hue_shift = rng.random_range(-h..=h);
        let mut order = Self::identity().order;
        order.shuffle(&mut rng);
        let gamma = if rng.random_bool(0.5) {
            rng.random_range(0.5..=1.0)
        } else {
            rng.random_range(1.0..=2.0)
        };
        let blur_sigma = rng.random_range(0.0..=MAX_BLUR_SIGMA);
        Self {
            brightness,
            contrast,
            saturation,
            hue_shift,
            order,
            gamma,
            blur_sigma,
        }
    }
}

fn luma(c: &Rgb) -> f64 {
    0.299 * c.x + 0.587 * c.y + 0.114 * c.z
}

fn clip(c: Rgb) -> Rgb {
    c.map(|v| v.clamp(0.0, 1.0))
}

fn rgb_to_hsv(c: &Rgb) -> (f64, f64, f64) {
    let max = c.max();
    let min = c.min();
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == c.x {
        ((c.y - c.z) / delta).rem_euclid(6.0) / 6.0
    } else if max == c.y {
        ((c.z - c.x) / delta + 2.0) / 6.0
    } else {
        ((c.x - c.y) / delta + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 % 6 {
        0 => Rgb::new(v, t, p),
        1 => Rgb::new(q, v, p),
        2 => Rgb::new(p, v, t),
        3 => Rgb::new(p, q, v),
        4 => Rgb::new(t, p, v),
        _ => Rgb::new(v, p, q),
    }
}

fn apply_jitter(pixels: &mut [Rgb], op: JitterOp, p: &ColorEffectParams) {
    match op {
        JitterOp::Brightness => {
            for c in pixels.iter_mut() {
                *c = clip(*c * p.brightness);
            }
        }
        JitterOp::Contrast => {
            let mean = pixels.iter().map(luma).sum::<f64>() / pixels.len() as f64;
            for c in pixels.iter_mut() {
                *c = clip(*c * p.contrast + Rgb::repeat(mean * (1.0 - p.contrast)));
            }
        }
        JitterOp::Saturation => {
            for c in pixels.iter_mut() {
                let g = luma(c);
                *c = clip(*c * p.saturation + Rgb::repeat(g * (1.0 - p.saturation)));
            }
        }
        JitterOp::Hue => {
            if p.hue_shift == 0.0 {
                return;
            }
            for c in pixels.iter_mut() {
                let (h, s, v) = rgb_to_hsv(c);
                *c = clip(hsv_to_rgb(h + p.hue_shift, s, v));
            }
        }
    }
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with replicate borders.
pub fn gaussian_blur(pixels: &[Rgb], width: usize, height: usize, sigma: f64) -> Vec<Rgb> {
    let kernel = gaussian_kernel(sigma);
    if kernel.len() == 1 {
        return pixels.to_vec();
    }
    let r = (kernel.len() / 2) as i64;
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![Rgb::zeros(); pixels.len()];
    for b in 0..height {
        for a in 0..width {
            let mut acc = Rgb::zeros();
            for (t, kv) in kernel.iter().enumerate() {
                let aa = clamp(a as i64 + t as i64 - r, width);
                acc += pixels[b * width + aa] * *kv;
            }
            tmp[b * width + a] = acc;
        }
    }
    let mut out = vec![Rgb::zeros(); pixels.len()];
    for b in 0..height {
        for a in 0..width {
            let mut acc = Rgb::zeros();
            for (t, kv) in kernel.iter().enumerate() {
                let bb = clamp(b as i64 + t as i64 - r, height);
                acc += tmp[bb * width + a] * *kv;
            }
            out[b * width + a] = acc;
        }
    }
    out
}

pub fn apply_color_effect_params(image: &Image, params: &ColorEffectParams) -> Image {
    let mut px = image.pixels().to_vec();
    for op in params.order {
        apply_jitter(&mut px, op, params);
    }
    if params.gamma != 1.0 {
        for c in px.iter_mut() {
            *c = clip(c.map(|v| v.powf(params.gamma)));
        }
    }
    let px = gaussian_blur(&px, image.width(), image.height(), params.blur_sigma);
    Image::new(
        image.width(),
        image.height(),
        px.into_iter().map(clip).collect(),
    )
    .expect("effects preserve image shape and range")
}

/// Jitter, gamma and blur with parameters drawn from `seed`.
pub fn apply_color_effects(image: &Image, seed: u64) -> Image {
    apply_color_effect_params(image, &ColorEffectParams::sample(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image() -> Image {
        Image::from_fn(16, 12, |a, b| {
            Rgb::new(a as f64 / 15.0, b as f64 / 11.0, ((a * b) % 7) as f64 / 6.0)
        })
        .unwrap()
    }

    #[test]
    fn identity_params_are_identity() {
        let img = test_image();
        assert_eq!(apply_color_effect_params(&img, &ColorEffectParams::identity()), img);
    }

    #[test]
    fn gamma_two_squares_mid_grey() {
        let img = Image::constant(8, 8, Rgb::repeat(0.5)).unwrap();
        let p = ColorEffectParams {
            gamma: 2.0,
            ..ColorEffectParams::identity()
        };
        let out = apply_color_effect_params(&img, &p);
        assert!(out.pixels().iter().all(|c| (c - Rgb::repeat(0.25)).amax() < 1e-15));
    }

    #[test]
    fn blur_preserves_mass_of_delta() {
        for &sigma in &[0.2, 0.5, 0.75] {
            let (w, h) = (21, 21);
            let mut px = vec![Rgb::zeros(); w * h];
            px[10 * w + 10] = Rgb::new(1.0, 0.5, 0.25);
            let out = gaussian_blur(&px, w, h, sigma);
            let mass: Rgb = out.iter().sum();
            assert!((mass - Rgb::new(1.0, 0.5, 0.25)).amax() < 1e-6);
            assert!(out[10 * w + 10].x < 1.0);
        }
        let k = gaussian_kernel(0.75);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sampled_params_respect_ranges() {
        for seed in 0..500 {
            let p = ColorEffectParams::sample(seed);
            for f in [p.brightness, p.contrast, p.saturation] {
                assert!((0.6..=1.4).contains(&f));
            }
            assert!(p.hue_shift.abs() <= MAX_HUE_STRENGTH);
            assert!((0.5..=2.0).contains(&p.gamma));
            assert!((0.0..=MAX_BLUR_SIGMA).contains(&p.blur_sigma));
            for op in ColorEffectParams::identity().order {
                assert_eq!(p.order.iter().filter(|&&o| o == op).count(), 1);
            }
        }
        assert_eq!(ColorEffectParams::sample(9), ColorEffectParams::sample(9));
    }

    #[test]
    fn hsv_round_trip() {
        let img = test_image();
        for c in img.pixels() {
            let (h, s, v) = rgb_to_hsv(c);
            assert!((hsv_to_rgb(h, s, v) - c).amax() < 1e-12);
        }
    }

    #[test]
    fn effects_stay_in_range() {
        let img = test_image();
        for seed in 0..50 {
            let out = apply_color_effects(&img, seed);
            assert!(out.pixels().iter().all(|c| c.iter().all(|v| (0.0..=1.0).contains(v))));
        }
    }
}
