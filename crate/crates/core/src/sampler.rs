//! Bilinear color sampling and sub-pixel image gradients.
//!
//! Two gradient strategies are provided:
//!
//! - [`GradientStrategy::A`] differentiates the bilinear interpolant itself,
//!   giving the exact derivative of [`bilinear_sample`] inside each cell.
//! - [`GradientStrategy::B`] bilinearly interpolates precomputed
//!   central-difference images, as most direct odometry code does. It equals
//!   strategy A smoothed by a width-2 box window, so it loses high-frequency
//!   detail.
//!
//! At exact integer coordinates strategy A uses the forward cell.

use crate::error::{Error, Result};
use crate::Rgb;

/// RGB image with values in `[0, 1]`, row-major, `J(a, b)` with `a` the column.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

/// Same layout as [`Image`] but holding signed values (gradient images).
#[derive(Clone, Debug, PartialEq)]
pub struct SignedField {
    width: usize,
    height: usize,
    values: Vec<Rgb>,
}

/// Read access shared by images and signed fields.
pub trait Grid {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn at(&self, a: usize, b: usize) -> Rgb;
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image must not be empty, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(i) = pixels
            .iter()
            .position(|p| !p.iter().all(|x| (0.0..=1.0).contains(x)))
        {
            return Err(Error::invalid(format!(
                "pixel ({}, {}) outside [0, 1]",
                i % width,
                i / width
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from `f(a, b)`, clamping each value into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for b in 0..height {
            for a in 0..width {
                let p = f(a, b);
                if !p.iter().all(|x| x.is_finite()) {
                    return Err(Error::invalid(format!("pixel ({a}, {b}) not finite")));
                }
                pixels.push(p.map(|x| x.clamp(0.0, 1.0)));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn constant(width: usize, height: usize, color: Rgb) -> Result<Self> {
        Self::new(width, height, vec![color; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, a: usize, b: usize) -> Rgb {
        self.pixels[b * self.width + a]
    }
}

impl Grid for Image {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn at(&self, a: usize, b: usize) -> Rgb {
        self.pixels[b * self.width + a]
    }
}

impl SignedField {
    pub fn values(&self) -> &[Rgb] {
        &self.values
    }

    pub fn get(&self, a: usize, b: usize) -> Rgb {
        self.values[b * self.width + a]
    }
}

impl Grid for SignedField {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn at(&self, a: usize, b: usize) -> Rgb {
        self.values[b * self.width + a]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GradientStrategy {
    /// Differentiate the bilinear interpolant.
    A,
    /// Interpolate central-difference images.
    B,
}

/// Sampled color with its sub-pixel gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubpixelSample {
    pub color: Rgb,
    pub grad_u: Rgb,
    pub grad_v: Rgb,
    pub strategy: GradientStrategy,
}

fn domain<G: Grid>(g: &G, u: f64, v: f64) -> Error {
    Error::Domain {
        u,
        v,
        width: g.width(),
        height: g.height(),
    }
}

/// Cell index and fractional offset. The last knot maps to the previous
/// cell with offset 1 so that bilinear sampling covers the closed range.
fn cell(x: f64, len: usize) -> (usize, f64) {
    let j = (x.floor() as usize).min(len - 2);
    (j, x - j as f64)
}

fn bilinear_grid<G: Grid>(g: &G, u: f64, v: f64) -> Result<Rgb> {
    let (w, h) = (g.width(), g.height());
    if w < 2 || h < 2 || !(u >= 0.0 && u <= (w - 1) as f64 && v >= 0.0 && v <= (h - 1) as f64) {
        return Err(domain(g, u, v));
    }
    let (j, du) = cell(u, w);
    let (k, dv) = cell(v, h);
    let top = g.at(j, k) * (1.0 - du) + g.at(j + 1, k) * du;
    let bottom = g.at(j, k + 1) * (1.0 - du) + g.at(j + 1, k + 1) * du;
    Ok(top * (1.0 - dv) + bottom * dv)
}

/// Bilinear interpolation on `[0, w-1] x [0, h-1]`.
pub fn bilinear_sample(img: &Image, u: f64, v: f64) -> Result<Rgb> {
    bilinear_grid(img, u, v)
}

/// Exact derivative of the bilinear interpolant (strategy A).
///
/// Requires `0 <= u < w-1` and `0 <= v < h-1` so the forward cell exists.
pub fn grad_strategy_a(img: &Image, u: f64, v: f64) -> Result<(Rgb, Rgb)> {
    let (w, h) = (img.width, img.height);
    if !(u >= 0.0 && u < (w - 1) as f64 && v >= 0.0 && v < (h - 1) as f64) {
        return Err(domain(img, u, v));
    }
    let (j, k) = (u.floor() as usize, v.floor() as usize);
    let (du, dv) = (u - j as f64, v - k as f64);
    let p00 = img.at(j, k);
    let p10 = img.at(j + 1, k);
    let p01 = img.at(j, k + 1);
    let p11 = img.at(j + 1, k + 1);
    let grad_u = (p10 - p00) * (1.0 - dv) + (p11 - p01) * dv;
    let grad_v = (p01 - p00) * (1.0 - du) + (p11 - p10) * du;
    Ok((grad_u, grad_v))
}

/// Central differences at a pixel with replicate padding at the borders.
fn central_diff_at(img: &Image, a: usize, b: usize) -> (Rgb, Rgb) {
    let (w, h) = (img.width, img.height);
    let left = img.at(a.saturating_sub(1), b);
    let right = img.at((a + 1).min(w - 1), b);
    let up = img.at(a, b.saturating_sub(1));
    let down = img.at(a, (b + 1).min(h - 1));
    ((right - left) * 0.5, (down - up) * 0.5)
}

/// Horizontal and vertical central-difference images, replicate-padded.
pub fn central_diff_images(img: &Image) -> (SignedField, SignedField) {
    let (w, h) = (img.width, img.height);
    let mut ja = Vec::with_capacity(w * h);
    let mut jb = Vec::with_capacity(w * h);
    for b in 0..h {
        for a in 0..w {
            let (da, db) = central_diff_at(img, a, b);
            ja.push(da);
            jb.push(db);
        }
    }
    (
        SignedField {
            width: w,
            height: h,
            values: ja,
        },
        SignedField {
            width: w,
            height: h,
            values: jb,
        },
    )
}

fn check_b_domain(img: &Image, u: f64, v: f64) -> Result<()> {
    let (w, h) = (img.width as f64, img.height as f64);
    if u >= 1.0 && u <= w - 2.0 && v >= 1.0 && v <= h - 2.0 {
        Ok(())
    } else {
        Err(domain(img, u, v))
    }
}

/// Bilinear interpolation of central-difference images (strategy B).
///
/// Requires `1 <= u <= w-2` and `1 <= v <= h-2`.
pub fn grad_strategy_b(img: &Image, u: f64, v: f64) -> Result<(Rgb, Rgb)> {
    check_b_domain(img, u, v)?;
    let (j, du) = cell(u, img.width);
    let (k, dv) = cell(v, img.height);
    let d00 = central_diff_at(img, j, k);
    let d10 = central_diff_at(img, j + 1, k);
    let d01 = central_diff_at(img, j, k + 1);
    let d11 = central_diff_at(img, j + 1, k + 1);
    let blend = |a: Rgb, b: Rgb, c: Rgb, d: Rgb| {
        (a * (1.0 - du) + b * du) * (1.0 - dv) + (c * (1.0 - du) + d * du) * dv
    };
    Ok((
        blend(d00.0, d10.0, d01.0, d11.0),
        blend(d00.1, d10.1, d01.1, d11.1),
    ))
}

pub fn subpixel_sample(
    img: &Image,
    u: f64,
    v: f64,
    strategy: GradientStrategy,
) -> Result<SubpixelSample> {
    let color = bilinear_sample(img, u, v)?;
    let (grad_u, grad_v) = match strategy {
        GradientStrategy::A => grad_strategy_a(img, u, v)?,
        GradientStrategy::B => grad_strategy_b(img, u, v)?,
    };
    Ok(SubpixelSample {
        color,
        grad_u,
        grad_v,
        strategy,
    })
}

/// An image with its central-difference images cached, for repeated
/// sampling at many points.
#[derive(Clone, Debug)]
pub struct Sampler<'a> {
    image: &'a Image,
    diffs: Option<(SignedField, SignedField)>,
}

impl<'a> Sampler<'a> {
    pub fn new(image: &'a Image, strategy: GradientStrategy) -> Self {
        let diffs = match strategy {
            GradientStrategy::A => None,
            GradientStrategy::B => Some(central_diff_images(image)),
        };
        Self { image, diffs }
    }

    pub fn image(&self) -> &Image {
        self.image
    }

    pub fn strategy(&self) -> GradientStrategy {
        if self.diffs.is_some() {
            GradientStrategy::B
        } else {
            GradientStrategy::A
        }
    }

    pub fn sample(&self, u: f64, v: f64) -> Result<SubpixelSample> {
        let img = self.image;
        let (w, h) = (img.width, img.height);
        let inside = match self.diffs {
            None => u >= 0.0 && u < (w - 1) as f64 && v >= 0.0 && v < (h - 1) as f64,
            Some(_) => u >= 1.0 && u <= w as f64 - 2.0 && v >= 1.0 && v <= h as f64 - 2.0,
        };
        if w < 2 || h < 2 || !inside {
            return Err(domain(img, u, v));
        }
        let (j, du) = cell(u, w);
        let (k, dv) = cell(v, h);
        let i00 = k * w + j;
        let i01 = i00 + w;
        let px = &img.pixels;
        let (p00, p10, p01, p11) = (px[i00], px[i00 + 1], px[i01], px[i01 + 1]);
        let top = p00 * (1.0 - du) + p10 * du;
        let bottom = p01 * (1.0 - du) + p11 * du;
        let color = top * (1.0 - dv) + bottom * dv;
        let (grad_u, grad_v) = match &self.diffs {
            None => (
                (p10 - p00) * (1.0 - dv) + (p11 - p01) * dv,
                (p01 - p00) * (1.0 - du) + (p11 - p10) * du,
            ),
            Some((ja, jb)) => {
                let blend = |f: &[Rgb]| {
                    let t = f[i00] * (1.0 - du) + f[i00 + 1] * du;
                    let b = f[i01] * (1.0 - du) + f[i01 + 1] * du;
                    t * (1.0 - dv) + b * dv
                };
                (blend(&ja.values), blend(&jb.values))
            }
        };
        Ok(SubpixelSample {
            color,
            grad_u,
            grad_v,
            strategy: self.strategy(),
        })
    }
}

/// One-dimensional counterparts on a scalar sequence `h`, used to check the
/// strategy equivalence on lines.
pub mod line {
    /// Linear interpolation on `[0, len-1]`.
    pub fn interpolate(h: &[f64], x: f64) -> f64 {
        let j = (x.floor() as usize).min(h.len() - 2);
        let d = x - j as f64;
        (1.0 - d) * h[j] + d * h[j + 1]
    }

    /// Forward difference of the cell containing `x` (strategy A).
    pub fn grad_a(h: &[f64], x: f64) -> f64 {
        let j = x.floor() as usize;
        h[j + 1] - h[j]
    }

    /// Central differences; replicate padding at both ends.
    pub fn central_diff(h: &[f64]) -> Vec<f64> {
        let n = h.len();
        (0..n)
            .map(|a| (h[(a + 1).min(n - 1)] - h[a.saturating_sub(1)]) * 0.5)
            .collect()
    }

    /// Linear interpolation of the central differences (strategy B).
    pub fn grad_b(h: &[f64], x: f64) -> f64 {
        interpolate(&central_diff(h), x)
    }

    /// Closed-form expansion `((1-d) Δh_{j-1} + Δh_j + d Δh_{j+1}) / 2`
    /// for interior `x`, `1 <= floor(x) <= len-3`.
    pub fn grad_b_expanded(h: &[f64], x: f64) -> f64 {
        let j = x.floor() as usize;
        let d = x - j as f64;
        let dh = |i: usize| h[i + 1] - h[i];
        ((1.0 - d) * dh(j - 1) + dh(j) + d * dh(j + 1)) * 0.5
    }
}
