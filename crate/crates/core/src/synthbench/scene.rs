//! Procedural textured scenes with exact depth.

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PointCloud, PoseParams};
use crate::sampler::Image;
use crate::Rgb;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TextureProfile {
    Smooth,
    Mixed,
    HighFrequency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SceneGeometry {
    /// Fronto-parallel plane at the scene depth.
    Plane,
    /// Background plane plus an occluding panel covering the left side.
    TwoPlanes,
    /// Camera inside a box: back wall, side walls, floor and ceiling.
    BoxRoom,
}

impl fmt::Display for TextureProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextureProfile::Smooth => "smooth",
            TextureProfile::Mixed => "mixed",
            TextureProfile::HighFrequency => "high_frequency",
        })
    }
}

impl FromStr for TextureProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(Self::Smooth),
            "mixed" => Ok(Self::Mixed),
            "high_frequency" | "high-frequency" => Ok(Self::HighFrequency),
            _ => Err(Error::invalid(format!("unknown texture profile `{s}`"))),
        }
    }
}

impl fmt::Display for SceneGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneGeometry::Plane => "plane",
            SceneGeometry::TwoPlanes => "two_planes",
            SceneGeometry::BoxRoom => "box_room",
        })
    }
}

impl FromStr for SceneGeometry {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(Self::Plane),
            "two_planes" | "two-planes" => Ok(Self::TwoPlanes),
            "box_room" | "box-room" => Ok(Self::BoxRoom),
            _ => Err(Error::invalid(format!("unknown scene geometry `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub texture_profile: TextureProfile,
    pub geometry: SceneGeometry,
    pub image_size: (usize, usize),
    /// Distance to the back surface along the optical axis, in meters.
    pub scene_depth: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            texture_profile: TextureProfile::Mixed,
            geometry: SceneGeometry::BoxRoom,
            image_size: (256, 256),
            scene_depth: 3.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size.0 < 64 || self.image_size.1 < 64 {
            return Err(Error::invalid("scene images must be at least 64x64"));
        }
        if !(self.scene_depth > 0.0 && self.scene_depth.is_finite()) {
            return Err(Error::invalid("scene depth must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub image: Image,
    /// Row-major camera-frame depth of every pixel.
    pub depth: Vec<f64>,
    pub pc: PointCloud,
    pub intrinsics: CameraIntrinsics,
    /// Pose mapping the cloud's frame into the camera frame.
    pub theta_gt: PoseParams,
}

/// Pinhole intrinsics used by the generator: focal length 0.8 width,
/// principal point at the image center.
pub fn scene_intrinsics(width: usize, height: usize) -> CameraIntrinsics {
    let f = 0.8 * width as f64;
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
        width,
        height,
    }
}

/// Depth along the ray `(x, y, 1)` through normalized coordinates.
fn ray_depth(geometry: SceneGeometry, depth: f64, x: f64, y: f64) -> f64 {
    match geometry {
        SceneGeometry::Plane => depth,
        SceneGeometry::TwoPlanes => {
            let near = 0.6 * depth;
            if x * near < -0.08 * depth {
                near
            } else {
                depth
            }
        }
        SceneGeometry::BoxRoom => {
            let half = 0.47 * depth;
            let mut z = depth;
            if x.abs() > 1e-12 {
                z = z.min(half / x.abs());
            }
            if y.abs() > 1e-12 {
                z = z.min(half / y.abs());
            }
            z
        }
    }
}

struct Wave {
    k: Vector3<f64>,
    amp: [f64; 3],
    phase: [f64; 3],
}

struct Blob {
    center: Vector3<f64>,
    inv_r2: f64,
    amp: [f64; 3],
}

struct Texture {
    waves: Vec<Wave>,
    blobs: Vec<Blob>,
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

impl Texture {
    /// Wavelengths and radii are specified in pixels at the back-wall depth.
    fn new(profile: TextureProfile, rng: &mut ChaCha8Rng, meters_per_px: f64, depth: f64) -> Self {
        // (count, min wavelength px, max wavelength px, amplitude)
        let wave_bands: &[(usize, f64, f64, f64)] = match profile {
            TextureProfile::Smooth => &[(5, 40.0, 120.0, 1.0)],
            TextureProfile::Mixed => &[
                (4, 40.0, 120.0, 1.0),
                (4, 10.0, 25.0, 0.5),
                (3, 4.0, 8.0, 0.2),
            ],
            TextureProfile::HighFrequency => &[(3, 40.0, 120.0, 0.5), (6, 3.0, 6.0, 1.0)],
        };
        // (count, min radius px, max radius px, amplitude)
        let blob_band: (usize, f64, f64, f64) = match profile {
            TextureProfile::Smooth => (6, 15.0, 40.0, 1.0),
            TextureProfile::Mixed => (8, 6.0, 25.0, 0.8),
            TextureProfile::HighFrequency => (4, 6.0, 20.0, 0.5),
        };
        let mut waves = Vec::new();
        for &(count, lo, hi, amp) in wave_bands {
            for _ in 0..count {
                let wavelength = rng.random_range(lo..hi) * meters_per_px;
                let k = unit_vector(rng) * (2.0 * PI / wavelength);
                let amp = [0, 1, 2].map(|_| amp * rng.random_range(0.3..1.0));
                let phase = [0, 1, 2].map(|_| rng.random_range(0.0..2.0 * PI));
                waves.push(Wave { k, amp, phase });
            }
        }
        let (count, lo, hi, amp) = blob_band;
        let blobs = (0..count)
            .map(|_| {
                let r = rng.random_range(lo..hi) * meters_per_px;
                let center = Vector3::new(
                    rng.random_range(-0.5..0.5) * depth,
                    rng.random_range(-0.5..0.5) * depth,
                    rng.random_range(0.5..1.0) * depth,
                );
                let amp = [0, 1, 2].map(|_| amp * rng.random_range(-1.0..1.0));
                Blob {
                    center,
                    inv_r2: 1.0 / (r * r),
                    amp,
                }
            })
            .collect();
        Self { waves, blobs }
    }

    fn eval(&self, p: &Vector3<f64>) -> Rgb {
        let mut c = Rgb::zeros();
        for w in &self.waves {
            let arg = w.k.dot(p);
            for ch in 0..3 {
                c[ch] += w.amp[ch] * (arg + w.phase[ch]).sin();
            }
        }
        for b in &self.blobs {
            let g = (-(p - b.center).norm_squared() * b.inv_r2).exp();
            for ch in 0..3 {
                c[ch] += b.amp[ch] * g;
            }
        }
        c
    }
}

/// Renders a textured scene and back-projects every pixel into a colored
/// cloud expressed in a frame offset from the camera by `theta_gt`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (w, h) = spec.image_size;
    let k = scene_intrinsics(w, h);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let meters_per_px = spec.scene_depth / k.fx;
    let texture = Texture::new(spec.texture_profile, &mut rng, meters_per_px, spec.scene_depth);

    let gt_axis = unit_vector(&mut rng);
    let gt_angle = rng.random_range(0.0..10f64.to_radians());
    let gt_t = unit_vector(&mut rng) * rng.random_range(0.0..0.1 * spec.scene_depth);
    let theta_gt = PoseParams::new(gt_axis * gt_angle, gt_t);

    let mut cam_points = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut raw = Vec::with_capacity(w * h);
    for b in 0..h {
        for a in 0..w {
            let x = (a as f64 - k.cx) / k.fx;
            let y = (b as f64 - k.cy) / k.fy;
            let z = ray_depth(spec.geometry, spec.scene_depth, x, y);
            let p = Vector3::new(x * z, y * z, z);
            raw.push(texture.eval(&p));
            cam_points.push(p);
            depth.push(z);
        }
    }

    let mut lo = Rgb::repeat(f64::INFINITY);
    let mut hi = Rgb::repeat(f64::NEG_INFINITY);
    for c in &raw {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let span = (hi - lo).map(|s| if s > 0.0 { s } else { 1.0 });
    let colors: Vec<Rgb> = raw
        .iter()
        .map(|c| (c - lo).component_div(&span).map(|v| v.clamp(0.0, 1.0)))
        .collect();

    let image = Image::new(w, h, colors.clone())?;
    let rt = theta_gt.rotation().transpose();
    let positions = cam_points
        .iter()
        .map(|p| rt * (p - theta_gt.tau))
        .collect();
    let pc = PointCloud::new(positions, colors)?;
    Ok(Scene {
        image,
        depth,
        pc,
        intrinsics: k,
        theta_gt,
    })
}

/// Mean absolute central difference over interior pixels and channels.
pub fn mean_abs_gradient(image: &Image) -> f64 {
    let (ja, jb) = crate::sampler::central_diff_images(image);
    let (w, h) = (image.width(), image.height());
    let mut sum = 0.0;
    let mut n = 0usize;
    for b in 1..h - 1 {
        for a in 1..w - 1 {
            sum += ja.get(a, b).abs().sum() + jb.get(a, b).abs().sum();
            n += 6;
        }
    }
    sum / n as f64
}
