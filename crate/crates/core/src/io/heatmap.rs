//! Color-difference heatmaps and a nearest-pixel point-cloud renderer.

use crate::error::{Error, Result};
use crate::geometry::{project, se3_transform, zbuffer_mask, CameraIntrinsics, PointCloud, PoseParams};
use crate::sampler::Image;
use crate::Rgb;

/// Largest possible color distance in the unit cube.
pub const MAX_DIFFERENCE: f64 = 1.732_050_807_568_877_2;

/// Blue at 0, yellow at 1; `t` is clamped.
pub fn colormap(t: f64) -> Rgb {
    let t = t.clamp(0.0, 1.0);
    Rgb::new(t, t, 1.0 - t)
}

/// Per-pixel L2 color difference mapped through [`colormap`] over `[0, √3]`.
pub fn heatmap(a: &Image, b: &Image) -> Result<Image> {
    heatmap_masked(a, b, None)
}

/// As [`heatmap`], with pixels whose `coverage` flag is unset drawn black.
pub fn heatmap_masked(a: &Image, b: &Image, coverage: Option<&[bool]>) -> Result<Image> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::invalid(format!(
            "heatmap inputs differ in size: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if coverage.is_some_and(|c| c.len() != a.pixels().len()) {
        return Err(Error::invalid("coverage mask does not match the image size"));
    }
    let pixels = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .enumerate()
        .map(|(i, (p, q))| match coverage {
            Some(c) if !c[i] => Rgb::zeros(),
            _ => colormap((p - q).norm() / MAX_DIFFERENCE),
        })
        .collect();
    Image::new(a.width(), a.height(), pixels)
}

/// Splats the cloud into a `k`-sized image at pose `theta`, keeping the
/// nearest point per pixel. Returns the render and its coverage flags.
pub fn render_point_cloud(
    pc: &PointCloud,
    theta: &PoseParams,
    k: &CameraIntrinsics,
) -> Result<(Image, Vec<bool>)> {
    let cam = se3_transform(theta, pc.positions());
    let vis = zbuffer_mask(&cam, k, 0.0);
    let mut pixels = vec![Rgb::zeros(); k.width * k.height];
    let mut covered = vec![false; k.width * k.height];
    for (i, p) in cam.iter().enumerate() {
        if !vis.mask[i] {
            continue;
        }
        if let Some([u, v]) = project(k, p) {
            let bin = v.round() as usize * k.width + u.round() as usize;
            if !covered[bin] {
                covered[bin] = true;
                pixels[bin] = pc.colors()[i];
            }
        }
    }
    Ok((Image::new(k.width, k.height, pixels)?, covered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn identical_images_are_blue() {
        let img = Image::from_fn(4, 3, |a, b| Rgb::new(a as f64 / 3.0, b as f64 / 2.0, 0.1)).unwrap();
        let h = heatmap(&img, &img).unwrap();
        assert!(h.pixels().iter().all(|p| *p == Rgb::new(0.0, 0.0, 1.0)));
    }

    #[test]
    fn extremes_are_yellow() {
        let a = Image::constant(2, 2, Rgb::zeros()).unwrap();
        let b = Image::constant(2, 2, Rgb::repeat(1.0)).unwrap();
        let h = heatmap(&a, &b).unwrap();
        assert!(h.pixels().iter().all(|p| (p - Rgb::new(1.0, 1.0, 0.0)).amax() < 1e-15));
    }

    #[test]
    fn colormap_monotone() {
        let mut prev = colormap(0.0);
        for i in 1..=100 {
            let c = colormap(i as f64 / 100.0);
            assert!(c.x > prev.x && c.y > prev.y && c.z < prev.z);
            prev = c;
        }
    }

    #[test]
    fn size_mismatch_and_coverage() {
        let a = Image::constant(2, 2, Rgb::zeros()).unwrap();
        let b = Image::constant(3, 2, Rgb::zeros()).unwrap();
        assert!(heatmap(&a, &b).is_err());
        let h = heatmap_masked(&a, &a, Some(&[true, false, true, true])).unwrap();
        assert_eq!(h.get(1, 0), Rgb::zeros());
        assert_eq!(h.get(0, 0), Rgb::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn render_keeps_nearest_point() {
        let k = CameraIntrinsics::new(10.0, 10.0, 4.0, 4.0, 9, 9).unwrap();
        let pc = PointCloud::new(
            vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 1.0)],
            vec![Rgb::new(1.0, 0.0, 0.0), Rgb::new(0.0, 1.0, 0.0)],
        )
        .unwrap();
        let (img, cov) = render_point_cloud(&pc, &PoseParams::identity(), &k).unwrap();
        assert_eq!(cov.iter().filter(|&&c| c).count(), 1);
        assert_eq!(img.get(4, 4), Rgb::new(0.0, 1.0, 0.0));
    }
}
