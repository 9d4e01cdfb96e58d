//! Rigid pose parameters, pinhole projection and Z-buffer visibility.
//!
//! A pose maps point-cloud (world) coordinates into the camera frame:
//! `p_cam = R(omega) * x + tau`, with `R` the Rodrigues exponential of the
//! axis-angle vector `omega`. Pixel centers sit at integer coordinates, `u`
//! indexes columns and `v` indexes rows.

use crate::error::{Error, Result};
use crate::Rgb;
use nalgebra::{Matrix2x3, Matrix3, Matrix4, SMatrix, Vector3, Vector6};
use rayon::prelude::*;
use std::f64::consts::PI;

pub type Matrix3x6 = SMatrix<f64, 3, 6>;

/// Axis-angle rotation plus translation: the six optimized parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseParams {
    pub omega: Vector3<f64>,
    pub tau: Vector3<f64>,
}

impl Default for PoseParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseParams {
    pub fn identity() -> Self {
        Self {
            omega: Vector3::zeros(),
            tau: Vector3::zeros(),
        }
    }

    /// Builds a pose and brings `omega` into the canonical range `|omega| <= pi`.
    pub fn new(omega: Vector3<f64>, tau: Vector3<f64>) -> Self {
        let mut p = Self { omega, tau };
        p.canonicalize();
        p
    }

    /// Order: `[omega_x, omega_y, omega_z, tau_x, tau_y, tau_z]`.
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.tau.x,
            self.tau.y,
            self.tau.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(self.tau.iter()).all(|x| x.is_finite())
    }

    /// Wraps the rotation angle into `[0, pi]`, flipping the axis when needed.
    pub fn canonicalize(&mut self) {
        let angle = self.omega.norm();
        if !angle.is_finite() || angle <= PI {
            return;
        }
        let axis = self.omega / angle;
        let mut wrapped = angle % (2.0 * PI);
        if wrapped > PI {
            wrapped -= 2.0 * PI;
        }
        self.omega = axis * wrapped;
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rodrigues(&self.omega)
    }

    /// Homogeneous 4x4 camera-from-world matrix.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.tau);
        m
    }

    /// Inverse of the rotation matrix exponential: recovers `omega` from `R`.
    pub fn from_rotation_translation(r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        Self::new(rotation_log(r), *t)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        Self::new(-self.omega, -(rt * self.tau))
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &PoseParams) -> Self {
        let r = self.rotation();
        let rot = r * other.rotation();
        Self::from_rotation_translation(&rot, &(r * other.tau + self.tau))
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * x + self.tau
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `sin(t)/t`, `(1-cos t)/t^2`, `(t - sin t)/t^3` with series near zero.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (
            s / theta,
            (1.0 - c) / (theta * theta),
            (theta - s) / (theta * theta * theta),
        )
    }
}

/// Rodrigues exponential `R = I + a [w]x + b [w]x^2`.
pub fn rodrigues(omega: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b, _) = rodrigues_coefficients(omega.norm());
    let k = skew(omega);
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3): `Exp(w + d) ≈ Exp(J_l(w) d) Exp(w)`.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let (_, b, c) = rodrigues_coefficients(omega.norm());
    let k = skew(omega);
    Matrix3::identity() + k * b + k * k * c
}

/// Logarithm of a rotation matrix, angle in `[0, pi]`.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if angle < 1e-6 {
        // sin(t)/t ≈ 1 - t^2/6
        return w * 0.5 * (1.0 + angle * angle / 6.0);
    }
    if PI - angle > 1e-5 {
        return w * (angle / (2.0 * angle.sin()));
    }
    // Near pi the antisymmetric part vanishes; read the axis off R + I.
    let b = (r + Matrix3::identity()) * 0.5;
    let diag = Vector3::new(b[(0, 0)], b[(1, 1)], b[(2, 2)]);
    let i = diag.imax();
    let mut axis = b.column(i).into_owned() / diag[i].max(0.0).sqrt();
    axis.normalize_mut();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// `R(omega) x + tau` for every point.
pub fn se3_transform(theta: &PoseParams, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let r = theta.rotation();
    let t = theta.tau;
    points.par_iter().map(|x| r * x + t).collect()
}

/// Derivative of `R(omega) x + tau` with respect to `[omega, tau]`.
///
/// The rotation block is `-[R x]x J_l(omega)`, which reduces to `-[x]x` at
/// the identity.
pub fn pose_point_jacobian(theta: &PoseParams, x: &Vector3<f64>) -> Matrix3x6 {
    let rx = theta.rotation() * x;
    let mut jac = Matrix3x6::zeros();
    jac.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-skew(&rx) * so3_left_jacobian(&theta.omega)));
    jac.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&Matrix3::identity());
    jac
}

/// Pinhole intrinsics in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0) {
            return Err(Error::invalid(format!("fx must be positive, got {}", self.fx)));
        }
        if !(self.fy.is_finite() && self.fy > 0.0) {
            return Err(Error::invalid(format!("fy must be positive, got {}", self.fy)));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid(format!(
                "cx = {} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(format!(
                "cy = {} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }
}

/// Pinhole projection. Returns `None` for points at or behind the camera.
pub fn project(k: &CameraIntrinsics, p: &Vector3<f64>) -> Option<[f64; 2]> {
    if !(p.z > 0.0) {
        return None;
    }
    Some([k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy])
}

/// `d(u, v) / d(x, y, z)` of the pinhole model.
pub fn projection_jacobian(k: &CameraIntrinsics, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz2,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz2,
    )
}

/// Colored point cloud: positions in scene units, colors in `[0, 1]^3`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vector3<f64>>,
    colors: Vec<Rgb>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vector3<f64>>, colors: Vec<Rgb>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if positions.len() != colors.len() {
            return Err(Error::invalid(format!(
                "{} positions but {} colors",
                positions.len(),
                colors.len()
            )));
        }
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::invalid(format!("position {i} is not finite")));
        }
        if let Some(i) = colors
            .iter()
            .position(|c| !c.iter().all(|x| (0.0..=1.0).contains(x)))
        {
            return Err(Error::invalid(format!("color {i} outside [0, 1]")));
        }
        Ok(Self { positions, colors })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }
}

/// Result of Z-buffer masking.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityMask {
    pub mask: Vec<bool>,
    /// Row-major nearest depth per pixel, `+inf` where nothing landed.
    pub depth_buffer: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl VisibilityMask {
    pub fn visible_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// Projects into the sampling margin `[1, w-2] x [1, h-2]`, or `None`.
fn project_in_margin(k: &CameraIntrinsics, p: &Vector3<f64>) -> Option<[f64; 2]> {
    let [u, v] = project(k, p)?;
    let umax = k.width as f64 - 2.0;
    let vmax = k.height as f64 - 2.0;
    (u >= 1.0 && u <= umax && v >= 1.0 && v <= vmax).then_some([u, v])
}

/// Nearest-pixel Z-buffer. A point survives when it lies in front of the
/// camera, projects inside the one-pixel sampling margin, and its depth is
/// within `depth_eps` of the nearest depth binned to the same pixel.
pub fn zbuffer_mask(
    points_cam: &[Vector3<f64>],
    k: &CameraIntrinsics,
    depth_eps: f64,
) -> VisibilityMask {
    let (w, h) = (k.width, k.height);
    let bins: Vec<Option<usize>> = points_cam
        .par_iter()
        .map(|p| {
            project_in_margin(k, p).map(|[u, v]| {
                let a = u.round() as usize;
                let b = v.round() as usize;
                b * w + a
            })
        })
        .collect();

    let mut depth_buffer = vec![f64::INFINITY; w * h];
    for (p, bin) in points_cam.iter().zip(&bins) {
        if let Some(b) = *bin {
            if p.z < depth_buffer[b] {
                depth_buffer[b] = p.z;
            }
        }
    }
    let mask = points_cam
        .iter()
        .zip(&bins)
        .map(|(p, bin)| match *bin {
            Some(b) => p.z <= depth_buffer[b] + depth_eps,
            None => false,
        })
        .collect();
    VisibilityMask {
        mask,
        depth_buffer,
        width: w,
        height: h,
    }
}

/// Median of the positive camera-frame depths, or `None` if there are none.
pub fn median_depth(points_cam: &[Vector3<f64>]) -> Option<f64> {
    let mut z: Vec<f64> = points_cam
        .iter()
        .map(|p| p.z)
        .filter(|z| *z > 0.0 && z.is_finite())
        .collect();
    if z.is_empty() {
        return None;
    }
    let mid = z.len() / 2;
    let (_, m, _) = z.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

/// Default Z-buffer tolerance: 1% of the median scene depth.
pub fn default_depth_eps(points_cam: &[Vector3<f64>]) -> f64 {
    median_depth(points_cam).map_or(1e-3, |d| 0.01 * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> PoseParams {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.random_range(0.0..3.0);
        PoseParams::new(
            axis * angle,
            Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ),
        )
    }

    fn random_point(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        )
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn identity_pose_leaves_points_unchanged() {
        let pts = vec![Vector3::new(1.0, -2.0, 3.5), Vector3::new(0.0, 0.0, 0.0)];
        assert_eq!(se3_transform(&PoseParams::identity(), &pts), pts);
    }

    #[test]
    fn quarter_turn_about_z() {
        let theta = PoseParams::new(Vector3::new(0.0, 0.0, PI / 2.0), Vector3::zeros());
        let out = se3_transform(&theta, &[Vector3::new(1.0, 0.0, 0.0)]);
        assert!((out[0] - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn transform_matches_homogeneous_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let theta = random_pose(&mut rng);
            let x = random_point(&mut rng);
            // Independent exponential map from nalgebra.
            let r = Rotation3::new(theta.omega).into_inner();
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&theta.tau);
            let h = m * Vector4::new(x.x, x.y, x.z, 1.0);
            let got = se3_transform(&theta, &[x])[0];
            assert!((got - h.xyz()).norm() < 1e-12);
        }
    }

    #[test]
    fn canonicalization_wraps_large_angles() {
        let p = PoseParams::new(Vector3::new(0.0, 0.0, 1.5 * PI), Vector3::zeros());
        assert!((p.omega - Vector3::new(0.0, 0.0, -0.5 * PI)).norm() < 1e-12);
        let q = PoseParams::new(Vector3::new(0.0, 0.0, 2.0 * PI + 0.25), Vector3::zeros());
        assert!((q.omega.z - 0.25).abs() < 1e-12);
        assert!((p.rotation() - rodrigues(&Vector3::new(0.0, 0.0, 1.5 * PI))).norm() < 1e-12);
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let theta = random_pose(&mut rng);
            let back = rotation_log(&theta.rotation());
            assert!((back - theta.omega).norm() < 1e-9, "{back} vs {}", theta.omega);
        }
        let near_pi = Vector3::new(0.3, -0.4, 0.5).normalize() * (PI - 1e-7);
        assert!((rotation_log(&rodrigues(&near_pi)) - near_pi).norm() < 1e-6);
    }

    #[test]
    fn projection_examples() {
        let unit = CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 10,
            height: 10,
        };
        assert_eq!(project(&unit, &Vector3::new(0.0, 0.0, 1.0)), Some([0.0, 0.0]));
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let [u, v] = project(&k, &Vector3::new(0.2, -0.1, 2.0)).unwrap();
        assert!((u - 370.0).abs() < 1e-12 && (v - 215.0).abs() < 1e-12);
        let a = project(&k, &Vector3::new(0.3, 0.7, 1.3)).unwrap();
        let b = project(&k, &Vector3::new(0.6, 1.4, 2.6)).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        assert_eq!(project(&k, &Vector3::new(0.0, 0.0, 0.0)), None);
        assert_eq!(project(&k, &Vector3::new(0.0, 0.0, -1.0)), None);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 3.99, 4, 4).is_ok());
    }

    #[test]
    fn projection_jacobian_on_axis() {
        let unit = CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 2,
            height: 2,
        };
        let j = projection_jacobian(&unit, &Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(j, Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn projection_jacobian_depth_scaling() {
        let k = CameraIntrinsics::new(400.0, 380.0, 100.0, 80.0, 200, 160).unwrap();
        // Same x/z and y/z ratios, doubled depth: z column shrinks by 4 in absolute
        // terms relative to x,y scaled with depth.
        let p = Vector3::new(0.4, -0.2, 1.0);
        let j1 = projection_jacobian(&k, &p);
        let j2 = projection_jacobian(&k, &(p * 2.0));
        // -f x / z^2 with (2x, 2z) is half; with x fixed and z doubled it is a quarter.
        let j3 = projection_jacobian(&k, &Vector3::new(p.x, p.y, 2.0 * p.z));
        assert!((j3[(0, 2)] - j1[(0, 2)] / 4.0).abs() < 1e-12);
        assert!((j3[(1, 2)] - j1[(1, 2)] / 4.0).abs() < 1e-12);
        assert!((j2[(0, 2)] - j1[(0, 2)] / 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = CameraIntrinsics::new(520.0, 515.0, 319.5, 239.5, 640, 480).unwrap();
        let h = 1e-6;
        for _ in 0..1000 {
            let p = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..5.0),
            );
            let j = projection_jacobian(&k, &p);
            for c in 0..3 {
                let mut dp = Vector3::zeros();
                dp[c] = h;
                let plus = project(&k, &(p + dp)).unwrap();
                let minus = project(&k, &(p - dp)).unwrap();
                for r in 0..2 {
                    let fd = (plus[r] - minus[r]) / (2.0 * h);
                    assert!(rel_err(j[(r, c)], fd) < 1e-5, "{} vs {fd}", j[(r, c)]);
                }
            }
        }
    }

    #[test]
    fn pose_jacobian_structure_and_small_angle_limit() {
        let x = Vector3::new(0.3, -1.2, 2.0);
        let j = pose_point_jacobian(&PoseParams::identity(), &x);
        let rot = j.fixed_view::<3, 3>(0, 0).into_owned();
        assert!((rot + skew(&x)).norm() < 1e-15);
        let theta = PoseParams::new(Vector3::new(0.4, 0.1, -0.7), Vector3::new(1.0, 2.0, 3.0));
        let j = pose_point_jacobian(&theta, &x);
        assert_eq!(j.fixed_view::<3, 3>(0, 3).into_owned(), Matrix3::identity());
    }

    #[test]
    fn pose_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..1000 {
            let theta = random_pose(&mut rng);
            let x = random_point(&mut rng);
            let j = pose_point_jacobian(&theta, &x);
            let base = theta.to_vector();
            for c in 0..6 {
                let mut dv = Vector6::zeros();
                dv[c] = h;
                // Perturb raw parameters without canonicalization so the stencil is symmetric.
                let eval = |v: Vector6<f64>| {
                    rodrigues(&Vector3::new(v[0], v[1], v[2])) * x
                        + Vector3::new(v[3], v[4], v[5])
                };
                let fd = (eval(base + dv) - eval(base - dv)) / (2.0 * h);
                for r in 0..3 {
                    assert!(rel_err(j[(r, c)], fd[r]) < 1e-5, "{} vs {}", j[(r, c)], fd[r]);
                }
            }
        }
    }

    #[test]
    fn inverse_and_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let x = random_point(&mut rng);
            let back = a.inverse().transform_point(&a.transform_point(&x));
            assert!((back - x).norm() < 1e-9 * x.norm().max(1.0));
            let ab = a.compose(&b);
            let seq = a.transform_point(&b.transform_point(&x));
            assert!((ab.transform_point(&x) - seq).norm() < 1e-9);
        }
    }

    fn pinhole(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h)
            .unwrap()
    }

    #[test]
    fn zbuffer_single_point_visible() {
        let k = pinhole(32, 32);
        let m = zbuffer_mask(&[Vector3::new(0.0, 0.0, 1.0)], &k, 0.01);
        assert_eq!(m.mask, vec![true]);
    }

    #[test]
    fn zbuffer_occlusion_on_same_ray() {
        let k = pinhole(32, 32);
        let dir = Vector3::new(0.05, -0.02, 1.0);
        let m = zbuffer_mask(&[dir * 2.0, dir], &k, 0.05);
        assert_eq!(m.mask, vec![false, true]);
        let m = zbuffer_mask(&[dir * 1.02, dir], &k, 0.05);
        assert_eq!(m.mask, vec![true, true]);
    }

    #[test]
    fn zbuffer_rejects_behind_and_out_of_margin() {
        let k = pinhole(32, 32);
        let pts = [
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(0.0, 0.0, 0.0),
            // u = 100*1/1 + 15.5 = 115.5 > 30
            Vector3::new(1.0, 0.0, 1.0),
            // u = 15.5 - 15.0 = 0.5 < 1: inside the image but outside the margin
            Vector3::new(-0.15, 0.0, 1.0),
        ];
        let m = zbuffer_mask(&pts, &k, 0.01);
        assert_eq!(m.mask, vec![false; 4]);
        assert_eq!(m.visible_count(), 0);
    }

    #[test]
    fn zbuffer_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = pinhole(40, 30);
        let pts: Vec<Vector3<f64>> = (0..3000)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-0.25..0.25),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(0.8..1.2),
                )
            })
            .collect();
        let first = zbuffer_mask(&pts, &k, 0.02);
        let kept: Vec<Vector3<f64>> = pts
            .iter()
            .zip(&first.mask)
            .filter_map(|(p, &m)| m.then_some(*p))
            .collect();
        assert!(!kept.is_empty() && kept.len() < pts.len());
        let second = zbuffer_mask(&kept, &k, 0.02);
        assert!(second.mask.iter().all(|&m| m));
    }

    #[test]
    fn point_cloud_validation() {
        assert!(PointCloud::new(vec![], vec![]).is_err());
        assert!(PointCloud::new(vec![Vector3::zeros()], vec![Rgb::new(1.5, 0.0, 0.0)]).is_err());
        assert!(PointCloud::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)], vec![Rgb::zeros()]).is_err());
        assert!(PointCloud::new(vec![Vector3::zeros()], vec![Rgb::zeros(), Rgb::zeros()]).is_err());
        let pc = PointCloud::new(vec![Vector3::zeros()], vec![Rgb::new(0.0, 1.0, 0.5)]).unwrap();
        assert_eq!(pc.len(), 1);
    }

    #[test]
    fn median_depth_ignores_points_behind() {
        let pts = [
            Vector3::new(0.0, 0.0, -5.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 0.0, 2.0),
            Vector3::new(0.0, 0.0, 3.0),
        ];
        assert_eq!(median_depth(&pts), Some(2.0));
        assert_eq!(median_depth(&pts[..1]), None);
    }

    proptest::proptest! {
        #[test]
        fn transform_is_rigid(
            wx in -3.0f64..3.0, wy in -3.0f64..3.0, wz in -3.0f64..3.0,
            tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0,
            a in proptest::array::uniform3(-10.0f64..10.0),
            b in proptest::array::uniform3(-10.0f64..10.0),
        ) {
            let theta = PoseParams::new(Vector3::new(wx, wy, wz), Vector3::new(tx, ty, tz));
            let pa = Vector3::from(a);
            let pb = Vector3::from(b);
            let out = se3_transform(&theta, &[pa, pb]);
            let d0 = (pa - pb).norm();
            let d1 = (out[0] - out[1]).norm();
            proptest::prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1e-12) + 1e-12);
            let back = se3_transform(&theta.inverse(), &out);
            proptest::prop_assert!((back[0] - pa).norm() <= 1e-9 * pa.norm().max(1.0));
        }
    }
}
