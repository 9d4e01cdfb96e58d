//! Initial-pose perturbation and pose error metrics.

use crate::geometry::{rotation_log, PoseParams};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationSpec {
    /// Meters.
    pub max_translation: f64,
    /// Degrees.
    pub max_rotation: f64,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            max_translation: 0.02,
            max_rotation: 1.0,
            seed: 0,
        }
    }
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
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

/// Rotates `theta_gt` by a random angle in `[0, max_rotation]` about a
/// random axis (applied on the camera side) and offsets its translation
/// by a random vector of norm in `[0, max_translation]`.
pub fn perturb_pose(theta_gt: &PoseParams, spec: &PerturbationSpec) -> PoseParams {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let axis = random_direction(&mut rng);
    let angle = spec.max_rotation.to_radians() * rng.random_range(0.0..=1.0);
    let dir = random_direction(&mut rng);
    let dist = spec.max_translation * rng.random_range(0.0..=1.0);
    if angle == 0.0 && dist == 0.0 {
        return *theta_gt;
    }
    let delta = crate::geometry::rodrigues(&(axis * angle));
    PoseParams::from_rotation_translation(
        &(delta * theta_gt.rotation()),
        &(theta_gt.tau + dir * dist),
    )
}

/// Distance between the two translations, in millimeters.
pub fn translation_error(theta_gt: &PoseParams, theta_est: &PoseParams) -> f64 {
    (theta_gt.tau - theta_est.tau).norm() * 1000.0
}

/// Geodesic angle of `R_gt^T R_est`, in degrees.
pub fn rotation_error(theta_gt: &PoseParams, theta_est: &PoseParams) -> f64 {
    let rel = theta_gt.rotation().transpose() * theta_est.rotation();
    rotation_log(&rel).norm().to_degrees()
}
