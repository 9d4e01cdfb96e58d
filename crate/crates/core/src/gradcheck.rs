//! Finite-difference checks of the analytic derivatives: projection, pose,
//! color kernel, sub-pixel image gradient, and the full pose gradient of
//! the loss with mask, weights and color transform frozen.

use crate::aligner::{forward_pass, pose_gradient_with, AlignConfig, AlignState, ClipGradient, ColorMode};
use crate::colorxform::{color_transform_jacobian, ColorTransform, TransformMatrix};
use crate::error::Result;
use crate::geometry::{
    pose_point_jacobian, project, projection_jacobian, CameraIntrinsics, PointCloud, PoseParams,
};
use crate::sampler::{bilinear_sample, grad_strategy_a, GradientStrategy, Image};
use crate::synthbench::{generate_scene, perturb_pose, PerturbationSpec, SceneGeometry, SceneSpec, TextureProfile};
use crate::Rgb;
use nalgebra::{DVector, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt;

pub const JACOBIAN_TOLERANCE: f64 = 1e-5;
pub const CHAIN_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub configurations: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<12} configs={} max_rel_err={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.configurations,
            self.max_rel_error,
            self.tolerance
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// `‖a - b‖ / max(‖b‖, floor)`.
pub fn rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let a = DVector::from_column_slice(analytic);
    let b = DVector::from_column_slice(numeric);
    (a - &b).norm() / b.norm().max(floor)
}

/// Central difference of a vector function along each of `n` inputs.
fn central_jacobian(
    x: &[f64],
    steps: &[f64],
    f: impl Fn(&[f64]) -> Vec<f64>,
) -> Vec<Vec<f64>> {
    (0..x.len())
        .map(|j| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += steps[j];
            xm[j] -= steps[j];
            let (fp, fm) = (f(&xp), f(&xm));
            fp.iter()
                .zip(&fm)
                .map(|(p, m)| (p - m) / (2.0 * steps[j]))
                .collect()
        })
        .collect()
}

fn random_intrinsics(rng: &mut ChaCha8Rng) -> CameraIntrinsics {
    CameraIntrinsics {
        fx: rng.random_range(50.0..800.0),
        fy: rng.random_range(50.0..800.0),
        cx: rng.random_range(10.0..300.0),
        cy: rng.random_range(10.0..300.0),
        width: 640,
        height: 480,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

pub fn check_projection(rng: &mut ChaCha8Rng, n: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let k = random_intrinsics(rng);
        let p = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(0.5..5.0),
        );
        let jac = projection_jacobian(&k, &p);
        let fd = central_jacobian(p.as_slice(), &[1e-6; 3], |x| {
            project(&k, &Vector3::from_column_slice(x)).unwrap().to_vec()
        });
        for (j, col) in fd.iter().enumerate() {
            let a: Vec<f64> = jac.column(j).iter().copied().collect();
            worst = worst.max(rel_error(&a, col, 1.0));
        }
    }
    CheckResult {
        name: "projection",
        configurations: n,
        max_rel_error: worst,
        tolerance: JACOBIAN_TOLERANCE,
    }
}

pub fn check_pose(rng: &mut ChaCha8Rng, n: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        // Include poses near the identity and near a half turn.
        let angle = match i % 4 {
            0 => rng.random_range(0.0..1e-4),
            1 => rng.random_range(3.0..PI - 1e-3),
            _ => rng.random_range(0.0..PI - 1e-3),
        };
        let axis = random_vec(rng, 1.0).normalize();
        let theta = PoseParams::new(axis * angle, random_vec(rng, 2.0));
        let x = random_vec(rng, 3.0);
        let jac = pose_point_jacobian(&theta, &x);
        let fd = central_jacobian(theta.to_vector().as_slice(), &[1e-6; 6], |v| {
            let t = PoseParams {
                omega: Vector3::new(v[0], v[1], v[2]),
                tau: Vector3::new(v[3], v[4], v[5]),
            };
            t.transform_point(&x).as_slice().to_vec()
        });
        for (j, col) in fd.iter().enumerate() {
            let a: Vec<f64> = jac.column(j).iter().copied().collect();
            worst = worst.max(rel_error(&a, col, 1.0));
        }
    }
    CheckResult {
        name: "pose",
        configurations: n,
        max_rel_error: worst,
        tolerance: JACOBIAN_TOLERANCE,
    }
}

pub fn check_color_kernel(rng: &mut ChaCha8Rng, n: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let d = ColorTransform::from_matrix(TransformMatrix::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .expect("finite");
        let c = Rgb::new(rng.random(), rng.random(), rng.random());
        let jac = color_transform_jacobian(&d, &c);
        let fd = central_jacobian(c.as_slice(), &[1e-6; 3], |x| {
            d.apply_unclipped(&Rgb::from_column_slice(x)).as_slice().to_vec()
        });
        for (j, col) in fd.iter().enumerate() {
            let a: Vec<f64> = jac.column(j).iter().copied().collect();
            worst = worst.max(rel_error(&a, col, 1.0));
        }
    }
    CheckResult {
        name: "color_kernel",
        configurations: n,
        max_rel_error: worst,
        tolerance: JACOBIAN_TOLERANCE,
    }
}

/// Strategy A against differences of the bilinear interpolant, away from
/// cell boundaries where it is smooth.
pub fn check_sampler(rng: &mut ChaCha8Rng, n: usize) -> CheckResult {
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    for _ in 0..n {
        let (w, ht) = (rng.random_range(3..20), rng.random_range(3..20));
        let px = (0..w * ht)
            .map(|_| Rgb::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let img = Image::new(w, ht, px).expect("valid image");
        let u = rng.random_range(0..w - 1) as f64 + rng.random_range(0.01..0.99);
        let v = rng.random_range(0..ht - 1) as f64 + rng.random_range(0.01..0.99);
        let (gu, gv) = grad_strategy_a(&img, u, v).expect("inside domain");
        let fu = (bilinear_sample(&img, u + h, v).unwrap() - bilinear_sample(&img, u - h, v).unwrap()) / (2.0 * h);
        let fv = (bilinear_sample(&img, u, v + h).unwrap() - bilinear_sample(&img, u, v - h).unwrap()) / (2.0 * h);
        worst = worst
            .max(rel_error(gu.as_slice(), fu.as_slice(), 1.0))
            .max(rel_error(gv.as_slice(), fv.as_slice(), 1.0));
    }
    CheckResult {
        name: "sampler",
        configurations: n,
        max_rel_error: worst,
        tolerance: JACOBIAN_TOLERANCE,
    }
}

/// Loss at `theta` over the points visible in `state`, with their weights,
/// the color transform and the residual scale frozen at `state`'s values.
/// Colors are not clipped, matching the straight-through gradient.
pub fn frozen_loss(pc: &PointCloud, image: &Image, state: &AlignState, theta: &PoseParams) -> Result<f64> {
    let identity_color = state.inliers.is_none();
    let mut loss = 0.0;
    for (j, &i) in state.visible.iter().enumerate() {
        let p = theta.transform_point(&pc.positions()[i]);
        let [u, v] = project(&state.intrinsics, &p).ok_or_else(|| {
            crate::Error::Alignment("point moved behind the camera".into())
        })?;
        let color = bilinear_sample(image, u, v)?;
        let out = if identity_color {
            color
        } else {
            state.transform.apply_unclipped(&color)
        };
        let r = out - pc.colors()[i];
        loss += state.residuals.weights[j].component_mul(&r).dot(&r);
    }
    Ok(loss)
}

fn sample_cells(pc: &PointCloud, state: &AlignState, theta: &PoseParams) -> Vec<(i64, i64)> {
    let k = &state.intrinsics;
    state
        .visible
        .iter()
        .map(|&i| match project(k, &theta.transform_point(&pc.positions()[i])) {
            Some([u, v]) => (
                (u.floor() as i64).min(k.width as i64 - 2),
                (v.floor() as i64).min(k.height as i64 - 2),
            ),
            None => (i64::MIN, i64::MIN),
        })
        .collect()
}

/// Block-wise relative error of the analytic pose gradient against central
/// differences of [`frozen_loss`]. Returns `(rotation, translation)`.
pub fn chain_errors(
    pc: &PointCloud,
    image: &Image,
    state: &AlignState,
    rot_step: f64,
    trans_step: f64,
) -> Result<(f64, f64)> {
    let analytic = pose_gradient_with(state, ClipGradient::PassThrough);
    let base = state.theta.to_vector();
    let raw = |v: Vector6<f64>| PoseParams {
        omega: Vector3::new(v[0], v[1], v[2]),
        tau: Vector3::new(v[3], v[4], v[5]),
    };
    let mut numeric = Vector6::zeros();
    for j in 0..6 {
        // The interpolant has kinks at pixel boundaries; shrink the step until
        // no visible point changes cell across the difference.
        let mut h = if j < 3 { rot_step } else { trans_step };
        let (tp, tm) = loop {
            let mut tp = base;
            let mut tm = base;
            tp[j] += h;
            tm[j] -= h;
            if h < 1e-10 || sample_cells(pc, state, &raw(tp)) == sample_cells(pc, state, &raw(tm)) {
                break (tp, tm);
            }
            h *= 0.25;
        };
        let lp = frozen_loss(pc, image, state, &raw(tp))?;
        let lm = frozen_loss(pc, image, state, &raw(tm))?;
        numeric[j] = (lp - lm) / (2.0 * h);
    }
    let block = |r: std::ops::Range<usize>| {
        let a: Vec<f64> = analytic.as_slice()[r.clone()].to_vec();
        let n: Vec<f64> = numeric.as_slice()[r].to_vec();
        rel_error(&a, &n, 1e-12)
    };
    Ok((block(0..3), block(3..6)))
}

/// A small scene whose colors stay away from the clipping range.
fn chain_fixture(seed: u64, rng: &mut ChaCha8Rng) -> Result<(PointCloud, Image, AlignState)> {
    let scene = generate_scene(&SceneSpec {
        seed,
        texture_profile: TextureProfile::Smooth,
        geometry: if seed.is_multiple_of(2) { SceneGeometry::Plane } else { SceneGeometry::TwoPlanes },
        image_size: (64, 64),
        scene_depth: 3.0,
    })?;
    let image = Image::from_fn(64, 64, |a, b| scene.image.get(a, b) * 0.8 + Rgb::repeat(0.1))?;
    let colors: Vec<Rgb> = scene
        .pc
        .colors()
        .iter()
        .map(|c| Rgb::new(0.2 + 0.6 * c.x * c.x, 0.15 + 0.7 * c.y, 0.3 + 0.4 * c.z))
        .collect();
    let pc = PointCloud::new(scene.pc.positions().to_vec(), colors)?;
    let theta = perturb_pose(
        &scene.theta_gt,
        &PerturbationSpec {
            max_translation: 0.05,
            max_rotation: 2.0,
            seed: rng.random(),
        },
    );
    let color_mode = match seed % 3 {
        0 => ColorMode::SecondOrder,
        1 => ColorMode::FirstOrder,
        _ => ColorMode::ZeroOrder,
    };
    let cfg = AlignConfig {
        strategy: GradientStrategy::A,
        color_mode,
        ..AlignConfig::default()
    };
    let state = forward_pass(&pc, &image, &scene.intrinsics, &theta, &cfg)?;
    Ok((pc, image, state))
}

pub fn check_chain(rng: &mut ChaCha8Rng, n: usize) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let (pc, image, state) = chain_fixture(rng.random::<u32>() as u64 + i as u64, rng)?;
        let (er, et) = chain_errors(&pc, &image, &state, 1e-7, 1e-6)?;
        worst = worst.max(er).max(et);
    }
    Ok(CheckResult {
        name: "full_chain",
        configurations: n,
        max_rel_error: worst,
        tolerance: CHAIN_TOLERANCE,
    })
}

/// Runs every check on `n` random configurations drawn from `seed`.
pub fn run_gradcheck(seed: u64, n: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = vec![
        check_projection(&mut rng, n),
        check_pose(&mut rng, n),
        check_color_kernel(&mut rng, n),
        check_sampler(&mut rng, n),
        check_chain(&mut rng, n)?,
    ];
    Ok(GradcheckReport { checks })
}
