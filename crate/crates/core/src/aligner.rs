//! The alignment loop.
//!
//! Each iteration runs the forward pass (transform, Z-buffer, projection,
//! sub-pixel sampling, color fit, robust weighting), evaluates the analytic
//! pose gradient with the mask, weights, scale and color transform held
//! fixed, and takes an Adam step on the six pose parameters.

use crate::colorxform::{self, ColorTransform, FitOptions, InlierSet, KernelOrder};
use crate::error::{Error, Result};
use crate::geometry::{
    self, project, projection_jacobian, so3_left_jacobian, CameraIntrinsics, PointCloud,
    PoseParams, VisibilityMask,
};
use crate::reduce;
use crate::robustloss::{self, ResidualSet};
use crate::sampler::{GradientStrategy, Image, Sampler, SubpixelSample};
use crate::Rgb;
use nalgebra::{Vector3, Vector6};
use rayon::prelude::*;

/// Alignments fail when fewer than this fraction of points are visible.
pub const MIN_VISIBLE_FRACTION: f64 = 0.01;

/// Which color correction runs between image and cloud colors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColorMode {
    /// Compare raw colors.
    ZeroOrder,
    /// Affine 3x4 transform over `[1, R, G, B]`.
    FirstOrder,
    /// Full second-order polynomial transform.
    SecondOrder,
}

impl ColorMode {
    pub fn kernel_order(self) -> Option<KernelOrder> {
        match self {
            ColorMode::ZeroOrder => None,
            ColorMode::FirstOrder => Some(KernelOrder::Linear),
            ColorMode::SecondOrder => Some(KernelOrder::Quadratic),
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ColorMode::ZeroOrder => "zo",
            ColorMode::FirstOrder => "fo",
            ColorMode::SecondOrder => "so",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignConfig {
    pub strategy: GradientStrategy,
    pub color_mode: ColorMode,
    /// Adam step size for the translation block, in scene units.
    pub lr_translation: f64,
    /// Adam step size for the rotation block, in radians.
    pub lr_rotation: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_iters: usize,
    /// Stop once the step norm falls below this (rotation scaled by the
    /// median scene depth).
    pub param_tol: f64,
    pub beta_max: f64,
    pub nu: f64,
    pub seed: u64,
    /// Z-buffer depth tolerance; `None` uses 1% of the median depth.
    pub depth_eps: Option<f64>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self::for_scene_depth(3.0)
    }
}

impl AlignConfig {
    /// Defaults with the translation step scaled to the scene depth.
    pub fn for_scene_depth(depth: f64) -> Self {
        Self {
            strategy: GradientStrategy::A,
            color_mode: ColorMode::SecondOrder,
            lr_translation: 1e-3 * depth,
            lr_rotation: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_iters: 500,
            param_tol: 1e-7,
            beta_max: colorxform::DEFAULT_BETA_MAX,
            nu: robustloss::DEFAULT_NU,
            seed: 0,
            depth_eps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr_translation", self.lr_translation)?;
        positive("lr_rotation", self.lr_rotation)?;
        positive("param_tol", self.param_tol)?;
        positive("beta_max", self.beta_max)?;
        positive("nu", self.nu)?;
        positive("adam_eps", self.adam_eps)?;
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if let Some(eps) = self.depth_eps {
            positive("depth_eps", eps)?;
        }
        Ok(())
    }

    /// Compact label such as `so-a`.
    pub fn label(&self) -> String {
        let s = match self.strategy {
            GradientStrategy::A => "a",
            GradientStrategy::B => "b",
        };
        format!("{}-{}", self.color_mode.short_name(), s)
    }
}

/// Everything the forward pass computed at one pose. Per-point vectors
/// cover the visible points only, in cloud order.
#[derive(Clone, Debug)]
pub struct AlignState {
    pub theta: PoseParams,
    pub intrinsics: CameraIntrinsics,
    pub mask: VisibilityMask,
    pub visible: Vec<usize>,
    pub points_cam: Vec<Vector3<f64>>,
    pub pixels: Vec<[f64; 2]>,
    pub samples: Vec<SubpixelSample>,
    pub transform: ColorTransform,
    /// `None` when no color transform is fitted.
    pub inliers: Option<InlierSet>,
    pub transformed: Vec<Rgb>,
    pub clipped: Vec<[bool; 3]>,
    pub residuals: ResidualSet,
    pub loss: f64,
    pub visible_fraction: f64,
}

impl AlignState {
    pub fn visible_count(&self) -> usize {
        self.visible.len()
    }

    pub fn inlier_count(&self) -> usize {
        self.inliers
            .as_ref()
            .map_or(self.visible.len(), InlierSet::count)
    }
}

/// Runs the forward pass at `theta`.
pub fn forward_pass(
    pc: &PointCloud,
    image: &Image,
    k: &CameraIntrinsics,
    theta: &PoseParams,
    cfg: &AlignConfig,
) -> Result<AlignState> {
    let sampler = Sampler::new(image, cfg.strategy);
    forward_with(pc, &sampler, k, theta, cfg)
}

fn forward_with(
    pc: &PointCloud,
    sampler: &Sampler<'_>,
    k: &CameraIntrinsics,
    theta: &PoseParams,
    cfg: &AlignConfig,
) -> Result<AlignState> {
    let image = sampler.image();
    if image.width() != k.width || image.height() != k.height {
        return Err(Error::invalid(format!(
            "image is {}x{} but intrinsics describe {}x{}",
            image.width(),
            image.height(),
            k.width,
            k.height
        )));
    }
    let all_cam = geometry::se3_transform(theta, pc.positions());
    let depth_eps = cfg
        .depth_eps
        .unwrap_or_else(|| geometry::default_depth_eps(&all_cam));
    let mask = geometry::zbuffer_mask(&all_cam, k, depth_eps);
    let visible = mask.visible_indices();
    let visible_fraction = visible.len() as f64 / pc.len() as f64;
    if visible.is_empty() || visible_fraction < MIN_VISIBLE_FRACTION {
        return Err(Error::Alignment(format!(
            "only {:.3}% of points visible",
            100.0 * visible_fraction
        )));
    }

    let points_cam: Vec<Vector3<f64>> = visible.iter().map(|&i| all_cam[i]).collect();
    let pixels: Vec<[f64; 2]> = points_cam
        .iter()
        .map(|p| project(k, p).expect("visible points lie in front of the camera"))
        .collect();
    let samples: Vec<SubpixelSample> = pixels
        .par_iter()
        .map(|&[u, v]| sampler.sample(u, v))
        .collect::<Result<_>>()?;

    let img_colors: Vec<Rgb> = samples.iter().map(|s| s.color).collect();
    let pc_colors: Vec<Rgb> = visible.iter().map(|&i| pc.colors()[i]).collect();

    let (transform, inliers) = match cfg.color_mode.kernel_order() {
        None => (ColorTransform::identity(KernelOrder::Quadratic), None),
        Some(order) => {
            let fit = colorxform::solve_color_transform_with(
                &img_colors,
                &pc_colors,
                &FitOptions {
                    order,
                    beta_max: cfg.beta_max,
                    ..FitOptions::default()
                },
            )?;
            (fit.transform, Some(fit.inliers))
        }
    };

    let (transformed, clipped): (Vec<Rgb>, Vec<[bool; 3]>) = match cfg.color_mode {
        ColorMode::ZeroOrder => (img_colors.clone(), vec![[false; 3]; img_colors.len()]),
        _ => img_colors.par_iter().map(|c| transform.apply(c)).unzip(),
    };

    let r: Vec<Rgb> = transformed
        .iter()
        .zip(&pc_colors)
        .map(|(t, c)| t - c)
        .collect();
    let residuals = ResidualSet::new(r, cfg.nu);
    let loss = residuals.loss();
    if !loss.is_finite() {
        return Err(Error::Alignment("loss is not finite".into()));
    }

    Ok(AlignState {
        theta: *theta,
        intrinsics: *k,
        mask,
        visible,
        points_cam,
        pixels,
        samples,
        transform,
        inliers,
        transformed,
        clipped,
        residuals,
        loss,
        visible_fraction,
    })
}

/// How clipped output channels contribute to the pose gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipGradient {
    /// Use the derivative of the unclipped transform (straight-through).
    PassThrough,
    /// Treat clipped channels as constant.
    Zero,
}

/// `dL/dθ` with mask, weights, sigma and color transform held fixed.
pub fn pose_gradient(state: &AlignState, _cfg: &AlignConfig) -> Vector6<f64> {
    pose_gradient_with(state, ClipGradient::PassThrough)
}

pub fn pose_gradient_with(state: &AlignState, clip: ClipGradient) -> Vector6<f64> {
    let k = &state.intrinsics;
    let tau = state.theta.tau;
    let identity_color = state.inliers.is_none();
    let acc = reduce::chunked_sum(state.points_cam.len(), Vector6::zeros(), |i| {
        let p = state.points_cam[i];
        let s = &state.samples[i];
        let r = state.residuals.r[i];
        let w = state.residuals.weights[i];
        let mut dl_dout = (w.component_mul(&r)) * 2.0;
        if clip == ClipGradient::Zero {
            for c in 0..3 {
                if state.clipped[i][c] {
                    dl_dout[c] = 0.0;
                }
            }
        }
        let dl_dcolor = if identity_color {
            dl_dout
        } else {
            state.transform.jacobian(&s.color).transpose() * dl_dout
        };
        let dl_du = dl_dcolor.dot(&s.grad_u);
        let dl_dv = dl_dcolor.dot(&s.grad_v);
        let jp = projection_jacobian(k, &p);
        let dl_dp = jp.transpose() * nalgebra::Vector2::new(dl_du, dl_dv);
        let rx = p - tau;
        let rot = rx.cross(&dl_dp);
        Vector6::new(rot.x, rot.y, rot.z, dl_dp.x, dl_dp.y, dl_dp.z)
    });
    let jl = so3_left_jacobian(&state.theta.omega);
    let rot = jl.transpose() * acc.fixed_rows::<3>(0);
    Vector6::new(rot.x, rot.y, rot.z, acc[3], acc[4], acc[5])
}

/// Adam moments over the six pose parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vector6<f64>,
    pub v: Vector6<f64>,
    pub step_count: u64,
}

/// One bias-corrected Adam step. Returns the signed parameter increment
/// (already negated, add it to θ) and the new moments.
pub fn adam_step(
    adam: &AdamState,
    grad: &Vector6<f64>,
    cfg: &AlignConfig,
) -> (Vector6<f64>, AdamState) {
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let step_count = adam.step_count + 1;
    let m = adam.m * b1 + grad * (1.0 - b1);
    let v = adam.v * b2 + grad.component_mul(grad) * (1.0 - b2);
    let c1 = 1.0 - b1.powi(step_count as i32);
    let c2 = 1.0 - b2.powi(step_count as i32);
    let mut update = Vector6::zeros();
    for i in 0..6 {
        let lr = if i < 3 {
            cfg.lr_rotation
        } else {
            cfg.lr_translation
        };
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        update[i] = -lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    (update, AdamState { m, v, step_count })
}

#[derive(Clone, Debug)]
pub struct AlignResult {
    pub theta_final: PoseParams,
    pub d_final: ColorTransform,
    pub loss_trace: Vec<f64>,
    pub inlier_counts: Vec<usize>,
    pub iterations_run: usize,
    pub converged: bool,
    pub visible_fraction: f64,
}

/// Aligns `pc` to `image` starting from `theta0`.
pub fn align(
    pc: &PointCloud,
    image: &Image,
    k: &CameraIntrinsics,
    theta0: &PoseParams,
    cfg: &AlignConfig,
) -> Result<AlignResult> {
    align_with_observer(pc, image, k, theta0, cfg, |_, _| {})
}

/// [`align`] with a callback receiving the iteration index and forward state.
pub fn align_with_observer(
    pc: &PointCloud,
    image: &Image,
    k: &CameraIntrinsics,
    theta0: &PoseParams,
    cfg: &AlignConfig,
    mut observer: impl FnMut(usize, &AlignState),
) -> Result<AlignResult> {
    cfg.validate()?;
    if !theta0.is_finite() {
        return Err(Error::invalid("initial pose is not finite"));
    }
    let sampler = Sampler::new(image, cfg.strategy);
    let depth_scale = geometry::median_depth(&geometry::se3_transform(theta0, pc.positions()))
        .ok_or_else(|| Error::Alignment("no points in front of the camera".into()))?;

    let mut theta = *theta0;
    let mut adam = AdamState::default();
    let mut loss_trace = Vec::with_capacity(cfg.max_iters);
    let mut inlier_counts = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut d_final = ColorTransform::identity(KernelOrder::Quadratic);
    let mut visible_fraction = 0.0;

    for iter in 0..cfg.max_iters {
        let state = forward_with(pc, &sampler, k, &theta, cfg)?;
        observer(iter, &state);
        loss_trace.push(state.loss);
        inlier_counts.push(state.inlier_count());
        d_final = state.transform;
        visible_fraction = state.visible_fraction;

        // Adam sees the per-residual mean so that `adam_eps` is independent
        // of how many points are visible.
        let grad = pose_gradient(&state, cfg) / (3 * state.visible_count()) as f64;
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::Alignment("pose gradient is not finite".into()));
        }
        let (update, next) = adam_step(&adam, &grad, cfg);
        adam = next;
        theta = PoseParams::from_vector(&(theta.to_vector() + update));

        let step = Vector6::new(
            update[0] * depth_scale,
            update[1] * depth_scale,
            update[2] * depth_scale,
            update[3],
            update[4],
            update[5],
        );
        if step.norm() < cfg.param_tol {
            converged = true;
            break;
        }
    }

    Ok(AlignResult {
        theta_final: theta,
        d_final,
        iterations_run: loss_trace.len(),
        loss_trace,
        inlier_counts,
        converged,
        visible_fraction,
    })
}
