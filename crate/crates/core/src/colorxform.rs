//! Polynomial color transform between image colors and point-cloud colors.
//!
//! Image colors are lifted with the second-order kernel
//! `[1, R, G, B, RG, GB, RB, R², G², B²]` and mapped by a 3x10 matrix `D`.
//! `D` is fitted by ridge-regularized least squares, alternating with an
//! inlier gate on the per-point color residual norm.

use crate::error::{Error, Result};
use crate::reduce;
use crate::Rgb;
use nalgebra::{DMatrix, Matrix3, SMatrix};

pub const FEATURES: usize = 10;
pub const DEFAULT_BETA_MAX: f64 = 0.3;
pub const DEFAULT_MAX_ROUNDS: usize = 5;
pub const DEFAULT_RIDGE: f64 = 1e-8;

pub type TransformMatrix = SMatrix<f64, 3, FEATURES>;

/// Lifted color `[1, R, G, B, RG, GB, RB, R², G², B²]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolyFeatures(pub [f64; FEATURES]);

pub fn poly_kernel(rgb: &Rgb) -> PolyFeatures {
    let (r, g, b) = (rgb.x, rgb.y, rgb.z);
    PolyFeatures([1.0, r, g, b, r * g, g * b, r * b, r * r, g * g, b * b])
}

/// `d K / d (R, G, B)`, one row per feature.
pub fn poly_kernel_jacobian(rgb: &Rgb) -> SMatrix<f64, FEATURES, 3> {
    let (r, g, b) = (rgb.x, rgb.y, rgb.z);
    #[rustfmt::skip]
    let j = SMatrix::<f64, FEATURES, 3>::from_row_slice(&[
        0.0, 0.0, 0.0,
        1.0, 0.0, 0.0,
        0.0, 1.0, 0.0,
        0.0, 0.0, 1.0,
        g,   r,   0.0,
        0.0, b,   g,
        b,   0.0, r,
        2.0 * r, 0.0, 0.0,
        0.0, 2.0 * g, 0.0,
        0.0, 0.0, 2.0 * b,
    ]);
    j
}

/// How many leading kernel features a transform may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelOrder {
    /// `[1, R, G, B]`: an affine 3x4 transform.
    Linear,
    /// The full ten-feature kernel.
    Quadratic,
}

impl KernelOrder {
    pub fn features(self) -> usize {
        match self {
            KernelOrder::Linear => 4,
            KernelOrder::Quadratic => FEATURES,
        }
    }
}

/// The 3x10 color matrix. Linear transforms keep the quadratic columns at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorTransform {
    order: KernelOrder,
    matrix: TransformMatrix,
}

impl ColorTransform {
    /// Row `c` selects the linear feature of channel `c`.
    pub fn identity(order: KernelOrder) -> Self {
        let mut matrix = TransformMatrix::zeros();
        for c in 0..3 {
            matrix[(c, c + 1)] = 1.0;
        }
        Self { order, matrix }
    }

    pub fn from_matrix(matrix: TransformMatrix) -> Result<Self> {
        if !matrix.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("color transform has non-finite entries"));
        }
        Ok(Self {
            order: KernelOrder::Quadratic,
            matrix,
        })
    }

    /// Affine transform from a 3x4 matrix over `[1, R, G, B]`.
    pub fn from_linear(m: &SMatrix<f64, 3, 4>) -> Result<Self> {
        let mut matrix = TransformMatrix::zeros();
        matrix.fixed_view_mut::<3, 4>(0, 0).copy_from(m);
        let mut t = Self::from_matrix(matrix)?;
        t.order = KernelOrder::Linear;
        Ok(t)
    }

    pub fn order(&self) -> KernelOrder {
        self.order
    }

    pub fn matrix(&self) -> &TransformMatrix {
        &self.matrix
    }

    /// `D K(rgb)` without clipping.
    pub fn apply_unclipped(&self, rgb: &Rgb) -> Rgb {
        let k = poly_kernel(rgb).0;
        let mut out = Rgb::zeros();
        for c in 0..3 {
            let mut s = 0.0;
            for (f, kf) in k.iter().enumerate() {
                s += self.matrix[(c, f)] * kf;
            }
            out[c] = s;
        }
        out
    }

    /// Clipped output and per-channel clip flags.
    pub fn apply(&self, rgb: &Rgb) -> (Rgb, [bool; 3]) {
        let raw = self.apply_unclipped(rgb);
        let mut flags = [false; 3];
        let mut out = raw;
        for c in 0..3 {
            if raw[c] < 0.0 || raw[c] > 1.0 {
                flags[c] = true;
                out[c] = raw[c].clamp(0.0, 1.0);
            }
        }
        (out, flags)
    }

    /// `d (D K(c)) / dc`, ignoring clipping.
    pub fn jacobian(&self, rgb: &Rgb) -> Matrix3<f64> {
        self.matrix * poly_kernel_jacobian(rgb)
    }
}

/// `clip(D K(rgb), 0, 1)` with flags for the clipped channels. Gradients
/// downstream use the unclipped derivative.
pub fn apply_color_transform(d: &ColorTransform, rgb: &Rgb) -> (Rgb, [bool; 3]) {
    d.apply(rgb)
}

pub fn color_transform_jacobian(d: &ColorTransform, rgb: &Rgb) -> Matrix3<f64> {
    d.jacobian(rgb)
}

/// Inlier flags from the last gating round.
#[derive(Clone, Debug, PartialEq)]
pub struct InlierSet {
    pub flags: Vec<bool>,
    pub beta_max: f64,
}

impl InlierSet {
    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub order: KernelOrder,
    pub beta_max: f64,
    pub max_rounds: usize,
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            order: KernelOrder::Quadratic,
            beta_max: DEFAULT_BETA_MAX,
            max_rounds: DEFAULT_MAX_ROUNDS,
            ridge: DEFAULT_RIDGE,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ColorFit {
    pub transform: ColorTransform,
    pub inliers: InlierSet,
    /// Number of least-squares solves performed.
    pub rounds: usize,
    /// Set when a gating round left fewer inliers than features; the
    /// previous transform was kept.
    pub degenerate: bool,
    /// Truncated objective `Σ min(‖D k - c‖², β²) + λ‖D‖²` after each solve.
    pub objective_trace: Vec<f64>,
}

/// Ridge least squares over the points selected by `use_point`.
fn fit(
    img: &[Rgb],
    pc: &[Rgb],
    use_point: impl Fn(usize) -> bool + Sync,
    order: KernelOrder,
    ridge: f64,
) -> Result<ColorTransform> {
    let m = order.features();
    #[derive(Clone)]
    struct Acc {
        ata: [f64; FEATURES * FEATURES],
        atb: [f64; FEATURES * 3],
    }
    let acc = reduce::chunked_fold(
        img.len(),
        || Acc {
            ata: [0.0; FEATURES * FEATURES],
            atb: [0.0; FEATURES * 3],
        },
        |acc, i| {
            if !use_point(i) {
                return;
            }
            let mut k = poly_kernel(&img[i]).0;
            k[m..].fill(0.0);
            let c = pc[i];
            // Full fixed-size outer product; the solve reads the leading block.
            for (r, &kr) in k.iter().enumerate() {
                let row = &mut acc.ata[r * FEATURES..(r + 1) * FEATURES];
                for (a, &kc) in row.iter_mut().zip(&k) {
                    *a += kr * kc;
                }
                acc.atb[r * 3] += kr * c.x;
                acc.atb[r * 3 + 1] += kr * c.y;
                acc.atb[r * 3 + 2] += kr * c.z;
            }
        },
        |total, part| {
            for (t, p) in total.ata.iter_mut().zip(part.ata) {
                *t += p;
            }
            for (t, p) in total.atb.iter_mut().zip(part.atb) {
                *t += p;
            }
        },
    );
    let mut ata = DMatrix::<f64>::zeros(m, m);
    for r in 0..m {
        for c in r..m {
            ata[(r, c)] = acc.ata[r * FEATURES + c];
            ata[(c, r)] = acc.ata[r * FEATURES + c];
        }
        ata[(r, r)] += ridge;
    }
    let atb = DMatrix::<f64>::from_fn(m, 3, |r, ch| acc.atb[r * 3 + ch]);
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::invalid("color normal equations are not positive definite"))?;
    let sol = chol.solve(&atb);
    let mut matrix = TransformMatrix::zeros();
    for ch in 0..3 {
        for f in 0..m {
            matrix[(ch, f)] = sol[(f, ch)];
        }
    }

    // One refinement step against the unregularized residual (iterated
    // Tikhonov). The ridge still bounds the step in null directions, but its
    // bias on nearly collinear color sets drops from λ/e to (λ/e)², so an
    // exactly representable mapping is fitted to round-off.
    let atr = reduce::chunked_sum(img.len(), SMatrix::<f64, FEATURES, 3>::zeros(), |i| {
        if !use_point(i) {
            return SMatrix::zeros();
        }
        let mut k = nalgebra::SVector::<f64, FEATURES>::from(poly_kernel(&img[i]).0);
        k.rows_mut(m, FEATURES - m).fill(0.0);
        let r = pc[i] - matrix * k;
        k * r.transpose()
    });
    let rhs = DMatrix::<f64>::from_fn(m, 3, |r, ch| atr[(r, ch)]);
    let delta = chol.solve(&rhs);
    for ch in 0..3 {
        for f in 0..m {
            matrix[(ch, f)] += delta[(f, ch)];
        }
    }
    if !matrix.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("color fit produced non-finite coefficients"));
    }
    Ok(ColorTransform { order, matrix })
}

/// Inlier flags `‖D k - c‖ < beta_max` and the truncated objective of `d`.
fn evaluate(d: &ColorTransform, img: &[Rgb], pc: &[Rgb], beta_max: f64, ridge: f64) -> (Vec<bool>, f64) {
    let sq: Vec<f64> = img
        .iter()
        .zip(pc)
        .map(|(i, c)| (d.apply_unclipped(i) - c).norm_squared())
        .collect();
    let b2 = beta_max * beta_max;
    let flags = sq.iter().map(|&e| e.sqrt() < beta_max).collect();
    let data = reduce::chunked_sum(sq.len(), 0.0, |i| sq[i].min(b2));
    (flags, data + ridge * d.matrix.norm_squared())
}

/// Fits the second-order transform with the default ridge.
pub fn solve_color_transform(
    img_colors: &[Rgb],
    pc_colors: &[Rgb],
    beta_max: f64,
    max_rounds: usize,
) -> Result<ColorFit> {
    solve_color_transform_with(
        img_colors,
        pc_colors,
        &FitOptions {
            beta_max,
            max_rounds,
            ..FitOptions::default()
        },
    )
}

/// Alternates inlier gating and least squares.
///
/// Round 0 fits on every point. Each later round gates with the current
/// transform and refits on the inliers, stopping when the inlier set stops
/// changing or `max_rounds` solves have run. The returned flags are the
/// gate of the returned transform.
pub fn solve_color_transform_with(
    img_colors: &[Rgb],
    pc_colors: &[Rgb],
    opts: &FitOptions,
) -> Result<ColorFit> {
    if img_colors.len() != pc_colors.len() {
        return Err(Error::invalid(format!(
            "{} image colors but {} point colors",
            img_colors.len(),
            pc_colors.len()
        )));
    }
    let finite = |c: &Rgb| c.iter().all(|x| x.is_finite());
    if !img_colors.iter().all(finite) || !pc_colors.iter().all(finite) {
        return Err(Error::invalid("color fit input contains NaN or infinity"));
    }
    if !(opts.beta_max > 0.0) {
        return Err(Error::invalid("beta_max must be positive"));
    }
    let min_points = opts.order.features();
    let n = img_colors.len();
    let eval = |d: &ColorTransform| evaluate(d, img_colors, pc_colors, opts.beta_max, opts.ridge);

    if n < min_points {
        let transform = ColorTransform::identity(opts.order);
        let (flags, _) = eval(&transform);
        return Ok(ColorFit {
            transform,
            inliers: InlierSet {
                flags,
                beta_max: opts.beta_max,
            },
            rounds: 0,
            degenerate: true,
            objective_trace: vec![],
        });
    }

    let mut d = fit(img_colors, pc_colors, |_| true, opts.order, opts.ridge)?;
    let mut rounds = 1;
    let (mut flags, obj) = eval(&d);
    let mut trace = vec![obj];
    let mut degenerate = false;
    // `flags` is always the gate of the current `d`.
    while rounds < opts.max_rounds.max(1) {
        if rounds == 1 && flags.iter().all(|&f| f) {
            // Refitting on every point would reproduce `d`.
            break;
        }
        if flags.iter().filter(|&&f| f).count() < min_points {
            degenerate = true;
            break;
        }
        let next = fit(img_colors, pc_colors, |i| flags[i], opts.order, opts.ridge)?;
        let (next_flags, obj) = eval(&next);
        trace.push(obj);
        rounds += 1;
        let settled = next_flags == flags;
        d = next;
        flags = next_flags;
        if settled {
            break;
        }
    }
    Ok(ColorFit {
        transform: d,
        inliers: InlierSet {
            flags,
            beta_max: opts.beta_max,
        },
        rounds,
        degenerate,
        objective_trace: trace,
    })
}
