//! Photometric residuals with Student-t weights.
//!
//! Weights are `w = (nu + 1) / (nu + r² / sigma²)`; the scale is the fixed
//! point of `sigma² = mean(r² w)` over all visible residual channels.
//! Reductions use the chunked order from [`crate::reduce`].

use crate::error::{Error, Result};
use crate::reduce;
use crate::Rgb;

pub const DEFAULT_NU: f64 = 5.0;
pub const SIGMA_FLOOR: f64 = 1e-6;
pub const DEFAULT_SIGMA_TOL: f64 = 1e-6;
pub const DEFAULT_SIGMA_MAX_ITER: usize = 50;

/// Residuals of the visible points with their scale and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSet {
    pub r: Vec<Rgb>,
    pub sigma: f64,
    pub nu: f64,
    pub weights: Vec<Rgb>,
}

impl ResidualSet {
    /// Estimates sigma and the weights for `r`.
    pub fn new(r: Vec<Rgb>, nu: f64) -> Self {
        let sigma = sigma_fixed_point(&r, nu, DEFAULT_SIGMA_TOL, DEFAULT_SIGMA_MAX_ITER);
        let weights = t_weights(&r, sigma, nu);
        Self {
            r,
            sigma,
            nu,
            weights,
        }
    }

    pub fn loss(&self) -> f64 {
        weighted_loss(&self.r, &self.weights)
    }
}

/// `transformed - pc_colors` for the points whose mask flag is set, in index order.
pub fn residuals(transformed: &[Rgb], pc_colors: &[Rgb], mask: &[bool]) -> Result<Vec<Rgb>> {
    if transformed.len() != pc_colors.len() || mask.len() != pc_colors.len() {
        return Err(Error::invalid("residual inputs have mismatched lengths"));
    }
    let r: Vec<Rgb> = transformed
        .iter()
        .zip(pc_colors)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((t, c), _)| t - c)
        .collect();
    if r.is_empty() {
        return Err(Error::Alignment("no visible points".into()));
    }
    Ok(r)
}

#[inline]
pub fn t_weight(r: f64, sigma: f64, nu: f64) -> f64 {
    (nu + 1.0) / (nu + (r * r) / (sigma * sigma))
}

pub fn t_weights(r: &[Rgb], sigma: f64, nu: f64) -> Vec<Rgb> {
    r.iter().map(|x| x.map(|v| t_weight(v, sigma, nu))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaEstimate {
    pub sigma: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fixed-point scale estimate. Starts from the RMS residual.
pub fn sigma_fixed_point(r: &[Rgb], nu: f64, tol: f64, max_iter: usize) -> f64 {
    sigma_fixed_point_detailed(r, nu, tol, max_iter).sigma
}

pub fn sigma_fixed_point_detailed(r: &[Rgb], nu: f64, tol: f64, max_iter: usize) -> SigmaEstimate {
    let count = 3 * r.len();
    if count == 0 {
        return SigmaEstimate {
            sigma: SIGMA_FLOOR,
            iterations: 0,
            converged: true,
        };
    }
    let inv = 1.0 / count as f64;
    let sq: Vec<f64> = r.iter().flat_map(|x| [x.x * x.x, x.y * x.y, x.z * x.z]).collect();
    let mean_sq = reduce::chunked_sum(r.len(), 0.0, |i| r[i].norm_squared()) * inv;
    let mut sigma = mean_sq.sqrt();
    if !(sigma > SIGMA_FLOOR) {
        return SigmaEstimate {
            sigma: SIGMA_FLOOR,
            iterations: 0,
            converged: true,
        };
    }
    for it in 1..=max_iter {
        let s2 = sigma * sigma;
        let next_sq = reduce::chunked_sum(r.len(), 0.0, |i| {
            let s = &sq[3 * i..3 * i + 3];
            s[0] * (nu + 1.0) / (nu + s[0] / s2)
                + s[1] * (nu + 1.0) / (nu + s[1] / s2)
                + s[2] * (nu + 1.0) / (nu + s[2] / s2)
        }) * inv;
        let next = next_sq.sqrt().max(SIGMA_FLOOR);
        let change = (next - sigma).abs() / sigma;
        sigma = next;
        if change < tol {
            return SigmaEstimate {
                sigma,
                iterations: it,
                converged: true,
            };
        }
    }
    SigmaEstimate {
        sigma,
        iterations: max_iter,
        converged: false,
    }
}

/// `Σ_j Σ_l w_jl r_jl²`.
pub fn weighted_loss(r: &[Rgb], w: &[Rgb]) -> f64 {
    debug_assert_eq!(r.len(), w.len());
    reduce::chunked_sum(r.len(), 0.0, |i| {
        w[i].component_mul(&r[i]).dot(&r[i])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn residual_examples() {
        let c = vec![Rgb::new(0.1, 0.2, 0.3), Rgb::new(0.5, 0.5, 0.5)];
        let r = residuals(&c, &c, &[true, true]).unwrap();
        assert!(r.iter().all(|x| *x == Rgb::zeros()));
        let r = residuals(&[Rgb::repeat(1.0)], &[Rgb::zeros()], &[true]).unwrap();
        assert_eq!(r, vec![Rgb::repeat(1.0)]);
        let r = residuals(&[Rgb::repeat(0.2)], &[Rgb::repeat(0.7)], &[true]).unwrap();
        assert!(r[0].iter().all(|&v| v < 0.0));
        let r = residuals(&c, &[Rgb::zeros(), Rgb::zeros()], &[false, true]).unwrap();
        assert_eq!(r, vec![Rgb::repeat(0.5)]);
        assert!(matches!(residuals(&c, &c, &[false, false]), Err(Error::Alignment(_))));
    }

    #[test]
    fn weight_examples() {
        assert!((t_weight(0.0, 0.3, 5.0) - 1.2).abs() < 1e-15);
        assert!((t_weight(0.3, 0.3, 5.0) - 1.0).abs() < 1e-15);
        assert!((t_weight(3.0, 0.3, 5.0) - 6.0 / 105.0).abs() < 1e-15);
    }

    #[test]
    fn weights_decrease_and_are_bounded() {
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let w = t_weight(i as f64 * 0.01, 0.1, 5.0);
            assert!(w < prev && w <= 6.0 / 5.0);
            prev = w;
        }
    }

    #[test]
    fn sigma_equal_residuals_closed_form() {
        for &rho in &[0.3, -0.05, 1e-3, 2.0] {
            let r = vec![Rgb::repeat(rho); 17];
            let s = sigma_fixed_point(&r, 5.0, 1e-6, 50);
            assert!((s - rho.abs()).abs() < 1e-9);
        }
        let single = sigma_fixed_point(&[Rgb::new(0.4, -0.4, 0.4)], 5.0, 1e-6, 50);
        assert!((single - 0.4).abs() < 1e-9);
    }

    #[test]
    fn sigma_all_zero_uses_floor() {
        let r = vec![Rgb::zeros(); 10];
        assert_eq!(sigma_fixed_point(&r, 5.0, 1e-6, 50), SIGMA_FLOOR);
        let w = t_weights(&r, SIGMA_FLOOR, 5.0);
        assert!(w.iter().all(|x| *x == Rgb::repeat(1.2)));
    }

    #[test]
    fn sigma_is_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r: Vec<Rgb> = (0..200)
                .map(|_| Rgb::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 0.2)
                .collect();
            let s = rng.random_range(0.1..10.0);
            let scaled: Vec<Rgb> = r.iter().map(|x| x * s).collect();
            let a = sigma_fixed_point(&r, 5.0, 1e-6, 50);
            let b = sigma_fixed_point(&scaled, 5.0, 1e-6, 50);
            assert!((b - s * a).abs() / (s * a) < 1e-9);
        }
    }

    #[test]
    fn sigma_converges_on_heavy_tails() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let n = rng.random_range(1..300);
            let cauchy = rng.random_bool(0.5);
            let r: Vec<Rgb> = (0..n)
                .map(|_| {
                    Rgb::from_fn(|_, _| {
                        if cauchy {
                            let u: f64 = rng.random_range(-1.5..1.5);
                            0.05 * u.tan()
                        } else {
                            rng.random_range(-0.3..0.3)
                        }
                    })
                })
                .collect();
            let est = sigma_fixed_point_detailed(&r, 5.0, 1e-6, 50);
            assert!(est.converged, "{est:?}");
            assert!(est.sigma > 0.0);
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(weighted_loss(&[Rgb::zeros()], &[Rgb::repeat(1.0)]), 0.0);
        let l = weighted_loss(&[Rgb::new(2.0, 0.0, 0.0)], &[Rgb::new(1.2, 1.0, 1.0)]);
        assert!((l - 4.8).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r: Vec<Rgb> = (0..100).map(|_| Rgb::new(rng.random(), rng.random(), rng.random())).collect();
        let w: Vec<Rgb> = (0..100).map(|_| Rgb::new(rng.random(), rng.random(), rng.random())).collect();
        let mut naive = 0.0;
        for j in 0..100 {
            for l in 0..3 {
                naive += w[j][l] * r[j][l] * r[j][l];
            }
        }
        assert!((weighted_loss(&r, &w) - naive).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn loss_is_permutation_invariant(
            vals in proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), 1..64),
            rot in 0usize..64,
        ) {
            let r: Vec<Rgb> = vals.iter().map(|v| Rgb::from(*v)).collect();
            let w = t_weights(&r, 0.3, 5.0);
            let mut idx: Vec<usize> = (0..r.len()).collect();
            idx.rotate_left(rot % r.len());
            idx.reverse();
            let rp: Vec<Rgb> = idx.iter().map(|&i| r[i]).collect();
            let wp: Vec<Rgb> = idx.iter().map(|&i| w[i]).collect();
            let a = weighted_loss(&r, &w);
            let b = weighted_loss(&rp, &wp);
            proptest::prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn loss_is_strictly_convex_in_residuals_for_fixed_weights(
            a in proptest::array::uniform3(-1.0f64..1.0),
            b in proptest::array::uniform3(-1.0f64..1.0),
            w in proptest::array::uniform3(0.01f64..1.2),
            t in 0.01f64..0.99,
        ) {
            let (ra, rb, wv) = (Rgb::from(a), Rgb::from(b), Rgb::from(w));
            proptest::prop_assume!((ra - rb).norm() > 1e-3);
            let mid = ra * (1.0 - t) + rb * t;
            let lm = weighted_loss(&[mid], &[wv]);
            let chord = (1.0 - t) * weighted_loss(&[ra], &[wv]) + t * weighted_loss(&[rb], &[wv]);
            proptest::prop_assert!(lm < chord);
        }
    }
}
