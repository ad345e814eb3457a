//! Moments of tilted Gaussians `Z⁻¹ t(s) N(s; m, v)`.
//!
//! Every nongaussian factor enters EP only through these three numbers
//! (`ln Z`, mean, variance) evaluated at a cavity `(m, v)`. Factors with a
//! one-dimensional argument implement [`ScalarFactor`]; the EP engine talks
//! to the more general [`SiteFactor`], which every scalar factor gets for free.

mod laplace;
pub mod quadrature;
pub mod special;
pub mod truncated;

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use laplace::{moments_laplace_positivity, LaplacePositivityFactor};
pub use quadrature::{moments_quadrature, PointwiseFactor, QuadratureOptions};

/// Below this `ln Z` nothing of the tilted mass is representable in double precision.
pub const LOG_Z_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TiltedError {
    #[error("factor support carries no representable mass (ln Z = {log_z})")]
    DegenerateSupport { log_z: f64 },
    #[error("cavity variance must be positive and finite, got {0}")]
    InvalidVariance(f64),
    #[error("quadrature did not converge after {panels} panels (relative error {error:e})")]
    QuadratureNotConverged { panels: usize, error: f64 },
}

/// `(ln Z, mean, var)` of a one-dimensional tilted distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedMoments {
    pub log_z: f64,
    pub mean: f64,
    pub var: f64,
}

/// Moments of an `l`-dimensional tilted distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedMoments {
    pub log_z: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl From<TiltedMoments> for ProjectedMoments {
    fn from(tm: TiltedMoments) -> Self {
        ProjectedMoments { log_z: tm.log_z, mean: DVector::from_element(1, tm.mean), cov: DMatrix::from_element(1, 1, tm.var) }
    }
}

/// A factor depending on one linear functional `s = uᵗx`.
pub trait ScalarFactor: Debug + Send + Sync {
    fn tilted_moments(&self, m: f64, v: f64) -> Result<TiltedMoments, TiltedError>;
    /// Whether `ln t` is concave; enables the PSD site-precision guarantee.
    fn is_log_concave(&self) -> bool;
}

/// A factor `t(Ux)` with `U` of shape `l × n`, as seen by the EP engine.
pub trait SiteFactor: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn tilted(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<ProjectedMoments, TiltedError>;
    fn is_log_concave(&self) -> bool;
}

impl<T: ScalarFactor> SiteFactor for T {
    fn dim(&self) -> usize {
        1
    }

    fn tilted(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<ProjectedMoments, TiltedError> {
        self.tilted_moments(mean[0], cov[(0, 0)]).map(Into::into)
    }

    fn is_log_concave(&self) -> bool {
        ScalarFactor::is_log_concave(self)
    }
}

/// Shared handle used by sites.
pub type FactorHandle = Arc<dyn SiteFactor>;

/// A Gaussian factor `t(s) = N(s; mean, cov)` of any dimension; its tilted
/// moments are the closed-form product of two Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianFactor {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn scalar(mean: f64, var: f64) -> Self {
        Self { mean: DVector::from_element(1, mean), cov: DMatrix::from_element(1, 1, var) }
    }
}

/// Product-of-Gaussians moments: `var = (1/v + 1/v_t)⁻¹`,
/// `mean = var (m/v + m_t/v_t)`, `ln Z = ln N(m; m_t, v + v_t)`.
pub fn moments_gaussian_factor(t_mean: f64, t_var: f64, m: f64, v: f64) -> Result<TiltedMoments, TiltedError> {
    if !(v > 0.0) {
        return Err(TiltedError::InvalidVariance(v));
    }
    if !(t_var > 0.0) {
        return Err(TiltedError::InvalidVariance(t_var));
    }
    let var = 1.0 / (1.0 / v + 1.0 / t_var);
    let mean = var * (m / v + t_mean / t_var);
    let s = v + t_var;
    let log_z = -0.5 * (2.0 * std::f64::consts::PI * s).ln() - 0.5 * (m - t_mean).powi(2) / s;
    Ok(TiltedMoments { log_z, mean, var })
}

impl SiteFactor for GaussianFactor {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn tilted(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<ProjectedMoments, TiltedError> {
        if self.dim() == 1 {
            return moments_gaussian_factor(self.mean[0], self.cov[(0, 0)], mean[0], cov[(0, 0)]).map(Into::into);
        }
        let l = self.dim();
        let sum = cov + &self.cov;
        let sum_chol = crate::linalg::CholeskyFactor::new(&sum).map_err(|_| TiltedError::InvalidVariance(f64::NAN))?;
        // C_post = C - C (C + C_t)⁻¹ C ; μ_post = μ + C (C + C_t)⁻¹ (μ_t - μ)
        let gain = sum_chol.solve(cov).transpose();
        let diff = &self.mean - mean;
        let post_mean = mean + &gain * &diff;
        let mut post_cov = cov - &gain * cov;
        crate::linalg::symmetrize(&mut post_cov);
        let quad = diff.dot(&sum_chol.solve_vec(&diff));
        let log_z = -0.5 * (l as f64 * (2.0 * std::f64::consts::PI).ln() + sum_chol.log_det() + quad);
        Ok(ProjectedMoments { log_z, mean: post_mean, cov: post_cov })
    }

    fn is_log_concave(&self) -> bool {
        true
    }
}

/// A scalar factor given only pointwise; tilted moments by adaptive quadrature.
pub struct QuadratureFactor<F> {
    ln_value: F,
    support: (f64, f64),
    breakpoints: Vec<f64>,
    log_concave: bool,
    pub options: QuadratureOptions,
}

impl<F> QuadratureFactor<F>
where
    F: Fn(f64) -> f64 + Send + Sync,
{
    pub fn new(ln_value: F, support: (f64, f64), breakpoints: Vec<f64>, log_concave: bool) -> Self {
        Self { ln_value, support, breakpoints, log_concave, options: QuadratureOptions::default() }
    }
}

impl<F> Debug for QuadratureFactor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuadratureFactor")
            .field("support", &self.support)
            .field("breakpoints", &self.breakpoints)
            .field("log_concave", &self.log_concave)
            .finish()
    }
}

impl<F: Fn(f64) -> f64> PointwiseFactor for QuadratureFactor<F> {
    fn ln_value(&self, s: f64) -> f64 {
        if s < self.support.0 || s > self.support.1 {
            return f64::NEG_INFINITY;
        }
        (self.ln_value)(s)
    }

    fn support(&self) -> (f64, f64) {
        self.support
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
}

impl<F> ScalarFactor for QuadratureFactor<F>
where
    F: Fn(f64) -> f64 + Send + Sync,
{
    fn tilted_moments(&self, m: f64, v: f64) -> Result<TiltedMoments, TiltedError> {
        let tm = moments_quadrature(self, m, v, &self.options)?;
        if tm.log_z < LOG_Z_FLOOR {
            return Err(TiltedError::DegenerateSupport { log_z: tm.log_z });
        }
        Ok(tm)
    }

    fn is_log_concave(&self) -> bool {
        self.log_concave
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_factor_examples() {
        let tm = moments_gaussian_factor(0.0, 1.0, 0.0, 1.0).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln();
        assert!((tm.log_z - want).abs() < 1e-15);
        assert_eq!(tm.mean, 0.0);
        assert_eq!(tm.var, 0.5);

        let tm = moments_gaussian_factor(2.0, 1.0, 0.0, 1.0).unwrap();
        assert!((tm.mean - 1.0).abs() < 1e-15 && (tm.var - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_factor_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let (mt, vt) = (rng.random_range(-3.0..3.0), rng.random_range(0.1..4.0));
            let (m, v) = (rng.random_range(-3.0..3.0), rng.random_range(0.1..4.0));
            let closed = moments_gaussian_factor(mt, vt, m, v).unwrap();
            let quad = QuadratureFactor::new(
                move |s: f64| -0.5 * (s - mt).powi(2) / vt - 0.5 * (2.0 * std::f64::consts::PI * vt).ln(),
                (f64::NEG_INFINITY, f64::INFINITY),
                vec![],
                true,
            );
            let q = quad.tilted_moments(m, v).unwrap();
            assert!((closed.log_z - q.log_z).abs() <= 1e-10 * closed.log_z.abs().max(1.0));
            assert!((closed.mean - q.mean).abs() <= 1e-10 * closed.mean.abs().max(closed.var.sqrt()));
            assert!((closed.var - q.var).abs() <= 1e-10 * closed.var);
        }
    }

    #[test]
    fn multivariate_gaussian_factor_reduces_to_scalar() {
        let g = GaussianFactor::scalar(1.5, 0.7);
        let pm = g.tilted(&DVector::from_element(1, -0.5), &DMatrix::from_element(1, 1, 2.0)).unwrap();
        let tm = moments_gaussian_factor(1.5, 0.7, -0.5, 2.0).unwrap();
        assert_eq!(pm.mean[0], tm.mean);
        assert_eq!(pm.cov[(0, 0)], tm.var);

        // diagonal 2-D factor is the product of two scalar ones
        let g2 = GaussianFactor::new(DVector::from_vec(vec![1.5, -1.0]), DMatrix::from_diagonal(&DVector::from_vec(vec![0.7, 1.3])));
        let pm = g2.tilted(&DVector::from_vec(vec![-0.5, 0.25]), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.4]))).unwrap();
        let a = moments_gaussian_factor(1.5, 0.7, -0.5, 2.0).unwrap();
        let b = moments_gaussian_factor(-1.0, 1.3, 0.25, 0.4).unwrap();
        assert!((pm.log_z - (a.log_z + b.log_z)).abs() < 1e-13);
        assert!((pm.mean[0] - a.mean).abs() < 1e-14 && (pm.mean[1] - b.mean).abs() < 1e-14);
        assert!((pm.cov[(0, 0)] - a.var).abs() < 1e-14 && pm.cov[(0, 1)].abs() < 1e-15);
    }
}
