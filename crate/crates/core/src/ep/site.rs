//! Single-site operations: cavity, moment matching, global refresh.

use nalgebra::{DMatrix, DVector};

use super::EpError;
use crate::gaussian::{MomentGaussian, NaturalGaussian};
use crate::linalg::{symmetrize, CholeskyFactor, LinalgError};
use crate::tilted::{FactorHandle, ProjectedMoments};

/// One factor approximation `exp(hᵢᵗ(Ux) - ½ (Ux)ᵗKᵢ(Ux))` attached to `tᵢ(Ux)`.
#[derive(Debug, Clone)]
pub struct Site {
    /// Projection of shape `l × n`.
    pub u: DMatrix<f64>,
    pub h: DVector<f64>,
    pub k: DMatrix<f64>,
    pub factor: FactorHandle,
}

impl Site {
    /// A site with the default initialization `Kᵢ = I`, `hᵢ = 0`.
    pub fn new(u: DMatrix<f64>, factor: FactorHandle) -> Self {
        let l = u.nrows();
        assert_eq!(l, factor.dim(), "projection rows must match factor dimension");
        Self { h: DVector::zeros(l), k: DMatrix::identity(l, l), u, factor }
    }

    /// Scalar site on coordinate `j` of an `n`-vector.
    pub fn coordinate(n: usize, j: usize, factor: FactorHandle) -> Self {
        let mut u = DMatrix::zeros(1, n);
        u[(0, j)] = 1.0;
        Self::new(u, factor)
    }

    pub fn with_params(mut self, h: DVector<f64>, k: DMatrix<f64>) -> Self {
        self.h = h;
        self.k = k;
        self
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }
}

/// The cavity marginal on the projected space: `s = Ux` under `global / siteᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cavity {
    pub mean: DVector<f64>,
    /// `Ĉᵢ⁻¹`.
    pub prec: DMatrix<f64>,
    /// `Ĉᵢ`.
    pub cov: DMatrix<f64>,
}

/// `K̂ = UK⁻¹Uᵗ`, `Ĉ⁻¹ = K̂⁻¹ - Kᵢ`, `μ̂ = (I - K̂Kᵢ)⁻¹(UK⁻¹h - K̂hᵢ)`.
///
/// The mean is evaluated as `Ĉ(K̂⁻¹UK⁻¹h - hᵢ)`, which is the same expression
/// with the inverse factored out.
pub fn cavity(global: &NaturalGaussian, site: &Site) -> Result<Cavity, EpError> {
    let lf = global.factor();
    let z = lf.forward_solve(&site.u.transpose());
    let w = lf.forward_solve(&DMatrix::from_column_slice(global.dim(), 1, global.h().as_slice()));
    let k_hat = z.transpose() * &z;
    let marginal_mean = (z.transpose() * w).column(0).into_owned();
    let k_hat_factor = CholeskyFactor::new(&k_hat).map_err(|_| EpError::CavityInvalid)?;
    let k_hat_inv = k_hat_factor.inverse();
    let mut prec = &k_hat_inv - &site.k;
    symmetrize(&mut prec);
    let prec_factor = CholeskyFactor::new(&prec).map_err(|_| EpError::CavityInvalid)?;
    let cov = prec_factor.inverse();
    let mean = &cov * (&k_hat_inv * marginal_mean - &site.h);
    Ok(Cavity { mean, prec, cov })
}

/// Moment matching: `Kᵢ = Var⁻¹ - Ĉ⁻¹`, `hᵢ = Var⁻¹E - Ĉ⁻¹μ̂`.
pub fn update_site(cavity: &Cavity, tm: &ProjectedMoments) -> Result<(DVector<f64>, DMatrix<f64>), EpError> {
    let var_factor = CholeskyFactor::new(&tm.cov).map_err(|_| EpError::TiltedVarianceNotPositive)?;
    let var_inv = var_factor.inverse();
    let mut k = &var_inv - &cavity.prec;
    symmetrize(&mut k);
    let h = &var_inv * &tm.mean - &cavity.prec * &cavity.mean;
    Ok((h, k))
}

/// Replaces the site's contribution `(Uᵗhᵢ, UᵗKᵢU)` in the global approximation
/// by one built from `(h_new, k_new)`. The factor of `K` is maintained by
/// rank-one up/downdates. On failure `global` is untouched.
pub fn refresh_global(global: &mut NaturalGaussian, site: &Site, h_new: &DVector<f64>, k_new: &DMatrix<f64>) -> Result<(), LinalgError> {
    let dh = h_new - &site.h;
    let dk = k_new - &site.k;
    if dh.iter().all(|&v| v == 0.0) && dk.iter().all(|&v| v == 0.0) {
        return Ok(());
    }
    global.apply_low_rank(&site.u, &dh, &dk)
}

/// Gaussian with the moments of `Z⁻¹ t(Ux) N(x; μ, C)` given the moments
/// `(s̄, C̄)` of the projected tilted law:
/// `μ* = μ + CUᵗ(UCUᵗ)⁻¹(s̄ - Uμ)`,
/// `C* = C + CUᵗ(UCUᵗ)⁻¹(C̄ - UCUᵗ)(UCUᵗ)⁻¹UC`.
pub fn project_moments(
    mu: &DVector<f64>,
    c: &DMatrix<f64>,
    u: &DMatrix<f64>,
    sbar: &DVector<f64>,
    cbar: &DMatrix<f64>,
) -> Result<MomentGaussian, LinalgError> {
    let cut = c * u.transpose();
    let s = u * &cut;
    let gain = CholeskyFactor::new(&s)?.solve(&cut.transpose()).transpose();
    let mean = mu + &gain * (sbar - u * mu);
    let mut cov = c + &gain * (cbar - &s) * gain.transpose();
    symmetrize(&mut cov);
    Ok(MomentGaussian { mean, cov })
}

/// Moments of `Z⁻¹ t(Ux) N(x; μ, C)` for a site factor, with `ln Z`.
pub fn tilted_projection(prior: &MomentGaussian, u: &DMatrix<f64>, factor: &FactorHandle) -> Result<(f64, MomentGaussian), EpError> {
    let s_mean = u * &prior.mean;
    let mut s_cov = u * &prior.cov * u.transpose();
    symmetrize(&mut s_cov);
    let pm = factor.tilted(&s_mean, &s_cov).map_err(EpError::Tilted)?;
    let g = project_moments(&prior.mean, &prior.cov, u, &pm.mean, &pm.cov).map_err(EpError::GlobalNotPositiveDefinite)?;
    Ok((pm.log_z, g))
}

/// Largest relative change between two site parameter pairs, taken separately
/// over `h` and `K`.
pub fn relative_change(h_old: &DVector<f64>, k_old: &DMatrix<f64>, h_new: &DVector<f64>, k_new: &DMatrix<f64>) -> f64 {
    fn rel(diff: f64, a: f64, b: f64) -> f64 {
        if diff == 0.0 {
            0.0
        } else {
            diff / a.max(b).max(f64::MIN_POSITIVE)
        }
    }
    let dh = rel((h_new - h_old).norm(), h_old.norm(), h_new.norm());
    let dk = rel((k_new - k_old).norm(), k_old.norm(), k_new.norm());
    dh.max(dk)
}
