//! Gaussians in moment form `(μ, C)` and natural form `(h, K) = (C⁻¹μ, C⁻¹)`.
//!
//! Products and quotients of Gaussian densities are sums and differences of
//! natural parameters, which is what makes site bookkeeping in EP cheap.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::linalg::{symmetrize, CholeskyFactor, LinalgError, UpdateSign};

/// Mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl MomentGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.cov[(i, i)].max(0.0).sqrt())
    }
}

/// Raw natural parameters. Not necessarily a proper density: a cavity
/// `global / site` may have an indefinite precision.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    pub h: DVector<f64>,
    pub k: DMatrix<f64>,
}

impl NaturalParams {
    pub fn new(h: DVector<f64>, k: DMatrix<f64>) -> Self {
        Self { h, k }
    }

    pub fn zeros(n: usize) -> Self {
        Self { h: DVector::zeros(n), k: DMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    /// Parameters of the `n`-dimensional density `x ↦ g(Ux)` for `U` of shape `l × n`:
    /// `(Uᵗh, UᵗKU)`.
    pub fn lift(&self, u: &DMatrix<f64>) -> NaturalParams {
        let ut = u.transpose();
        NaturalParams { h: &ut * &self.h, k: &ut * &self.k * u }
    }

    pub fn product(&self, other: &NaturalParams) -> NaturalParams {
        NaturalParams { h: &self.h + &other.h, k: &self.k + &other.k }
    }

    pub fn quotient(&self, other: &NaturalParams) -> NaturalParams {
        NaturalParams { h: &self.h - &other.h, k: &self.k - &other.k }
    }

    pub fn into_gaussian(self) -> Result<NaturalGaussian, LinalgError> {
        NaturalGaussian::new(self.h, self.k)
    }
}

/// A proper Gaussian in natural form with the Cholesky factor of `K` kept in sync.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalGaussian {
    h: DVector<f64>,
    k: DMatrix<f64>,
    factor: CholeskyFactor,
}

impl NaturalGaussian {
    pub fn new(h: DVector<f64>, k: DMatrix<f64>) -> Result<Self, LinalgError> {
        if h.len() != k.nrows() {
            return Err(LinalgError::DimensionMismatch { expected: k.nrows(), found: h.len() });
        }
        let factor = CholeskyFactor::new(&k)?;
        Ok(Self { h, k, factor })
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn params(&self) -> NaturalParams {
        NaturalParams { h: self.h.clone(), k: self.k.clone() }
    }

    pub fn mean(&self) -> DVector<f64> {
        self.factor.solve_vec(&self.h)
    }

    pub fn product(&self, other: &NaturalGaussian) -> Result<NaturalGaussian, LinalgError> {
        NaturalGaussian::new(&self.h + &other.h, &self.k + &other.k)
    }

    /// Multiplies in (`sign = Update`) or divides out (`Downdate`) the lifted
    /// low-rank term `(Uᵗ dh, Uᵗ dK U)`, maintaining the factor by rank-one
    /// up/downdates along the eigenvectors of `dK`. On failure nothing changes.
    pub fn apply_low_rank(&mut self, u: &DMatrix<f64>, dh: &DVector<f64>, dk: &DMatrix<f64>) -> Result<(), LinalgError> {
        let l = u.nrows();
        if u.ncols() != self.dim() {
            return Err(LinalgError::DimensionMismatch { expected: self.dim(), found: u.ncols() });
        }
        if dh.len() != l || dk.nrows() != l {
            return Err(LinalgError::DimensionMismatch { expected: l, found: dh.len() });
        }
        let terms = rank_one_terms(dk);
        let mut factor = self.factor.clone();
        // Updates first so the intermediate matrix stays as well-conditioned as possible.
        for (weight, dir) in terms.iter().filter(|(w, _)| *w > 0.0).chain(terms.iter().filter(|(w, _)| *w < 0.0)) {
            let x = u.transpose() * dir * weight.abs().sqrt();
            let sign = if *weight > 0.0 { UpdateSign::Update } else { UpdateSign::Downdate };
            factor.rank1_update_in_place(&x, sign)?;
        }
        self.factor = factor;
        self.k += u.transpose() * dk * u;
        symmetrize(&mut self.k);
        self.h += u.transpose() * dh;
        Ok(())
    }

    /// Refactorizes `K` from scratch.
    pub fn refactor(&mut self) -> Result<(), LinalgError> {
        self.factor = CholeskyFactor::new(&self.k)?;
        Ok(())
    }
}

/// Eigen-split of a small symmetric matrix into signed rank-one terms
/// `Σ wⱼ qⱼ qⱼᵗ`. Exact zeros are dropped.
fn rank_one_terms(dk: &DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let l = dk.nrows();
    if l == 1 {
        return if dk[(0, 0)] != 0.0 { vec![(dk[(0, 0)], DVector::from_element(1, 1.0))] } else { vec![] };
    }
    let eig = SymmetricEigen::new(dk.clone());
    (0..l).filter(|&j| eig.eigenvalues[j] != 0.0).map(|j| (eig.eigenvalues[j], eig.eigenvectors.column(j).into_owned())).collect()
}

/// `μ = K⁻¹h`, `C = K⁻¹`.
pub fn moment_from_natural(g: &NaturalGaussian) -> MomentGaussian {
    MomentGaussian { mean: g.mean(), cov: g.factor.inverse() }
}

pub fn natural_from_moment(m: &MomentGaussian) -> Result<NaturalGaussian, LinalgError> {
    let cf = CholeskyFactor::new(&m.cov)?;
    let k = cf.inverse();
    let h = &k * &m.mean;
    NaturalGaussian::new(h, k)
}

/// `(h - Uᵗhᵢ, K - UᵗKᵢU)`; positive definiteness is left to the caller.
pub fn natural_quotient(g: &NaturalGaussian, u: &DMatrix<f64>, h_i: &DVector<f64>, k_i: &DMatrix<f64>) -> NaturalParams {
    g.params().quotient(&NaturalParams::new(h_i.clone(), k_i.clone()).lift(u))
}
