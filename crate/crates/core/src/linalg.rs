//! Dense symmetric-positive-definite kernels.
//!
//! The EP engine keeps the global precision matrix in factored form and
//! modifies it one symmetric rank-one term at a time, so everything here is
//! written around a lower-triangular [`CholeskyFactor`] that can be updated
//! (`A + x xᵗ`) and downdated (`A - x xᵗ`) in `O(n²)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative pivot tolerance: a pivot below `PIVOT_TOL * max(diag(A))` is
/// treated as a loss of positive definiteness.
pub const PIVOT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("cholesky downdate lost positive definiteness at column {column}")]
    DowndateFailed { column: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Sign of a symmetric rank-one modification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateSign {
    Update,
    Downdate,
}

impl UpdateSign {
    fn as_f64(self) -> f64 {
        match self {
            UpdateSign::Update => 1.0,
            UpdateSign::Downdate => -1.0,
        }
    }
}

/// Lower-triangular `L` with `L Lᵗ = A`. The strict upper triangle is kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
}

/// Factorizes a symmetric matrix. Only the lower triangle of `a` is read.
pub fn cholesky(a: &DMatrix<f64>) -> Result<CholeskyFactor, LinalgError> {
    CholeskyFactor::new(a)
}

impl CholeskyFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinalgError::DimensionMismatch { expected: n, found: a.ncols() });
        }
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
        let tol = PIVOT_TOL * max_diag;
        let mut l = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                l[(j, i)] = a[(j, i)];
            }
        }
        // Right-looking column sweep: column-major access stays contiguous.
        for k in 0..n {
            let pivot = l[(k, k)];
            if !(pivot > tol) || !pivot.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { pivot: k, value: pivot });
            }
            let d = pivot.sqrt();
            l[(k, k)] = d;
            for i in (k + 1)..n {
                l[(i, k)] /= d;
            }
            for j in (k + 1)..n {
                let ljk = l[(j, k)];
                if ljk == 0.0 {
                    continue;
                }
                for i in j..n {
                    let lik = l[(i, k)];
                    l[(i, j)] -= lik * ljk;
                }
            }
        }
        Ok(Self { lower: l })
    }

    /// Wraps an existing lower-triangular factor without checking it.
    pub fn from_lower_unchecked(lower: DMatrix<f64>) -> Self {
        Self { lower }
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// `L Lᵗ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.lower[(i, i)].ln()).sum::<f64>()
    }

    fn max_represented_diag(&self) -> f64 {
        let n = self.dim();
        let mut diag = vec![0.0; n];
        for k in 0..n {
            for i in k..n {
                diag[i] += self.lower[(i, k)] * self.lower[(i, k)];
            }
        }
        diag.into_iter().fold(0.0, f64::max)
    }

    /// In-place rank-one modification to the factor of `A + sign · x xᵗ`.
    ///
    /// Updates use Givens rotations, downdates the hyperbolic analogue. On
    /// failure the factor is left exactly as it was.
    pub fn rank1_update_in_place(&mut self, x: &DVector<f64>, sign: UpdateSign) -> Result<(), LinalgError> {
        let n = self.dim();
        if x.len() != n {
            return Err(LinalgError::DimensionMismatch { expected: n, found: x.len() });
        }
        let s = sign.as_f64();
        let backup = match sign {
            UpdateSign::Downdate => Some(self.lower.clone()),
            UpdateSign::Update => None,
        };
        let tol = match sign {
            UpdateSign::Downdate => PIVOT_TOL * self.max_represented_diag(),
            UpdateSign::Update => 0.0,
        };
        let mut w = x.clone();
        for k in 0..n {
            let wk = w[k];
            if wk == 0.0 {
                continue;
            }
            let lkk = self.lower[(k, k)];
            let r2 = lkk * lkk + s * wk * wk;
            if !(r2 > tol) || !r2.is_finite() {
                if let Some(b) = backup {
                    self.lower = b;
                }
                return Err(LinalgError::DowndateFailed { column: k });
            }
            let r = r2.sqrt();
            let c = r / lkk;
            let sn = wk / lkk;
            self.lower[(k, k)] = r;
            for i in (k + 1)..n {
                let lik = (self.lower[(i, k)] + s * sn * w[i]) / c;
                self.lower[(i, k)] = lik;
                w[i] = c * w[i] - sn * lik;
            }
        }
        Ok(())
    }

    /// Pure variant of [`Self::rank1_update_in_place`].
    pub fn rank1_update(&self, x: &DVector<f64>, sign: UpdateSign) -> Result<Self, LinalgError> {
        let mut out = self.clone();
        out.rank1_update_in_place(x, sign)?;
        Ok(out)
    }

    /// Solves `L y = b` in place.
    pub fn forward_substitute_in_place(&self, b: &mut DMatrix<f64>) {
        let n = self.dim();
        assert_eq!(b.nrows(), n, "rhs row count must match factor dimension");
        for col in 0..b.ncols() {
            for j in 0..n {
                let yj = b[(j, col)] / self.lower[(j, j)];
                b[(j, col)] = yj;
                if yj != 0.0 {
                    for i in (j + 1)..n {
                        b[(i, col)] -= self.lower[(i, j)] * yj;
                    }
                }
            }
        }
    }

    /// Solves `Lᵗ x = y` in place.
    pub fn backward_substitute_in_place(&self, b: &mut DMatrix<f64>) {
        let n = self.dim();
        assert_eq!(b.nrows(), n, "rhs row count must match factor dimension");
        for col in 0..b.ncols() {
            for j in (0..n).rev() {
                let mut acc = b[(j, col)];
                for i in (j + 1)..n {
                    acc -= self.lower[(i, j)] * b[(i, col)];
                }
                b[(j, col)] = acc / self.lower[(j, j)];
            }
        }
    }

    /// `L⁻¹ B`.
    pub fn forward_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.forward_substitute_in_place(&mut out);
        out
    }

    /// `A⁻¹ B` by forward and backward substitution.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.forward_substitute_in_place(&mut out);
        self.backward_substitute_in_place(&mut out);
        out
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.forward_substitute_in_place(&mut m);
        self.backward_substitute_in_place(&mut m);
        DVector::from_column_slice(m.as_slice())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.solve(&DMatrix::identity(self.dim(), self.dim()));
        symmetrize(&mut inv);
        inv
    }
}

/// `solve(F, B)` in free-function form.
pub fn solve(factor: &CholeskyFactor, b: &DMatrix<f64>) -> DMatrix<f64> {
    factor.solve(b)
}

/// `(A + W Wᵗ)⁻¹` from the factor of `A` by the Woodbury identity,
/// `A⁻¹ - A⁻¹W (I + WᵗA⁻¹W)⁻¹ WᵗA⁻¹`.
pub fn woodbury_inverse(a: &CholeskyFactor, w: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let a_inv_w = a.solve(w);
    let capacitance = DMatrix::identity(w.ncols(), w.ncols()) + w.transpose() * &a_inv_w;
    let cap = CholeskyFactor::new(&capacitance)?;
    let correction = &a_inv_w * cap.solve(&a_inv_w.transpose());
    let mut out = a.inverse() - correction;
    symmetrize(&mut out);
    Ok(out)
}

/// Replaces `m` by `(m + mᵗ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// `‖a - b‖_F / ‖b‖_F`, falling back to the absolute error when `b = 0`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    let num = (a - b).norm();
    if denom > 0.0 {
        num / denom
    } else {
        num
    }
}
