//! Linear inverse problem `b = Ax + noise` with the Laplace prior and
//! positivity constraint: the setting where EP can be checked against
//! sampling.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::ep::{run_ep, EPOptions, EPResult, EpError, Site};
use crate::gaussian::NaturalParams;
use crate::mcmc::LaplacePrior;
use crate::nonlinear::LinearModel;
use crate::tilted::LaplacePositivityFactor;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLaplaceProblem {
    pub a: DMatrix<f64>,
    pub data: DVector<f64>,
    pub alpha: f64,
    pub prior: LaplacePrior,
}

impl LinearLaplaceProblem {
    /// Random problem: `A` with i.i.d. `N(0, 1/m)` entries, truth equal to the
    /// background except for `n/4` perturbed components, noise `N(0, 1/α)`.
    pub fn synthetic(m: usize, n: usize, alpha: f64, prior: LaplacePrior, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (m as f64).sqrt();
        let a = DMatrix::from_fn(m, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let mut truth = DVector::from_element(n, prior.background);
        for k in 0..(n / 4).max(1) {
            let j = (k * 4 + 1) % n;
            truth[j] = prior.background * rng.random_range(0.3..2.0);
        }
        let noise = Normal::new(0.0, 1.0 / alpha.sqrt()).expect("positive noise std");
        let data = &a * &truth + DVector::from_fn(m, |_, _| noise.sample(&mut rng));
        Self { a, data, alpha, prior }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn model(&self) -> LinearModel {
        LinearModel { a: self.a.clone() }
    }

    /// Likelihood in natural form: `(αAᵗb, αAᵗA)`.
    pub fn likelihood(&self) -> NaturalParams {
        let at = self.a.transpose();
        NaturalParams::new(&at * &self.data * self.alpha, &at * &self.a * self.alpha)
    }

    pub fn sites(&self) -> Vec<Site> {
        let n = self.dim();
        let f = Arc::new(LaplacePositivityFactor::new(self.prior.lambda, self.prior.background, self.prior.floor));
        (0..n).map(|j| Site::coordinate(n, j, f.clone())).collect()
    }

    pub fn run_ep(&self, opts: &EPOptions) -> Result<EPResult, EpError> {
        run_ep(&self.likelihood(), self.sites(), opts)
    }

    pub fn log_posterior(&self, x: &DVector<f64>) -> f64 {
        let lp = self.prior.log_density(x);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp - 0.5 * self.alpha * (&self.a * x - &self.data).norm_squared()
    }
}
