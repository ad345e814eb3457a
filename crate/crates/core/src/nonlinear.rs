//! Recursive linearization for nonlinear models `F(x) = b`: linearize at the
//! current iterate, run EP on the linearized posterior, then move towards the
//! EP mean with a Barzilai–Borwein step.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ep::{run_ep, table4_metrics, EPOptions, EpError, Site, Snapshot};
use crate::gaussian::NaturalParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter outside the model's admissible set: {0}")]
    NotAdmissible(String),
    #[error("forward solve failed: {0}")]
    Solve(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// A differentiable map `F: ℝⁿ → ℝᵐ`.
pub trait ForwardModel: Sync {
    /// `(m, n)`.
    fn dims(&self) -> (usize, usize);
    fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError>;
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, ModelError>;

    /// `F(x)` and `F′(x)` together; override when they share work.
    fn evaluate_with_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), ModelError> {
        Ok((self.evaluate(x)?, self.jacobian(x)?))
    }
}

/// `F(x) = Ax`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
}

impl ForwardModel for LinearModel {
    fn dims(&self) -> (usize, usize) {
        self.a.shape()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        if x.len() != self.a.ncols() {
            return Err(ModelError::DimensionMismatch { expected: self.a.ncols(), found: x.len() });
        }
        Ok(&self.a * x)
    }

    fn jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
        Ok(self.a.clone())
    }
}

/// Natural parameters of `exp(-α/2 ‖F(μ) + J(x - μ) - b‖²)`:
/// `K₀ = αJᵗJ`, `h₀ = αJᵗ(b - F(μ) + Jμ)`. `K₀` is in general only semidefinite.
pub fn linearize(model: &dyn ForwardModel, mu: &DVector<f64>, data: &DVector<f64>, alpha: f64) -> Result<NaturalParams, ModelError> {
    let (f, j) = model.evaluate_with_jacobian(mu)?;
    Ok(linearize_from(&f, &j, mu, data, alpha))
}

fn linearize_from(f: &DVector<f64>, j: &DMatrix<f64>, mu: &DVector<f64>, data: &DVector<f64>, alpha: f64) -> NaturalParams {
    let jt = j.transpose();
    let k = alpha * &jt * j;
    let h = alpha * &jt * (data - f + j * mu);
    NaturalParams::new(h, k)
}

/// `τ = ⟨μᵏ - μᵏ⁻¹, dᵏ - dᵏ⁻¹⟩ / ‖μᵏ - μᵏ⁻¹‖²` clamped to `[0, 1]`, with
/// `d = μ* - μ`. Returns 1 when the two iterates coincide.
pub fn bb_step(mu_k: &DVector<f64>, mu_km1: &DVector<f64>, d_k: &DVector<f64>, d_km1: &DVector<f64>) -> f64 {
    let s = mu_k - mu_km1;
    let ss = s.dot(&s);
    if ss == 0.0 {
        return 1.0;
    }
    let tau = s.dot(&(d_k - d_km1)) / ss;
    tau.clamp(0.0, 1.0)
}

/// Inverse-curvature Barzilai–Borwein step `⟨s, s⟩ / ⟨s, y⟩` for the residual
/// `d`, with `s = μᵏ - μᵏ⁻¹` and `y = dᵏ⁻¹ - dᵏ`, clamped to `[0, 1]`.
/// Nonpositive curvature `⟨s, y⟩ ≤ 0` and coinciding iterates give 1.
pub fn bb_secant_step(mu_k: &DVector<f64>, mu_km1: &DVector<f64>, d_k: &DVector<f64>, d_km1: &DVector<f64>) -> f64 {
    let s = mu_k - mu_km1;
    let sy = s.dot(&(d_km1 - d_k));
    if s.dot(&s) == 0.0 || !(sy > 0.0) {
        return 1.0;
    }
    (s.dot(&s) / sy).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// [`bb_step`].
    BarzilaiBorwein,
    /// [`bb_secant_step`].
    #[default]
    BarzilaiBorweinSecant,
    /// Always step to the EP mean.
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearOptions {
    pub max_outer: usize,
    /// Stop when `‖μ* - μ‖ / ‖μ‖` falls below this.
    pub outer_tol: f64,
    pub alpha: f64,
    pub ep: EPOptions,
    pub step_rule: StepRule,
    /// Componentwise lower bound applied to every linearization point.
    pub floor: Option<f64>,
}

impl NonlinearOptions {
    pub fn new(alpha: f64) -> Self {
        Self { max_outer: 7, outer_tol: 1e-3, alpha, ep: EPOptions::default(), step_rule: StepRule::default(), floor: None }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NonlinearError {
    #[error(transparent)]
    Ep(#[from] EpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("iterate became non-finite at outer iteration {outer}")]
    NonFiniteIterate { outer: usize },
    #[error("invalid options: {0}")]
    InvalidOptions(&'static str),
}

/// One row per inner EP sweep, numbered from 1 in both indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub outer: usize,
    pub inner: usize,
    pub e_p_mu: f64,
    pub e_f_mu: f64,
    pub e_p_c: f64,
    pub e_f_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub outer: usize,
    /// `‖F(μᵏ) - b‖` at the linearization point.
    pub misfit: f64,
    /// `‖μ*ᵏ - μᵏ‖ / ‖μᵏ‖`.
    pub residual: f64,
    /// Step taken after this iteration (NaN on the stopping iteration).
    pub tau: f64,
    pub inner_sweeps: usize,
    pub inner_converged: bool,
    pub skipped_sites: usize,
}

#[derive(Debug, Clone)]
pub struct NonlinearResult {
    /// Mean of the last EP approximation.
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Last linearization point.
    pub iterate: DVector<f64>,
    pub converged: bool,
    pub outer: Vec<OuterRecord>,
    pub trace: Vec<TraceRow>,
    pub total_inner_sweeps: usize,
    pub sites: Vec<Site>,
}

impl NonlinearResult {
    pub fn std(&self) -> DVector<f64> {
        DVector::from_fn(self.mean.len(), |i, _| self.cov[(i, i)].max(0.0).sqrt())
    }
}

fn clamp_floor(x: &mut DVector<f64>, floor: Option<f64>) {
    if let Some(lo) = floor {
        x.iter_mut().for_each(|v| *v = v.max(lo));
    }
}

/// Runs recursive-linearization EP from `mu0`. Sites are warm-started from
/// one outer iteration to the next.
pub fn run_nonlinear(
    model: &dyn ForwardModel,
    data: &DVector<f64>,
    sites: Vec<Site>,
    mu0: &DVector<f64>,
    opts: &NonlinearOptions,
) -> Result<NonlinearResult, NonlinearError> {
    if !(opts.alpha > 0.0) {
        return Err(NonlinearError::InvalidOptions("alpha must be positive"));
    }
    if opts.max_outer == 0 {
        return Err(NonlinearError::InvalidOptions("max_outer must be at least 1"));
    }
    let (m, n) = model.dims();
    if data.len() != m || mu0.len() != n {
        return Err(ModelError::DimensionMismatch { expected: m, found: data.len() }.into());
    }

    let mut mu = mu0.clone();
    clamp_floor(&mut mu, opts.floor);
    let mut sites = sites;
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut outer = Vec::new();
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut sweeps_per_outer = Vec::new();
    let mut converged = false;
    let mut last = None;

    for k in 1..=opts.max_outer {
        let (f, j) = model.evaluate_with_jacobian(&mu)?;
        let misfit = (&f - data).norm();
        let base = linearize_from(&f, &j, &mu, data, opts.alpha);
        let ep = run_ep(&base, sites, &opts.ep)?;
        if snapshots.is_empty() {
            snapshots.push(ep.snapshots[0].clone());
        }
        snapshots.extend(ep.snapshots[1..].iter().cloned());
        sweeps_per_outer.push(ep.sweeps_used);

        let d = &ep.mean - &mu;
        let residual = d.norm() / mu.norm().max(f64::MIN_POSITIVE);
        if !residual.is_finite() {
            return Err(NonlinearError::NonFiniteIterate { outer: k });
        }
        let mut record = OuterRecord {
            outer: k,
            misfit,
            residual,
            tau: f64::NAN,
            inner_sweeps: ep.sweeps_used,
            inner_converged: ep.converged,
            skipped_sites: ep.skipped_sites.len(),
        };
        sites = ep.sites.clone();
        if residual < opts.outer_tol {
            converged = true;
            outer.push(record);
            last = Some((ep, mu));
            break;
        }
        let tau = match (&prev, opts.step_rule) {
            (None, _) | (_, StepRule::Unit) => 1.0,
            (Some((mp, dp)), StepRule::BarzilaiBorwein) => bb_step(&mu, mp, &d, dp),
            (Some((mp, dp)), StepRule::BarzilaiBorweinSecant) => bb_secant_step(&mu, mp, &d, dp),
        };
        record.tau = tau;
        outer.push(record);
        let mut next = &mu + tau * &d;
        clamp_floor(&mut next, opts.floor);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(NonlinearError::NonFiniteIterate { outer: k });
        }
        prev = Some((mu.clone(), d));
        last = Some((ep, mu));
        mu = next;
    }

    let (ep, iterate) = last.expect("at least one outer iteration");
    let metrics = table4_metrics(&snapshots);
    let mut trace = Vec::with_capacity(metrics.len());
    let mut it = metrics.into_iter();
    for (k, &sweeps) in sweeps_per_outer.iter().enumerate() {
        for j in 1..=sweeps {
            let m = it.next().expect("one metric per sweep");
            trace.push(TraceRow { outer: k + 1, inner: j, e_p_mu: m.e_p_mu, e_f_mu: m.e_f_mu, e_p_c: m.e_p_c, e_f_c: m.e_f_c });
        }
    }
    Ok(NonlinearResult {
        mean: ep.mean,
        cov: ep.cov,
        iterate,
        converged,
        outer,
        trace,
        total_inner_sweeps: sweeps_per_outer.iter().sum(),
        sites: ep.sites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tilted::GaussianFactor;
    use std::sync::Arc;

    /// `F(x) = (x₀²)` or `(x₀³)` style scalar maps.
    struct Power(i32);

    impl ForwardModel for Power {
        fn dims(&self) -> (usize, usize) {
            (1, 1)
        }
        fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
            Ok(DVector::from_element(1, x[0].powi(self.0)))
        }
        fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
            Ok(DMatrix::from_element(1, 1, self.0 as f64 * x[0].powi(self.0 - 1)))
        }
    }

    #[test]
    fn linearize_examples() {
        let base = linearize(&Power(2), &DVector::from_element(1, 2.0), &DVector::from_element(1, 4.0), 1.0).unwrap();
        assert_eq!(base.k[(0, 0)], 16.0);
        assert_eq!(base.h[0], 32.0);

        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let lin = LinearModel { a: a.clone() };
        let b = DVector::from_vec(vec![0.3, 0.7]);
        let p = linearize(&lin, &DVector::from_vec(vec![5.0, -3.0]), &b, 2.0).unwrap();
        let q = linearize(&lin, &DVector::zeros(2), &b, 2.0).unwrap();
        assert_eq!(p.k, 2.0 * a.transpose() * &a);
        assert!((&p.h - &q.h).norm() < 1e-14);
    }

    #[test]
    fn residual_free_point_solves_its_own_system() {
        let mu = DVector::from_element(1, 2.0);
        let base = linearize(&Power(3), &mu, &DVector::from_element(1, 8.0), 3.0).unwrap();
        assert!((base.h[0] / base.k[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn bb_step_examples() {
        let m1 = DVector::from_vec(vec![1.0, 2.0]);
        let m0 = DVector::from_vec(vec![0.5, 1.0]);
        let d0 = DVector::from_vec(vec![0.2, -0.1]);
        assert_eq!(bb_step(&m1, &m0, &d0, &d0), 0.0);
        let d1 = &d0 + (&m1 - &m0);
        assert_eq!(bb_step(&m1, &m0, &d1, &d0), 1.0);
        let d3 = &d0 + 3.0 * (&m1 - &m0);
        assert_eq!(bb_step(&m1, &m0, &d3, &d0), 1.0);
        assert_eq!(bb_step(&m1, &m1, &d0, &d3), 1.0);
        let half = &d0 + 0.5 * (&m1 - &m0);
        assert!((bb_step(&m1, &m0, &half, &d0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn secant_step_damps_oscillation_and_takes_full_contractions() {
        let m0 = DVector::from_element(1, 0.0);
        let m1 = DVector::from_element(1, 1.0);
        // d = (g - 1) μ + c: g = 0 is a Newton-exact map, g = -1 flips sign
        let d = |g: f64, x: &DVector<f64>| x * (g - 1.0) + DVector::from_element(1, 0.3);
        assert_eq!(bb_secant_step(&m1, &m0, &d(0.0, &m1), &d(0.0, &m0)), 1.0);
        assert!((bb_secant_step(&m1, &m0, &d(-1.0, &m1), &d(-1.0, &m0)) - 0.5).abs() < 1e-15);
        assert_eq!(bb_secant_step(&m1, &m0, &d(0.6, &m1), &d(0.6, &m0)), 1.0);
        assert_eq!(bb_secant_step(&m1, &m0, &d(2.0, &m1), &d(2.0, &m0)), 1.0);
    }

    fn gaussian_prior_sites(n: usize, mean: f64, var: f64) -> Vec<Site> {
        (0..n).map(|j| Site::coordinate(n, j, Arc::new(GaussianFactor::scalar(mean, var)))).collect()
    }

    #[test]
    fn linear_model_needs_one_effective_iteration() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let model = LinearModel { a };
        let b = DVector::from_vec(vec![1.0, -0.4, 0.6]);
        let r = run_nonlinear(&model, &b, gaussian_prior_sites(2, 0.0, 4.0), &DVector::from_element(2, 1.0), &NonlinearOptions::new(5.0))
            .unwrap();
        assert!(r.converged);
        assert_eq!(r.outer.len(), 2);
        assert!(r.outer[1].residual < 1e-10);
        assert_eq!(r.outer[0].tau, 1.0);
    }

    #[test]
    fn cubic_model_reaches_the_map_point() {
        let (alpha, prior_mean, prior_var, b) = (50.0, 1.0, 4.0, 8.0);
        let model = Power(3);
        let data = DVector::from_element(1, b);
        let mut opts = NonlinearOptions::new(alpha);
        opts.max_outer = 50;
        opts.outer_tol = 1e-10;
        let r =
            run_nonlinear(&model, &data, gaussian_prior_sites(1, prior_mean, prior_var), &DVector::from_element(1, 1.5), &opts).unwrap();
        assert!(r.converged);
        let misfits: Vec<f64> = r.outer.iter().map(|o| o.misfit).collect();
        let settled = *misfits.last().unwrap();
        // strictly decreasing until the misfit has settled to roundoff
        assert!(misfits.windows(2).all(|w| w[1] < w[0] || w[0] - settled < 1e-10), "{misfits:?}");
        // independent grid search on the negative log posterior
        let obj = |x: f64| 0.5 * alpha * (x.powi(3) - b).powi(2) + 0.5 * (x - prior_mean).powi(2) / prior_var;
        let (mut lo, mut hi) = (0.0, 4.0);
        for _ in 0..6 {
            let pts = 2001;
            let h = (hi - lo) / (pts - 1) as f64;
            let best = (0..pts).map(|i| lo + i as f64 * h).min_by(|a, b| obj(*a).total_cmp(&obj(*b))).unwrap();
            lo = best - 2.0 * h;
            hi = best + 2.0 * h;
        }
        let map = 0.5 * (lo + hi);
        assert!((r.mean[0] - map).abs() < 1e-4, "{} vs {map}", r.mean[0]);
        assert!(r.outer[0].tau == 1.0 && r.outer.iter().all(|o| o.tau.is_nan() || (0.0..=1.0).contains(&o.tau)));
    }

    #[test]
    fn literal_rule_is_available() {
        let model = Power(3);
        let data = DVector::from_element(1, 8.0);
        let mut opts = NonlinearOptions::new(50.0);
        opts.step_rule = StepRule::BarzilaiBorwein;
        opts.max_outer = 40;
        let r = run_nonlinear(&model, &data, gaussian_prior_sites(1, 1.0, 4.0), &DVector::from_element(1, 1.0), &opts).unwrap();
        assert!(r.outer.iter().all(|o| o.tau.is_nan() || (0.0..=1.0).contains(&o.tau)));
    }

    #[test]
    fn trace_covers_every_sweep() {
        let model = Power(3);
        let data = DVector::from_element(1, 8.0);
        let r =
            run_nonlinear(&model, &data, gaussian_prior_sites(1, 1.0, 4.0), &DVector::from_element(1, 1.0), &NonlinearOptions::new(50.0))
                .unwrap();
        assert_eq!(r.trace.len(), r.total_inner_sweeps);
        assert_eq!(r.trace.last().unwrap().e_f_mu, 0.0);
        assert_eq!(r.trace[0].outer, 1);
        assert_eq!(r.trace[0].inner, 1);
    }

    #[test]
    fn floor_clamps_the_linearization_point() {
        let model = LinearModel { a: DMatrix::identity(2, 2) };
        let data = DVector::from_vec(vec![-1.0, 1.0]);
        let mut opts = NonlinearOptions::new(1.0);
        opts.floor = Some(0.1);
        let r = run_nonlinear(&model, &data, gaussian_prior_sites(2, 0.0, 1.0), &DVector::from_element(2, -5.0), &opts).unwrap();
        assert!(r.iterate.iter().all(|&v| v >= 0.1));
    }
}
