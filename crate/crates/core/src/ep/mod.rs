//! Expectation propagation for posteriors `t₀(x) ∏ tᵢ(Uᵢx)` with Gaussian `t₀`.
//!
//! The global approximation is held in natural form with a Cholesky factor of
//! `K` that is kept current through rank-one up/downdates as each site moves.

mod metrics;
mod site;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::gaussian::{MomentGaussian, NaturalGaussian, NaturalParams};
use crate::linalg::LinalgError;
use crate::tilted::TiltedError;

pub use metrics::{table4_metrics, CovSnapshot, Snapshot, SweepMetrics, FULL_COV_LIMIT};
pub use site::{cavity, project_moments, refresh_global, relative_change, tilted_projection, update_site, Cavity, Site};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EpError {
    #[error("global precision is not positive definite: {0}")]
    GlobalNotPositiveDefinite(#[source] LinalgError),
    #[error("cavity precision is not positive definite")]
    CavityInvalid,
    #[error("tilted covariance is not positive definite")]
    TiltedVarianceNotPositive,
    #[error("tilted moments failed: {0}")]
    Tilted(#[source] TiltedError),
    #[error("site refresh lost positive definiteness: {0}")]
    DowndateFailed(#[source] LinalgError),
    #[error("site {site} failed in sweep {sweep}: {source}")]
    SiteFailed {
        site: usize,
        sweep: usize,
        #[source]
        source: Box<EpError>,
    },
    #[error("invalid options: {0}")]
    InvalidOptions(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    /// Refresh the global approximation after every site.
    #[default]
    Serial,
    /// Compute every site update from the same global state, then refresh once.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    /// Keep the previous site parameters and record the site as skipped.
    #[default]
    SkipSite,
    Abort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EPOptions {
    pub max_sweeps: usize,
    /// Sweeps always performed before the stopping test is consulted.
    pub min_sweeps: usize,
    /// Threshold on the largest relative change of any `(hᵢ, Kᵢ)` in a sweep.
    pub site_tol: f64,
    pub sweep_mode: SweepMode,
    pub on_downdate_failure: FailurePolicy,
}

impl Default for EPOptions {
    fn default() -> Self {
        Self { max_sweeps: 50, min_sweeps: 1, site_tol: 1e-4, sweep_mode: SweepMode::Serial, on_downdate_failure: FailurePolicy::SkipSite }
    }
}

impl EPOptions {
    fn validate(&self) -> Result<(), EpError> {
        if !(self.site_tol > 0.0) {
            return Err(EpError::InvalidOptions("site_tol must be positive"));
        }
        if self.max_sweeps == 0 {
            return Err(EpError::InvalidOptions("max_sweeps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SkipReason {
    CavityInvalid,
    Tilted(TiltedError),
    TiltedVarianceNotPositive,
    DowndateFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedSite {
    pub sweep: usize,
    pub site: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone)]
pub struct EPResult {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub sweeps_used: usize,
    pub converged: bool,
    /// One entry per sweep, `e_f` measured against the last sweep of this run.
    pub metrics: Vec<SweepMetrics>,
    /// State before the first sweep followed by the state after each sweep.
    pub snapshots: Vec<Snapshot>,
    pub skipped_sites: Vec<SkippedSite>,
    /// Final site parameters, usable as a warm start.
    pub sites: Vec<Site>,
    /// Final global approximation in natural form.
    pub global: NaturalGaussian,
}

impl EPResult {
    pub fn moments(&self) -> MomentGaussian {
        MomentGaussian { mean: self.mean.clone(), cov: self.cov.clone() }
    }

    pub fn std(&self) -> DVector<f64> {
        DVector::from_fn(self.mean.len(), |i, _| self.cov[(i, i)].max(0.0).sqrt())
    }
}

/// `K₀ + Σ UᵢᵗKᵢUᵢ`, `h₀ + Σ Uᵢᵗhᵢ`.
pub fn assemble_global(base: &NaturalParams, sites: &[Site]) -> NaturalParams {
    sites.iter().fold(base.clone(), |acc, s| acc.product(&NaturalParams::new(s.h.clone(), s.k.clone()).lift(&s.u)))
}

fn skip_reason(e: &EpError) -> SkipReason {
    match e {
        EpError::CavityInvalid => SkipReason::CavityInvalid,
        EpError::Tilted(t) => SkipReason::Tilted(t.clone()),
        EpError::TiltedVarianceNotPositive => SkipReason::TiltedVarianceNotPositive,
        _ => SkipReason::DowndateFailed,
    }
}

fn propose(global: &NaturalGaussian, site: &Site) -> Result<(DVector<f64>, DMatrix<f64>), EpError> {
    let cav = cavity(global, site)?;
    let tm = site.factor.tilted(&cav.mean, &cav.cov).map_err(EpError::Tilted)?;
    update_site(&cav, &tm)
}

struct SweepState<'a> {
    global: NaturalGaussian,
    sites: Vec<Site>,
    skipped: Vec<SkippedSite>,
    opts: &'a EPOptions,
}

impl SweepState<'_> {
    /// Records a failure or turns it into an abort. Returns the largest change (0).
    fn fail(&mut self, sweep: usize, i: usize, e: EpError) -> Result<(), EpError> {
        match self.opts.on_downdate_failure {
            FailurePolicy::Abort => Err(EpError::SiteFailed { site: i, sweep, source: Box::new(e) }),
            FailurePolicy::SkipSite => {
                self.skipped.push(SkippedSite { sweep, site: i, reason: skip_reason(&e) });
                Ok(())
            }
        }
    }

    fn commit(&mut self, sweep: usize, i: usize, h: DVector<f64>, k: DMatrix<f64>) -> Result<f64, EpError> {
        let site = &self.sites[i];
        let change = relative_change(&site.h, &site.k, &h, &k);
        match refresh_global(&mut self.global, site, &h, &k) {
            Ok(()) => {
                let site = &mut self.sites[i];
                site.h = h;
                site.k = k;
                Ok(change)
            }
            Err(e) => self.fail(sweep, i, EpError::DowndateFailed(e)).map(|_| 0.0),
        }
    }

    fn serial_sweep(&mut self, sweep: usize) -> Result<f64, EpError> {
        let mut max_change = 0.0_f64;
        for i in 0..self.sites.len() {
            match propose(&self.global, &self.sites[i]) {
                Ok((h, k)) => max_change = max_change.max(self.commit(sweep, i, h, k)?),
                Err(e) => self.fail(sweep, i, e)?,
            }
        }
        Ok(max_change)
    }

    fn parallel_sweep(&mut self, sweep: usize) -> Result<f64, EpError> {
        let global = &self.global;
        #[cfg(feature = "parallel")]
        let proposals: Vec<_> = {
            use rayon::prelude::*;
            self.sites.par_iter().map(|s| propose(global, s)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let proposals: Vec<_> = self.sites.iter().map(|s| propose(global, s)).collect();

        let mut max_change = 0.0_f64;
        for (i, p) in proposals.into_iter().enumerate() {
            match p {
                Ok((h, k)) => max_change = max_change.max(self.commit(sweep, i, h, k)?),
                Err(e) => self.fail(sweep, i, e)?,
            }
        }
        Ok(max_change)
    }
}

/// Runs EP from the given site parameters.
///
/// `base` holds `(h₀, K₀)`; `K₀` may be singular as long as
/// `K₀ + Σ UᵢᵗKᵢUᵢ` is positive definite.
pub fn run_ep(base: &NaturalParams, sites: Vec<Site>, opts: &EPOptions) -> Result<EPResult, EpError> {
    opts.validate()?;
    let global = assemble_global(base, &sites).into_gaussian().map_err(EpError::GlobalNotPositiveDefinite)?;
    let mut state = SweepState { global, sites, skipped: Vec::new(), opts };
    let mut snapshots = vec![Snapshot::of(&state.global)];
    let mut converged = false;
    let mut sweeps_used = 0;
    let mut changes = Vec::new();

    for sweep in 1..=opts.max_sweeps {
        let change = match opts.sweep_mode {
            SweepMode::Serial => state.serial_sweep(sweep)?,
            SweepMode::Parallel => state.parallel_sweep(sweep)?,
        };
        sweeps_used = sweep;
        changes.push(change);
        snapshots.push(Snapshot::of(&state.global));
        if sweep >= opts.min_sweeps && change < opts.site_tol {
            converged = true;
            break;
        }
    }

    let metrics = table4_metrics(&snapshots)
        .into_iter()
        .zip(changes)
        .enumerate()
        .map(|(j, (m, change))| SweepMetrics { sweep: j + 1, max_site_change: change, ..m })
        .collect();
    let mean = state.global.mean();
    let cov = state.global.factor().inverse();
    Ok(EPResult {
        mean,
        cov,
        sweeps_used,
        converged,
        metrics,
        snapshots,
        skipped_sites: state.skipped,
        sites: state.sites,
        global: state.global,
    })
}

#[cfg(test)]
mod tests;
