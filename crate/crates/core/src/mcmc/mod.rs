//! Random-walk Metropolis–Hastings with streaming summaries and multi-chain
//! diagnostics.

mod diagnostics;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::nonlinear::ForwardModel;

pub use diagnostics::{brooks_gelman, multi_chain_report, MultiChainReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McmcError {
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("initial state has zero posterior density")]
    InvalidInit,
    #[error("proposal adaptation failed after {pilots} pilot runs (last acceptance {acceptance})")]
    AdaptFailed { pilots: usize, acceptance: f64 },
    #[error("chains disagree: {0}")]
    Mismatch(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub steps: usize,
    /// Leading steps discarded.
    pub burn_in: usize,
    /// Keep every `thin`-th step after burn-in.
    pub thin: usize,
    pub proposal_std: f64,
    pub seed: u64,
    pub target_acceptance: f64,
}

impl ChainConfig {
    /// 10% burn-in, thinning 10, unit proposal.
    pub fn new(steps: usize, seed: u64) -> Self {
        Self { steps, burn_in: steps / 10, thin: 10, proposal_std: 1.0, seed, target_acceptance: 0.234 }
    }

    fn validate(&self) -> Result<(), McmcError> {
        if self.steps == 0 {
            return Err(McmcError::InvalidConfig("steps must be positive"));
        }
        if self.burn_in >= self.steps {
            return Err(McmcError::InvalidConfig("burn_in must be smaller than steps"));
        }
        if self.thin == 0 {
            return Err(McmcError::InvalidConfig("thin must be at least 1"));
        }
        if !(self.proposal_std >= 0.0) || !self.proposal_std.is_finite() {
            return Err(McmcError::InvalidConfig("proposal_std must be finite and non-negative"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(McmcError::InvalidConfig("target_acceptance must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct Welford {
    count: usize,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: DVector::zeros(dim), m2: DVector::zeros(dim) }
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Unbiased sample variance (zero with fewer than two samples).
    pub fn variance(&self) -> DVector<f64> {
        if self.count < 2 {
            DVector::zeros(self.mean.len())
        } else {
            &self.m2 / (self.count - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
    /// Accepted proposals over all steps, burn-in included.
    pub acceptance_rate: f64,
    pub samples_kept: usize,
}

impl ChainSummary {
    pub fn variance(&self) -> DVector<f64> {
        self.std.map(|s| s * s)
    }
}

/// The Metropolis rule for a symmetric proposal.
pub fn metropolis_accept(log_ratio: f64, u: f64) -> bool {
    log_ratio >= 0.0 || u.ln() < log_ratio
}

/// Runs one chain. `on_sample` sees every kept sample.
pub fn mh_chain<F, S>(cfg: &ChainConfig, init: &DVector<f64>, log_post: F, mut on_sample: S) -> Result<ChainSummary, McmcError>
where
    F: Fn(&DVector<f64>) -> f64,
    S: FnMut(&DVector<f64>),
{
    cfg.validate()?;
    let mut x = init.clone();
    let mut lp = log_post(&x);
    if lp == f64::NEG_INFINITY || lp.is_nan() {
        return Err(McmcError::InvalidInit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stats = Welford::new(x.len());
    let mut proposal = x.clone();
    let mut accepted = 0usize;
    for step in 0..cfg.steps {
        for i in 0..x.len() {
            let z: f64 = rng.sample(StandardNormal);
            proposal[i] = x[i] + cfg.proposal_std * z;
        }
        let lp_new = log_post(&proposal);
        let u: f64 = rng.random();
        if !lp_new.is_nan() && metropolis_accept(lp_new - lp, u) {
            std::mem::swap(&mut x, &mut proposal);
            lp = lp_new;
            accepted += 1;
        }
        if step >= cfg.burn_in && (step - cfg.burn_in).is_multiple_of(cfg.thin) {
            stats.push(&x);
            on_sample(&x);
        }
    }
    Ok(ChainSummary {
        mean: stats.mean().clone(),
        std: stats.variance().map(f64::sqrt),
        acceptance_rate: accepted as f64 / cfg.steps as f64,
        samples_kept: stats.count(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub proposal_std: f64,
    /// Acceptance of the last pilot run.
    pub acceptance: f64,
    pub pilots: usize,
}

pub const ACCEPTANCE_BAND: (f64, f64) = (0.18, 0.30);

/// Scales the proposal by doubling or halving until the pilot acceptance is
/// bracketed, then bisects on the log scale until it falls in
/// [`ACCEPTANCE_BAND`]. Every pilot reuses the same random stream.
pub fn adapt_proposal<F>(
    cfg: &ChainConfig,
    init: &DVector<f64>,
    log_post: F,
    pilot_steps: usize,
    max_pilots: usize,
) -> Result<Adaptation, McmcError>
where
    F: Fn(&DVector<f64>) -> f64,
{
    if max_pilots < 2 {
        return Err(McmcError::InvalidConfig("adaptation needs at least two pilot runs"));
    }
    let (lo_band, hi_band) = ACCEPTANCE_BAND;
    let pilot = |s: f64| {
        let c = ChainConfig { steps: pilot_steps, burn_in: 0, thin: 1, proposal_std: s, ..cfg.clone() };
        mh_chain(&c, init, &log_post, |_| {}).map(|r| r.acceptance_rate)
    };
    let mut s = cfg.proposal_std;
    if !(s > 0.0) {
        return Err(McmcError::InvalidConfig("initial proposal_std must be positive"));
    }
    // small: acceptance above the band; large: below it
    let (mut small, mut large): (Option<f64>, Option<f64>) = (None, None);
    let mut acc = f64::NAN;
    for k in 1..=max_pilots {
        acc = pilot(s)?;
        if (lo_band..=hi_band).contains(&acc) {
            return Ok(Adaptation { proposal_std: s, acceptance: acc, pilots: k });
        }
        if acc > hi_band {
            small = Some(s);
        } else {
            large = Some(s);
        }
        s = match (small, large) {
            (Some(a), Some(b)) => (a * b).sqrt(),
            (Some(a), None) => 2.0 * a,
            (None, Some(b)) => 0.5 * b,
            (None, None) => unreachable!(),
        };
    }
    Err(McmcError::AdaptFailed { pilots: max_pilots, acceptance: acc })
}

/// Runs independent chains, in parallel when the `parallel` feature is on.
pub fn run_chains<F>(configs: &[ChainConfig], inits: &[DVector<f64>], log_post: F) -> Result<Vec<ChainSummary>, McmcError>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    if configs.len() != inits.len() {
        return Err(McmcError::Mismatch("one initial state per chain is required"));
    }
    let run = |(c, x): (&ChainConfig, &DVector<f64>)| mh_chain(c, x, &log_post, |_| {});
    #[cfg(feature = "parallel")]
    let out: Vec<_> = {
        use rayon::prelude::*;
        configs.par_iter().zip(inits.par_iter()).map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let out: Vec<_> = configs.iter().zip(inits.iter()).map(run).collect();
    out.into_iter().collect()
}

/// Unnormalized log posterior with Gaussian noise, Laplace prior around
/// `background` and the constraint `x ≥ floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplacePrior {
    pub lambda: f64,
    pub background: f64,
    pub floor: f64,
}

impl LaplacePrior {
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        if x.iter().any(|&v| v < self.floor) {
            return f64::NEG_INFINITY;
        }
        -self.lambda * x.iter().map(|v| (v - self.background).abs()).sum::<f64>()
    }
}

/// `-α/2 ‖F(x) - b‖² - λ‖x - x_bg‖₁` on the admissible set, `-∞` elsewhere
/// (including points where the forward map fails).
pub fn log_posterior(x: &DVector<f64>, model: &dyn ForwardModel, data: &DVector<f64>, alpha: f64, prior: &LaplacePrior) -> f64 {
    let lp = prior.log_density(x);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    match model.evaluate(x) {
        Ok(f) => lp - 0.5 * alpha * (f - data).norm_squared(),
        Err(_) => f64::NEG_INFINITY,
    }
}
