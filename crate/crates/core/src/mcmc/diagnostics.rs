use nalgebra::DVector;

use super::{ChainSummary, McmcError};

fn check(chains: &[ChainSummary]) -> Result<usize, McmcError> {
    if chains.len() < 2 {
        return Err(McmcError::Mismatch("at least two chains are required"));
    }
    let n = chains[0].mean.len();
    if chains.iter().any(|c| c.mean.len() != n || c.std.len() != n) {
        return Err(McmcError::Mismatch("chains have different dimensions"));
    }
    if chains.iter().any(|c| c.samples_kept != chains[0].samples_kept) {
        return Err(McmcError::Mismatch("chains kept different numbers of samples"));
    }
    Ok(n)
}

/// Averages around the first chain so that identical chains reproduce their
/// common value exactly.
fn cross_mean(chains: &[ChainSummary], f: impl Fn(&ChainSummary) -> &DVector<f64>) -> DVector<f64> {
    let base = f(&chains[0]);
    let mut acc = DVector::zeros(base.len());
    for c in &chains[1..] {
        acc += f(c) - base;
    }
    base + acc / chains.len() as f64
}

/// Potential scale reduction per component:
/// `R̂ = sqrt(1 + (1 + 1/m) B / W)` with `W` the mean within-chain variance
/// and `B` the sample variance of the chain means over `m` chains.
/// Identical chains give exactly 1.
pub fn brooks_gelman(chains: &[ChainSummary]) -> Result<DVector<f64>, McmcError> {
    let n = check(chains)?;
    let m = chains.len() as f64;
    let mean = cross_mean(chains, |c| &c.mean);
    Ok(DVector::from_fn(n, |i, _| {
        let w = chains.iter().map(|c| c.std[i] * c.std[i]).sum::<f64>() / m;
        let b = chains.iter().map(|c| (c.mean[i] - mean[i]).powi(2)).sum::<f64>() / (m - 1.0);
        if b == 0.0 {
            1.0
        } else if w == 0.0 {
            f64::INFINITY
        } else {
            (1.0 + (1.0 + 1.0 / m) * b / w).sqrt()
        }
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiChainReport {
    /// Cross-chain mean of the chain means.
    pub mean: DVector<f64>,
    /// Cross-chain mean of the chain standard deviations.
    pub std: DVector<f64>,
    /// `max_j ‖mean_j - mean‖ / ‖mean‖`.
    pub mean_err: f64,
    /// `max_j ‖std_j - std‖ / ‖std‖`.
    pub std_err: f64,
    pub r_hat: DVector<f64>,
    pub r_hat_max: f64,
    pub acceptance: Vec<f64>,
}

impl MultiChainReport {
    pub const COLUMNS: [&'static str; 4] = ["case", "mean-err", "std-err", "R_hat"];
}

fn max_rel(chains: &[ChainSummary], f: impl Fn(&ChainSummary) -> &DVector<f64>, centre: &DVector<f64>) -> f64 {
    let den = centre.norm();
    chains
        .iter()
        .map(|c| {
            let num = (f(c) - centre).norm();
            if num == 0.0 {
                0.0
            } else {
                num / den
            }
        })
        .fold(0.0, f64::max)
}

pub fn multi_chain_report(chains: &[ChainSummary]) -> Result<MultiChainReport, McmcError> {
    check(chains)?;
    let mean = cross_mean(chains, |c| &c.mean);
    let std = cross_mean(chains, |c| &c.std);
    let r_hat = brooks_gelman(chains)?;
    Ok(MultiChainReport {
        mean_err: max_rel(chains, |c| &c.mean, &mean),
        std_err: max_rel(chains, |c| &c.std, &std),
        r_hat_max: r_hat.max(),
        r_hat,
        acceptance: chains.iter().map(|c| c.acceptance_rate).collect(),
        mean,
        std,
    })
}
