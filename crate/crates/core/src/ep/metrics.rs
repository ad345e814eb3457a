//! Per-sweep convergence measures: change relative to the previous iterate
//! (`e_p`) and to the last iterate (`e_f`), for the mean and the covariance.

use nalgebra::{DMatrix, DVector};

use crate::gaussian::NaturalGaussian;

/// Above this dimension only the covariance diagonal is stored per sweep.
pub const FULL_COV_LIMIT: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub enum CovSnapshot {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl CovSnapshot {
    fn diff_norm(&self, other: &CovSnapshot) -> f64 {
        match (self, other) {
            (CovSnapshot::Full(a), CovSnapshot::Full(b)) => (a - b).norm(),
            (CovSnapshot::Diagonal(a), CovSnapshot::Diagonal(b)) => (a - b).norm(),
            (a, b) => (a.diagonal() - b.diagonal()).norm(),
        }
    }

    fn norm(&self) -> f64 {
        match self {
            CovSnapshot::Full(a) => a.norm(),
            CovSnapshot::Diagonal(d) => d.norm(),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            CovSnapshot::Full(a) => a.diagonal(),
            CovSnapshot::Diagonal(d) => d.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub mean: DVector<f64>,
    pub cov: CovSnapshot,
}

impl Snapshot {
    pub fn of(g: &NaturalGaussian) -> Self {
        let mean = g.mean();
        let n = g.dim();
        let inv = g.factor().inverse();
        let cov = if n <= FULL_COV_LIMIT { CovSnapshot::Full(inv) } else { CovSnapshot::Diagonal(inv.diagonal()) };
        Self { mean, cov }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepMetrics {
    pub sweep: usize,
    pub e_p_mu: f64,
    pub e_f_mu: f64,
    pub e_p_c: f64,
    pub e_f_c: f64,
    /// Largest relative site change in this sweep (NaN when not applicable).
    pub max_site_change: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Metrics for snapshots `s₀, s₁, …, s_J`: entry `j-1` compares `s_j` with
/// `s_{j-1}` and with `s_J`.
pub fn table4_metrics(snapshots: &[Snapshot]) -> Vec<SweepMetrics> {
    let Some(last) = snapshots.last() else { return Vec::new() };
    snapshots
        .windows(2)
        .enumerate()
        .map(|(j, w)| {
            let (prev, cur) = (&w[0], &w[1]);
            SweepMetrics {
                sweep: j + 1,
                e_p_mu: ratio((&cur.mean - &prev.mean).norm(), prev.mean.norm()),
                e_f_mu: ratio((&cur.mean - &last.mean).norm(), last.mean.norm()),
                e_p_c: ratio(cur.cov.diff_norm(&prev.cov), prev.cov.norm()),
                e_f_c: ratio(cur.cov.diff_norm(&last.cov), last.cov.norm()),
                max_site_change: f64::NAN,
            }
        })
        .collect()
}
