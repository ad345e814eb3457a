//! Adaptive Gauss–Legendre quadrature for tilted moments of pointwise factors.
//!
//! Used as an oracle for the semi-analytic kernels and as a fallback for
//! factor families without closed forms. The integrand is evaluated in log
//! form and shifted by its largest sampled value before exponentiation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use super::{TiltedError, TiltedMoments};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 {
                1.0
            } else if n == 1 {
                x
            } else {
                p1
            };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

pub(crate) fn gl20() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(20))
}

pub(crate) fn gl40() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(40))
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    /// Target relative error of each accumulated moment.
    pub rel_tol: f64,
    pub max_panels: usize,
    /// Half-width of the integration window in cavity standard deviations.
    pub window_sds: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-12, max_panels: 20_000, window_sds: 12.0 }
    }
}

struct Panel {
    lo: f64,
    hi: f64,
    values: [f64; 3],
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn panel_rule<F: Fn(f64) -> [f64; 3]>(f: &F, lo: f64, hi: f64) -> [f64; 3] {
    let (x, w) = gl20();
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut acc = [0.0; 3];
    for (xi, wi) in x.iter().zip(w) {
        let v = f(mid + half * xi);
        for k in 0..3 {
            acc[k] += wi * v[k];
        }
    }
    acc.map(|a| a * half)
}

/// Adaptive integration of a 3-vector integrand over `[lo, hi]`, split first
/// at `breaks`. Every component is judged against `tol · |I₀|`, so callers
/// pass moment components already scaled to the width of the density.
fn integrate<F: Fn(f64) -> [f64; 3]>(f: &F, lo: f64, hi: f64, breaks: &[f64], opts: &QuadratureOptions) -> Result<[f64; 3], TiltedError> {
    let mut cuts: Vec<f64> = vec![lo];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|b| *b > lo && *b < hi).collect();
    inner.sort_by(f64::total_cmp);
    cuts.extend(inner);
    cuts.push(hi);
    // a few uniform sub-panels so narrow features are seen at all
    let mut initial = Vec::new();
    for w in cuts.windows(2) {
        let pieces = 8;
        for j in 0..pieces {
            let a = w[0] + (w[1] - w[0]) * j as f64 / pieces as f64;
            let b = w[0] + (w[1] - w[0]) * (j + 1) as f64 / pieces as f64;
            initial.push((a, b));
        }
    }
    let make = |lo: f64, hi: f64| -> Panel {
        let whole = panel_rule(f, lo, hi);
        let mid = 0.5 * (lo + hi);
        let left = panel_rule(f, lo, mid);
        let right = panel_rule(f, mid, hi);
        let mut values = [0.0; 3];
        let mut err = 0.0_f64;
        for k in 0..3 {
            values[k] = left[k] + right[k];
            err = err.max((values[k] - whole[k]).abs());
        }
        Panel { lo, hi, values, err }
    };
    let mut heap: BinaryHeap<Panel> = initial.into_iter().map(|(a, b)| make(a, b)).collect();
    let mut count = heap.len();
    let sums = |heap: &BinaryHeap<Panel>| {
        heap.iter().fold(([0.0; 3], 0.0), |(mut acc, e), p| {
            for k in 0..3 {
                acc[k] += p.values[k];
            }
            (acc, e + p.err)
        })
    };
    let (mut total, mut err) = sums(&heap);
    let mut since_resum = 0;
    loop {
        let target = opts.rel_tol * total[0].abs();
        if err <= target || (total[0] == 0.0 && err == 0.0) {
            // confirm with a clean resummation before accepting
            let (t, e) = sums(&heap);
            if e <= opts.rel_tol * t[0].abs() || (t[0] == 0.0 && e == 0.0) {
                return Ok(t);
            }
            total = t;
            err = e;
        }
        if count >= opts.max_panels {
            return Err(TiltedError::QuadratureNotConverged { panels: count, error: err / total[0].abs() });
        }
        let worst = heap.pop().expect("non-empty panel set");
        let mid = 0.5 * (worst.lo + worst.hi);
        if !(mid > worst.lo && mid < worst.hi) || worst.err == 0.0 {
            // cannot split further in floating point; accept as is
            err -= worst.err;
            heap.push(Panel { err: 0.0, ..worst });
            continue;
        }
        let left = make(worst.lo, mid);
        let right = make(mid, worst.hi);
        for k in 0..3 {
            total[k] += left.values[k] + right.values[k] - worst.values[k];
        }
        err += left.err + right.err - worst.err;
        heap.push(left);
        heap.push(right);
        count += 1;
        since_resum += 1;
        if since_resum == 256 {
            (total, err) = sums(&heap);
            since_resum = 0;
        }
    }
}

/// A nonnegative factor `t(s)` known pointwise through `ln t(s)`.
pub trait PointwiseFactor {
    /// `ln t(s)`; `-∞` outside the support.
    fn ln_value(&self, s: f64) -> f64;
    /// Closed support `[lo, hi]` (infinite ends allowed).
    fn support(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
    /// Points where `t` is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Integration window: `m ± k√v` intersected with the support, or a window
/// hugging the support edge when the two do not meet.
fn window(support: (f64, f64), m: f64, v: f64, k: f64) -> (f64, f64) {
    let sd = v.sqrt();
    let (s_lo, s_hi) = support;
    let lo = s_lo.max(m - k * sd);
    let hi = s_hi.min(m + k * sd);
    if lo < hi {
        return (lo, hi);
    }
    if s_lo > m {
        // mass piles up at the lower edge with decay rate (s_lo - m)/v
        let width = (4.0 * k * v / (s_lo - m)).min(k * sd);
        (s_lo, s_hi.min(s_lo + width))
    } else {
        let width = (4.0 * k * v / (m - s_hi)).min(k * sd);
        (s_lo.max(s_hi - width), s_hi)
    }
}

/// Moments of `Z⁻¹ t(s) N(s; m, v)` by adaptive quadrature.
pub fn moments_quadrature<T: PointwiseFactor + ?Sized>(
    t: &T,
    m: f64,
    v: f64,
    opts: &QuadratureOptions,
) -> Result<TiltedMoments, TiltedError> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(TiltedError::InvalidVariance(v));
    }
    let (lo, hi) = window(t.support(), m, v, opts.window_sds);
    let breaks = t.breakpoints();
    let ln_integrand = |s: f64| t.ln_value(s) - 0.5 * (s - m) * (s - m) / v;

    // shift: largest sampled log-integrand over a dense probe of the window
    let mut shift = f64::NEG_INFINITY;
    let probes = 2001;
    for i in 0..probes {
        let s = lo + (hi - lo) * i as f64 / (probes - 1) as f64;
        shift = shift.max(ln_integrand(s));
    }
    for &b in &breaks {
        if b >= lo && b <= hi {
            shift = shift.max(ln_integrand(b));
        }
    }
    if shift == f64::NEG_INFINITY {
        return Err(TiltedError::DegenerateSupport { log_z: f64::NEG_INFINITY });
    }
    let norm = -0.5 * (2.0 * std::f64::consts::PI * v).ln();

    // pass 1: rough mass/mean/spread
    let rough_opts = QuadratureOptions { rel_tol: opts.rel_tol.max(1e-8), ..*opts };
    let sd = v.sqrt();
    let pass1 = integrate(
        &|s: f64| {
            let e = (ln_integrand(s) - shift).exp();
            let d = (s - m) / sd;
            [e, e * d, e * d * d]
        },
        lo,
        hi,
        &breaks,
        &rough_opts,
    )?;
    let mean0 = m + sd * pass1[1] / pass1[0];
    let var0 = (v * (pass1[2] / pass1[0] - (pass1[1] / pass1[0]).powi(2))).max(f64::MIN_POSITIVE);
    let sd0 = var0.sqrt();

    // pass 2: centred at the rough mean and scaled by the rough spread
    let pass2 = integrate(
        &|s: f64| {
            let e = (ln_integrand(s) - shift).exp();
            let d = (s - mean0) / sd0;
            [e, e * d, e * d * d]
        },
        lo,
        hi,
        &breaks,
        opts,
    )?;
    let z = pass2[0];
    if !(z > 0.0) {
        return Err(TiltedError::DegenerateSupport { log_z: f64::NEG_INFINITY });
    }
    let d1 = pass2[1] / z;
    let mean = mean0 + sd0 * d1;
    let var = var0 * (pass2[2] / z - d1 * d1);
    let log_z = shift + z.ln() + norm;
    Ok(TiltedMoments { log_z, mean, var })
}
