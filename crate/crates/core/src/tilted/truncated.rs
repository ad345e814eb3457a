//! Moments of a standard normal restricted to an interval `[a, c]`.

use super::quadrature::gl40;
use super::special::{ln_interval_mass, ln_mills_ratio, ln_std_pdf, ln_upper_tail, std_pdf, upper_tail_excess};

/// Reference point of [`TruncatedStd::offset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    /// `mean = a + offset`.
    Lower,
    /// `mean = c - offset`.
    Upper,
    /// `mean = offset`.
    Origin,
}

impl Anchor {
    fn mirrored(self) -> Self {
        match self {
            Anchor::Lower => Anchor::Upper,
            Anchor::Upper => Anchor::Lower,
            Anchor::Origin => Anchor::Origin,
        }
    }
}

/// `(ln mass, mean, var)` of `N(0,1)` restricted to `[a, c]`.
///
/// Far in a tail the mean sits just inside an endpoint, and `mean` alone
/// cannot resolve its distance from that endpoint. `offset` carries that
/// distance to full relative precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedStd {
    pub ln_mass: f64,
    pub mean: f64,
    pub var: f64,
    pub anchor: Anchor,
    pub offset: f64,
    /// `ln mass - ln φ(p)` with `p` the anchor point (`a`, `c` or 0).
    pub ln_mass_rel: f64,
}

impl TruncatedStd {
    /// The mean of `lo + sd·z` where `a = (lo - centre)/sd`, `c = (hi - centre)/sd`.
    pub fn affine_mean(&self, centre: f64, sd: f64, lo: f64, hi: f64) -> f64 {
        match self.anchor {
            Anchor::Lower => lo + sd * self.offset,
            Anchor::Upper => hi - sd * self.offset,
            Anchor::Origin => centre + sd * self.offset,
        }
    }
}

/// Below this value of `width · max(1, |a|, |c|)` the density over the
/// interval is smooth enough for a 40-point Gauss–Legendre rule to be exact
/// to roundoff, and the closed forms start to cancel.
const NARROW: f64 = 4.0;

pub fn truncated_std_normal(a: f64, c: f64) -> TruncatedStd {
    assert!(a < c, "empty interval [{a}, {c}]");
    if a == f64::NEG_INFINITY && c == f64::INFINITY {
        return TruncatedStd { ln_mass: 0.0, mean: 0.0, var: 1.0, anchor: Anchor::Origin, offset: 0.0, ln_mass_rel: -ln_std_pdf(0.0) };
    }
    // orient so that the interval leans right
    if a == f64::NEG_INFINITY || (c.is_finite() && a + c < 0.0) {
        let t = truncated_std_normal(-c, -a);
        let offset = if t.anchor == Anchor::Origin { -t.offset } else { t.offset };
        return TruncatedStd { mean: -t.mean, anchor: t.anchor.mirrored(), offset, ..t };
    }
    if c == f64::INFINITY {
        let (excess, var) = upper_tail_excess(a);
        return TruncatedStd {
            ln_mass: ln_upper_tail(a),
            mean: a + excess,
            var,
            anchor: Anchor::Lower,
            offset: excess,
            ln_mass_rel: ln_mills_ratio(a),
        };
    }
    let w = c - a;
    if w * 1f64.max(a.abs()).max(c.abs()) <= NARROW {
        return narrow_interval(a, c);
    }
    if a >= 0.0 {
        // [a, c] = [a, ∞) minus [c, ∞), with means measured from a
        let la = ln_upper_tail(a);
        let lc = ln_upper_tail(c);
        let rho = (lc - la).exp();
        let (ea, va) = upper_tail_excess(a);
        let (ec, vc) = upper_tail_excess(c);
        let ec = w + ec;
        let offset = (ea - rho * ec) / (1.0 - rho);
        let second = (va + (ea - offset).powi(2)) - rho * (vc + (ec - offset).powi(2));
        TruncatedStd {
            ln_mass: la + (-rho).ln_1p(),
            mean: a + offset,
            var: second / (1.0 - rho),
            anchor: Anchor::Lower,
            offset,
            ln_mass_rel: ln_mills_ratio(a) + (-rho).ln_1p(),
        }
    } else {
        let ln_mass = ln_interval_mass(a, c);
        let z = ln_mass.exp();
        let (pa, pc) = (std_pdf(a), std_pdf(c));
        let mean = (pa - pc) / z;
        let var = 1.0 + (a * pa - c * pc) / z - mean * mean;
        TruncatedStd { ln_mass, mean, var, anchor: Anchor::Origin, offset: mean, ln_mass_rel: ln_mass - ln_std_pdf(0.0) }
    }
}

fn narrow_interval(a: f64, c: f64) -> TruncatedStd {
    let (x, wts) = gl40();
    let mid = 0.5 * (a + c);
    let half = 0.5 * (c - a);
    // the log-density peaks at the endpoint closest to zero (or at zero)
    let peak = if a <= 0.0 && c >= 0.0 { 0.0 } else { a.abs().min(c.abs()) };
    let shift = -0.5 * peak * peak;
    let mut m0 = 0.0;
    let mut m1 = 0.0;
    for (xi, wi) in x.iter().zip(wts) {
        let y = half * xi;
        let s = mid + y;
        let f = wi * (-0.5 * s * s - shift).exp();
        m0 += f;
        m1 += f * y;
    }
    let dy = m1 / m0;
    let mut m2 = 0.0;
    for (xi, wi) in x.iter().zip(wts) {
        let y = half * xi;
        let s = mid + y;
        let f = wi * (-0.5 * s * s - shift).exp();
        m2 += f * (y - dy) * (y - dy);
    }
    let ln_mass = (m0 * half).ln() + shift - 0.5 * (2.0 * std::f64::consts::PI).ln();
    // relative to φ(a) the shift cancels exactly when the peak is at a
    let ln_mass_rel = if peak == a { (m0 * half).ln() } else { ln_mass - ln_std_pdf(a) };
    TruncatedStd { ln_mass, mean: mid + dy, var: m2 / m0, anchor: Anchor::Lower, offset: half + dy, ln_mass_rel }
}
