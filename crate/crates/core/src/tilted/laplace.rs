//! Laplace factor with a positivity floor: `t(s) = e^{-λ|s - b|} · 1[s ≥ Λ]`.
//!
//! Splitting at `b` turns each side into an exponentially tilted Gaussian,
//! `e^{∓λs} N(s; m, v) = e^{λ²v/2 ∓ λm} N(s; m ∓ λv, v)`, restricted to an
//! interval. Each piece is a truncated normal handled in log form, and the
//! pieces are recombined as a two-component mixture.

use super::quadrature::PointwiseFactor;
use super::truncated::{truncated_std_normal, Anchor};
use super::{ScalarFactor, TiltedError, TiltedMoments, LOG_Z_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplacePositivityFactor {
    /// Laplace rate `λ ≥ 0`.
    pub lambda: f64,
    /// Centre `b` of the Laplace term (the background value).
    pub background: f64,
    /// Positivity threshold `Λ`; `-∞` disables the constraint.
    pub floor: f64,
}

impl LaplacePositivityFactor {
    pub fn new(lambda: f64, background: f64, floor: f64) -> Self {
        assert!(lambda >= 0.0, "Laplace rate must be nonnegative");
        assert!(floor < f64::INFINITY, "floor must be finite or -inf");
        Self { lambda, background, floor }
    }

    pub fn moments(&self, m: f64, v: f64) -> Result<TiltedMoments, TiltedError> {
        moments_laplace_positivity(self, m, v)
    }
}

struct Piece {
    log_z: f64,
    mean: f64,
    var: f64,
}

/// One tilted-and-truncated piece `e^{log_w} N(s; centre, v)` on `[lo, hi]`.
/// `ln_density` is the untransformed log integrand `ln t(s) + ln N(s; m, v)`;
/// evaluating it at an endpoint avoids the cancellation between `log_w` and
/// the truncated mass far in a tail.
fn piece(log_w: f64, centre: f64, v: f64, lo: f64, hi: f64, ln_density: impl Fn(f64) -> f64) -> Option<Piece> {
    if !(lo < hi) {
        return None;
    }
    let sd = v.sqrt();
    let t = truncated_std_normal((lo - centre) / sd, (hi - centre) / sd);
    let log_z = match t.anchor {
        Anchor::Lower => ln_density(lo) + sd.ln() + t.ln_mass_rel,
        Anchor::Upper => ln_density(hi) + sd.ln() + t.ln_mass_rel,
        Anchor::Origin => log_w + t.ln_mass,
    };
    Some(Piece { log_z, mean: t.affine_mean(centre, sd, lo, hi), var: v * t.var })
}

pub fn moments_laplace_positivity(f: &LaplacePositivityFactor, m: f64, v: f64) -> Result<TiltedMoments, TiltedError> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(TiltedError::InvalidVariance(v));
    }
    let (lam, b, floor) = (f.lambda, f.background, f.floor);
    let ln_density = |s: f64| -lam * (s - b).abs() - 0.5 * (s - m).powi(2) / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
    let mut pieces = Vec::with_capacity(2);
    if lam == 0.0 {
        pieces.extend(piece(0.0, m, v, floor, f64::INFINITY, ln_density));
    } else {
        let half_tilt = 0.5 * lam * lam * v;
        let d = m - b;
        // s ≥ b: e^{-λ(s-b)} N(s; m, v)
        pieces.extend(piece(half_tilt - lam * d, m - lam * v, v, floor.max(b), f64::INFINITY, ln_density));
        // Λ ≤ s < b: e^{λ(s-b)} N(s; m, v)
        pieces.extend(piece(half_tilt + lam * d, m + lam * v, v, floor, b, ln_density));
    }
    let log_z = pieces.iter().map(|p| p.log_z).fold(f64::NEG_INFINITY, f64::max);
    if !(log_z >= LOG_Z_FLOOR) {
        return Err(TiltedError::DegenerateSupport { log_z });
    }
    let weights: Vec<f64> = pieces.iter().map(|p| (p.log_z - log_z).exp()).collect();
    let total: f64 = weights.iter().sum();
    let log_z = log_z + total.ln();
    let mean = pieces.iter().zip(&weights).map(|(p, w)| w * p.mean).sum::<f64>() / total;
    let var = pieces.iter().zip(&weights).map(|(p, w)| w * (p.var + (p.mean - mean).powi(2))).sum::<f64>() / total;
    if !(log_z >= LOG_Z_FLOOR) {
        return Err(TiltedError::DegenerateSupport { log_z });
    }
    Ok(TiltedMoments { log_z, mean, var })
}

impl ScalarFactor for LaplacePositivityFactor {
    fn tilted_moments(&self, m: f64, v: f64) -> Result<TiltedMoments, TiltedError> {
        moments_laplace_positivity(self, m, v)
    }

    fn is_log_concave(&self) -> bool {
        true
    }
}

impl PointwiseFactor for LaplacePositivityFactor {
    fn ln_value(&self, s: f64) -> f64 {
        if s < self.floor {
            f64::NEG_INFINITY
        } else {
            -self.lambda * (s - self.background).abs()
        }
    }

    fn support(&self) -> (f64, f64) {
        (self.floor, f64::INFINITY)
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.background]
    }
}

#[cfg(test)]
mod tests {
    use super::super::quadrature::{moments_quadrature, QuadratureOptions};
    use super::*;

    fn quad(f: &LaplacePositivityFactor, m: f64, v: f64) -> TiltedMoments {
        moments_quadrature(f, m, v, &QuadratureOptions::default()).unwrap()
    }

    fn close(a: &TiltedMoments, b: &TiltedMoments, tol: f64) -> bool {
        let sd = b.var.sqrt();
        (a.mean - b.mean).abs() <= tol * b.mean.abs().max(sd)
            && (a.var - b.var).abs() <= tol * b.var
            && (a.log_z - b.log_z).abs() <= tol * b.log_z.abs().max(1.0)
    }

    #[test]
    fn no_tilt_no_floor_is_identity() {
        let f = LaplacePositivityFactor::new(0.0, 3.0, f64::NEG_INFINITY);
        let tm = f.moments(0.4, 2.0).unwrap();
        assert_eq!(tm.log_z, 0.0);
        assert_eq!(tm.mean, 0.4);
        assert_eq!(tm.var, 2.0);
    }

    #[test]
    fn unit_case_matches_quadrature() {
        let f = LaplacePositivityFactor::new(1.0, 0.0, 0.0);
        let a = f.moments(0.0, 1.0).unwrap();
        let q = quad(&f, 0.0, 1.0);
        assert!(close(&a, &q, 1e-10), "{a:?} vs {q:?}");
    }

    #[test]
    fn extreme_rate_stays_finite() {
        let f = LaplacePositivityFactor::new(1e3, 2.0, 0.0);
        let a = f.moments(2.0, 1.0).unwrap();
        assert!(a.log_z.is_finite());
        assert!(a.var > 0.0 && a.var < 1.0);
        // the tilted law is nearly a Laplace with rate λ: var ≈ 2/λ²
        assert!((a.var / 2e-6 - 1.0).abs() < 1e-2);
        let q = quad(&f, 2.0, 1.0);
        assert!(close(&a, &q, 1e-9), "{a:?} vs {q:?}");
    }

    #[test]
    fn cross_oracle_grid() {
        for &lambda in &[1e-2, 1.0, 1e2] {
            for &v in &[0.04_f64, 1.0, 9.0] {
                let sd = v.sqrt();
                for &k in &[-5.0, 0.0, 5.0] {
                    let b = 1.0;
                    let f = LaplacePositivityFactor::new(lambda, b, 0.0);
                    let m = b + k * sd;
                    let a = f.moments(m, v).unwrap();
                    let q = quad(&f, m, v);
                    assert!(close(&a, &q, 1e-9), "λ={lambda} v={v} k={k}: {a:?} vs {q:?}");
                }
            }
        }
    }

    #[test]
    fn floor_above_background() {
        let f = LaplacePositivityFactor::new(2.0, 0.0, 0.5);
        let a = f.moments(0.2, 0.3).unwrap();
        let q = quad(&f, 0.2, 0.3);
        assert!(close(&a, &q, 1e-9));
        assert!(a.mean > 0.5);
    }

    #[test]
    fn unreachable_floor_is_degenerate() {
        let f = LaplacePositivityFactor::new(1.0, 0.0, 45.0);
        assert!(matches!(f.moments(0.0, 1.0), Err(TiltedError::DegenerateSupport { .. })));
        let f = LaplacePositivityFactor::new(1.0, 0.0, 30.0);
        assert!(f.moments(0.0, 1.0).is_ok());
    }

    #[test]
    fn rejects_bad_variance() {
        let f = LaplacePositivityFactor::new(1.0, 0.0, 0.0);
        assert!(matches!(f.moments(0.0, 0.0), Err(TiltedError::InvalidVariance(_))));
        assert!(matches!(f.moments(0.0, -1.0), Err(TiltedError::InvalidVariance(_))));
    }

    /// mean = m + v ∂ₘ ln Z, var = v + v² ∂²ₘ ln Z.
    #[test]
    fn derivative_identities() {
        for &(lambda, b, floor, m, v) in
            &[(1.0, 0.0, 0.0, 0.3, 1.0), (5.0, 1.0, 0.2, 0.9, 0.5), (0.3, -1.0, f64::NEG_INFINITY, 2.0, 4.0), (50.0, 0.0, -0.1, 0.05, 0.01)]
        {
            let f = LaplacePositivityFactor::new(lambda, b, floor);
            let h = 1e-4 * f64::sqrt(v);
            let lz = |m: f64| f.moments(m, v).unwrap().log_z;
            let (lm, l0, lp) = (lz(m - h), lz(m), lz(m + h));
            let d1 = (lp - lm) / (2.0 * h);
            let d2 = (lp - 2.0 * l0 + lm) / (h * h);
            let tm = f.moments(m, v).unwrap();
            let mean_fd = m + v * d1;
            let var_fd = v + v * v * d2;
            assert!((mean_fd - tm.mean).abs() <= 1e-4 * tm.mean.abs().max(tm.var.sqrt()), "{mean_fd} vs {}", tm.mean);
            assert!((var_fd - tm.var).abs() <= 1e-4 * tm.var, "{var_fd} vs {}", tm.var);
        }
    }

    #[test]
    fn variance_positive_and_contracted() {
        for &lambda in &[0.0, 0.1, 1.0, 30.0, 1e3] {
            for &floor in &[f64::NEG_INFINITY, -1.0, 0.0, 0.8] {
                for i in 0..21 {
                    let m = -4.0 + 0.4 * i as f64;
                    for &v in &[1e-4, 0.1, 1.0, 25.0] {
                        let f = LaplacePositivityFactor::new(lambda, 0.5, floor);
                        if let Ok(tm) = f.moments(m, v) {
                            assert!(tm.var > 0.0, "λ={lambda} Λ={floor} m={m} v={v}");
                            assert!(tm.var <= v * (1.0 + 1e-12), "λ={lambda} Λ={floor} m={m} v={v}: {} > {v}", tm.var);
                        }
                    }
                }
            }
        }
    }
}
