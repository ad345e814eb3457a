//! Scaled complementary error function and standard-normal tail helpers,
//! all arranged so that nothing underflows before it is put in log form.

use std::f64::consts::FRAC_1_SQRT_2;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Switch from `exp(x²) erfc(x)` to the continued fraction.
const ERFCX_CF_START: f64 = 2.0;
/// Backward-recurrence depth; exact to roundoff for `x ≥ 2`.
const CF_TERMS: usize = 100;
/// Switch from the erfcx-based Mills ratio to the Laplace continued fraction
/// for upper-tail variances.
const TAIL_CF_START: f64 = 5.0;

/// `erfcx(x) = exp(x²) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        if x < -26.7 {
            return f64::INFINITY;
        }
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < ERFCX_CF_START {
        return (x * x).exp() * libm::erfc(x);
    }
    if x > 1e8 {
        return FRAC_1_SQRT_PI / x;
    }
    // erfc(x) = exp(-x²)/√π · 1/(x + (1/2)/(x + (2/2)/(x + (3/2)/(x + …))))
    let mut t = x;
    for k in (1..=CF_TERMS).rev() {
        t = x + (k as f64 * 0.5) / t;
    }
    FRAC_1_SQRT_PI / t
}

/// `ln(Q(a)/φ(a))`, the log Mills ratio, free of the `a²/2` cancellation
/// that `ln Q(a) - ln φ(a)` suffers for large `a`.
pub fn ln_mills_ratio(a: f64) -> f64 {
    if a < 0.0 {
        ln_upper_tail(a) - ln_std_pdf(a)
    } else {
        (erfcx(a * FRAC_1_SQRT_2) / SQRT_2_OVER_PI).ln()
    }
}

/// `ln φ(x)` for the standard normal density.
pub fn ln_std_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn std_pdf(x: f64) -> f64 {
    ln_std_pdf(x).exp()
}

/// `ln Q(a)` where `Q(a) = P(X ≥ a)`, `X ~ N(0,1)`.
pub fn ln_upper_tail(a: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return 0.0;
    }
    if a == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        let x = a * FRAC_1_SQRT_2;
        (0.5 * erfcx(x)).ln() - 0.5 * a * a
    } else {
        (-0.5 * libm::erfc(-a * FRAC_1_SQRT_2)).ln_1p()
    }
}

/// `ln(Q(a) - Q(c))` for `a < c`, i.e. the log mass of `[a, c]`.
pub fn ln_interval_mass(a: f64, c: f64) -> f64 {
    debug_assert!(a <= c);
    if a >= 0.0 {
        let la = ln_upper_tail(a);
        let lc = ln_upper_tail(c);
        la + (-(lc - la).exp()).ln_1p()
    } else if c <= 0.0 {
        ln_interval_mass(-c, -a)
    } else {
        // straddles zero: 1 - Q(c) - Q(-a)
        (-(ln_upper_tail(c).exp() + ln_upper_tail(-a).exp())).ln_1p()
    }
}

/// Moments of the standard normal restricted to `[a, ∞)`: `(mean, var)`.
pub fn upper_tail_moments(a: f64) -> (f64, f64) {
    if a == f64::NEG_INFINITY {
        return (0.0, 1.0);
    }
    let (excess, var) = upper_tail_excess(a);
    (a + excess, var)
}

/// `(E[z | z ≥ a] - a, Var[z | z ≥ a])`. The excess is computed directly, so
/// it keeps full relative precision when `a` is large.
pub fn upper_tail_excess(a: f64) -> (f64, f64) {
    if a < TAIL_CF_START {
        let r = SQRT_2_OVER_PI / erfcx(a * FRAC_1_SQRT_2);
        let var = 1.0 - r * (r - a);
        (r - a, var)
    } else {
        // Q(a)/φ(a) = 1/(a + T), T = 1/(a + S), S = 2/(a + 3/(a + …)).
        // mean = a + T and var = 1 - (a + T)T = (S - T)/(a + S), free of cancellation.
        let mut s = a;
        for k in (3..=CF_TERMS).rev() {
            s = a + k as f64 / s;
        }
        let s = 2.0 / s;
        let t = 1.0 / (a + s);
        (t, (s - t) / (a + s))
    }
}
