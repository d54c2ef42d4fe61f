//! Log-gamma, regularized incomplete gamma and the tail probabilities built on it.

use std::fmt;

use serde::{Deserialize, Serialize};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires x > 0, got {x}");
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 100_000;

/// `ln P(a, x)` prefactor-free series sum, valid for `x < a + 1`.
fn lower_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut denom = a;
    for _ in 0..MAX_ITER {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    -x + a * x.ln() - ln_gamma(a) + sum.ln()
}

/// `ln Q(a, x)` by modified Lentz continued fraction, valid for `x ≥ a + 1`.
fn upper_fraction(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    -x + a * x.ln() - ln_gamma(a) + h.ln()
}

/// Natural log of the regularized upper incomplete gamma `Q(a, x)`.
///
/// Works in log space so tail probabilities far below `f64::MIN_POSITIVE`
/// keep a finite magnitude.
pub fn ln_gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "ln_gamma_q domain: a={a}, x={x}");
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        let p = lower_series(a, x).exp();
        (-p).ln_1p()
    } else {
        upper_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    ln_gamma_q(a, x).exp()
}

/// A tail probability kept in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub ln: f64,
}

impl PValue {
    pub fn from_ln(ln: f64) -> Self {
        PValue { ln: ln.min(0.0) }
    }

    /// The probability, or 0 when it underflows.
    pub fn value(&self) -> f64 {
        if self.is_below_min_positive() {
            0.0
        } else {
            self.ln.exp()
        }
    }

    pub fn log10(&self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }

    /// True when the probability is smaller than the smallest normal `f64`.
    pub fn is_below_min_positive(&self) -> bool {
        self.ln < f64::MIN_POSITIVE.ln()
    }
}

impl fmt::Display for PValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_below_min_positive() {
            write!(f, "< {:e} (log10 p = {:.1})", f64::MIN_POSITIVE, self.log10())
        } else {
            write!(f, "{:.3e}", self.value())
        }
    }
}

/// Upper tail of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_sf(statistic: f64, dof: f64) -> PValue {
    PValue::from_ln(ln_gamma_q(dof / 2.0, statistic.max(0.0) / 2.0))
}

/// Two-sided standard normal tail `P(|Z| ≥ |z|)`.
pub fn normal_two_sided(z: f64) -> PValue {
    PValue::from_ln(ln_gamma_q(0.5, z * z / 2.0))
}
