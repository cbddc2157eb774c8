//! Special functions for counting statistics at large means.
//!
//! Poisson and binomial log-pmfs use Loader's saddle-point form
//! (`stirlerr` + `bd0`), which keeps full relative precision for counts
//! in the 10^5..10^6 range where `k ln λ - λ - ln k!` cancels badly.

use std::f64::consts::{PI, SQRT_2};

use libm::{erfc, lgamma as ln_gamma};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Error of Stirling's approximation: `ln Γ(n+1) - [(n+½) ln n - n + ln √(2π)]`.
pub fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;

    if n <= 0.0 {
        return 0.0;
    }
    if n <= 15.0 {
        return ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n - LN_SQRT_2PI;
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x/m) + m - x`, evaluated without cancellation when `x ≈ m`.
pub fn bd0(x: f64, m: f64) -> f64 {
    if x == 0.0 {
        return m;
    }
    if (x - m).abs() < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        if s.abs() < f64::MIN_POSITIVE {
            return s;
        }
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
    }
    x * (x / m).ln() + m - x
}

/// `ln(λ^k e^{-λ} / Γ(k+1))` for real `k ≥ 0`.
pub fn ln_poisson_pmf(k: f64, lambda: f64) -> f64 {
    if k < 0.0 {
        return f64::NEG_INFINITY;
    }
    if lambda == 0.0 {
        return if k == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if k == 0.0 {
        return -lambda;
    }
    -stirlerr(k) - bd0(k, lambda) - 0.5 * (2.0 * PI * k).ln()
}

/// `ln` of the binomial pmf `C(n, x) p^x q^(n-x)` for real `0 ≤ x ≤ n`, with `q = 1 - p`
/// supplied separately so that `p` close to 1 keeps its precision.
pub fn ln_binomial_pmf(x: f64, n: f64, p: f64, q: f64) -> f64 {
    if p == 0.0 {
        return if x == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if x == n { 0.0 } else { f64::NEG_INFINITY };
    }
    if x < 0.0 || x > n {
        return f64::NEG_INFINITY;
    }
    if x == 0.0 {
        if n == 0.0 {
            return 0.0;
        }
        return if p < 0.1 { -bd0(n, n * q) - n * p } else { n * q.ln() };
    }
    if x == n {
        return if q < 0.1 { -bd0(n, n * p) - n * q } else { n * p.ln() };
    }
    let lc = stirlerr(n) - stirlerr(x) - stirlerr(n - x) - bd0(x, n * p) - bd0(n - x, n * q);
    let lf = (2.0 * PI).ln() + x.ln() + (-x / n).ln_1p();
    lc - 0.5 * lf
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal upper tail `1 - Φ(x)`, accurate for large positive `x`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Regularized incomplete gamma functions `(P(a, x), Q(a, x))`.
///
/// The series for `P` is used below `x = a + 1` and the Lentz continued
/// fraction for `Q` above it, so the returned small member of the pair never
/// comes from a subtraction. Both expansions need `O(√a)` terms near the
/// transition, hence the iteration cap grows with `a`.
pub fn gamma_pq(a: f64, x: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) || !(x >= 0.0) || !a.is_finite() || !x.is_finite() {
        return Err(Error::invalid(format!("incomplete gamma needs a > 0, x ≥ 0 (a={a}, x={x})")));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    let max_iter = 1000 + (50.0 * a.sqrt()) as usize;
    // x^a e^{-x} / Γ(a+1)
    let ln_front = ln_poisson_pmf(a, x);

    if x < a + 1.0 {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut ap = a;
        for _ in 0..max_iter {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term < sum * f64::EPSILON {
                let p = (ln_front + sum.ln()).exp();
                return Ok((p, 1.0 - p));
            }
        }
        Err(Error::Convergence { function: "gamma_p series", a, x })
    } else {
        const TINY: f64 = 1e-300;
        let b0 = x + 1.0 - a;
        let mut f = if b0.abs() < TINY { TINY } else { b0 };
        let mut c = f;
        let mut d = 0.0;
        for n in 1..=max_iter {
            let nf = n as f64;
            let an = nf * (a - nf);
            let bn = x + (2 * n + 1) as f64 - a;
            d = bn + an * d;
            if d.abs() < TINY {
                d = TINY;
            }
            d = 1.0 / d;
            c = bn + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < f64::EPSILON {
                // Q = a · x^a e^{-x} / Γ(a+1) / f
                let q = (ln_front + a.ln() - f.ln()).exp();
                return Ok((1.0 - q, q));
            }
        }
        Err(Error::Convergence { function: "gamma_q continued fraction", a, x })
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> Result<f64> {
    gamma_pq(a, x).map(|(p, _)| p)
}

/// Regularized upper incomplete gamma `Q(a, x) = Γ(a, x) / Γ(a)`.
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    gamma_pq(a, x).map(|(_, q)| q)
}
