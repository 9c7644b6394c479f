//! Mittag-Leffler functions on the negative real axis.
//!
//! The rough Heston variance kernel is the Mittag-Leffler density
//!
//! ```text
//! f(x) = λ x^(α-1) E_{α,α}(-λ x^α),     F(x) = 1 - E_α(-λ x^α)
//! ```
//!
//! so everything here reduces to evaluating `E_{α,β}(-z)` for `β ∈ {1, α}`
//! and `z ≥ 0`. Three regimes are used:
//!
//! * the power series while `z^(1/α) ≤ 8`, where the sum of absolute terms
//!   (≈ `E_α(+z)`) stays below ~1e4 and cancellation costs at most four digits;
//! * the algebraic asymptotic expansion `Σ (-1)^(k+1) z^(-k) / Γ(β - αk)` once
//!   its smallest term drops below 1e-16 of the sum;
//! * otherwise the Laplace representation of the completely monotone function
//!   `E_α(-t^α)`, integrated numerically. Its spectral density is positive so
//!   the quadrature has no cancellation.
//!
//! `α = 1` is special-cased to the exponential.

use std::f64::consts::PI;

use thiserror::Error;

use crate::quad::{gauss_kronrod, gauss_kronrod_panels, QuadError, Tolerance};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecialError {
    #[error("{name} = {value} is outside its domain ({domain})")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

pub type Result<T> = std::result::Result<T, SpecialError>;

// Lanczos approximation, g = 7, n = 9. Relative error below 1e-15 for x ≥ 1/2.
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

fn lanczos_sum(x: f64) -> f64 {
    // x here is the shifted argument (Γ(x + 1))
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    acc
}

/// `sin(πx)`, exact zero at integers and accurate for large `|x|`.
pub fn sin_pi(x: f64) -> f64 {
    let mut r = x % 2.0;
    if r > 1.0 {
        r -= 2.0;
    } else if r < -1.0 {
        r += 2.0;
    }
    if r > 0.5 {
        (PI * (1.0 - r)).sin()
    } else if r < -0.5 {
        -(PI * (1.0 + r)).sin()
    } else {
        (PI * r).sin()
    }
}

/// Stirling correction `ln Γ(x) - [(x - 1/2) ln x - x + ln √(2π)]`, x ≥ 12.
fn stirling_correction(x: f64) -> f64 {
    let r = 1.0 / x;
    let r2 = r * r;
    r * (1.0 / 12.0
        - r2 * (1.0 / 360.0
            - r2 * (1.0 / 1260.0
                - r2 * (1.0 / 1680.0 - r2 * (1.0 / 1188.0 - r2 * 691.0 / 360_360.0)))))
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// The gamma function. Poles return +∞; callers needing `1/Γ` should use
/// [`rgamma`].
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        let s = sin_pi(x);
        if s == 0.0 {
            return f64::INFINITY;
        }
        return PI / (s * gamma(1.0 - x));
    }
    if x > 171.7 {
        return f64::INFINITY;
    }
    if x == x.floor() && x <= 23.0 {
        // exact for n! with n ≤ 22
        return (2..x as u64).fold(1.0, |acc, k| acc * k as f64);
    }
    if x >= 12.0 {
        // split x^(x-1/2) so the intermediate power cannot overflow
        let p = x.powf(0.5 * (x - 0.5));
        return (2.0 * PI).sqrt() * p * (p * (-x).exp()) * stirling_correction(x).exp();
    }
    let x = x - 1.0;
    let t = x + LANCZOS_G + 0.5;
    t.powf(x + 0.5) * (-t).exp() * (2.0 * PI).sqrt() * lanczos_sum(x)
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // reflection keeps the Lanczos sum in its accurate range
        return (PI / sin_pi(x)).ln() - ln_gamma(1.0 - x);
    }
    if x >= 12.0 {
        return (x - 0.5) * x.ln() - x + LN_SQRT_2PI + stirling_correction(x);
    }
    let x = x - 1.0;
    let t = x + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + lanczos_sum(x).ln()
}

/// `1/Γ(x)`, an entire function: zero at the non-positive integers.
pub fn rgamma(x: f64) -> f64 {
    if x < 0.5 {
        return sin_pi(x) * gamma(1.0 - x) / PI;
    }
    if x > 171.7 {
        return (-ln_gamma(x)).exp();
    }
    1.0 / gamma(x)
}

/// Second Mittag-Leffler parameter. Only the two values the density/CDF pair
/// needs are supported, because the mid-range Laplace integral is specific
/// to them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Beta {
    One,
    Alpha,
}

impl Beta {
    fn value(self, alpha: f64) -> f64 {
        match self {
            Beta::One => 1.0,
            Beta::Alpha => alpha,
        }
    }
}

// Series is used while z^(1/α) stays at or below this.
const SERIES_LIMIT: f64 = 8.0;
const SERIES_MAX_TERMS: usize = 300;
const ASYMPTOTIC_MAX_TERMS: usize = 400;

/// Neumaier-compensated power series `Σ_{k ≥ first} (-z)^k / Γ(αk + β)`.
fn ml_series(alpha: f64, beta: f64, z: f64, first: usize) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut below = 0;
    for k in first..SERIES_MAX_TERMS {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let term = sign * z.powi(k as i32) * rgamma(alpha * k as f64 + beta);
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
        // terms with 1/Γ = 0 can occur only at k = 0 for β = α... never for
        // β ∈ {1, α} with α > 0, so a tiny term means convergence
        if term.abs() <= 1e-18 * (sum + comp).abs() {
            below += 1;
            if below >= 3 {
                break;
            }
        } else {
            below = 0;
        }
    }
    sum + comp
}

/// Asymptotic expansion; `None` when its smallest term is not negligible.
fn ml_asymptotic(alpha: f64, beta: f64, z: f64) -> Option<f64> {
    let ln_z = z.ln();
    let mut sum = 0.0;
    let mut prev_mag = f64::INFINITY;
    for k in 1..ASYMPTOTIC_MAX_TERMS {
        // 1/Γ(β - αk) = Γ(y) sin(πy) / π with y = αk + 1 - β > 0
        let y = alpha * k as f64 + 1.0 - beta;
        let mag = (ln_gamma(y) - k as f64 * ln_z).exp() / PI;
        if mag > prev_mag {
            return None;
        }
        prev_mag = mag;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * mag * sin_pi(y);
        if k > 2 && mag <= 1e-17 * sum.abs() {
            return Some(sum);
        }
    }
    None
}

/// Laplace representation:
/// `E_α(-t^α) = ∫_0^∞ e^{-rt} K(r) dr` with
/// `K(r) = sin(απ)/π · r^(α-1) / (r^(2α) + 2 r^α cos(απ) + 1)`,
/// and `E_{α,α}(-t^α) = t^(1-α) ∫_0^∞ r e^{-rt} K(r) dr`.
///
/// Substituting `r = u^(1/α)` on [0, 1] and `r = u^(-1/α)` on [1, ∞) folds both
/// halves onto `u ∈ (0, 1)` with the common weight `1 / (1 + 2u cos(απ) + u²)`.
fn ml_laplace(alpha: f64, beta: Beta, z: f64) -> Result<f64> {
    let t = z.powf(1.0 / alpha);
    let inv = 1.0 / alpha;
    let c = (alpha * PI).cos();
    let integrand = |u: f64| {
        let r_lo = u.powf(inv);
        let r_hi = u.powf(-inv);
        let e_lo = (-t * r_lo).exp();
        let e_hi = if t * r_hi > 745.0 {
            0.0
        } else {
            (-t * r_hi).exp()
        };
        let num = match beta {
            Beta::One => e_lo + e_hi,
            Beta::Alpha => r_lo * e_lo + r_hi * e_hi,
        };
        num / (1.0 + u * (2.0 * c + u))
    };
    // the first piece decays on the scale u ~ t^(-α) = 1/z
    let knee = (1.0 / z).min(0.5);
    let q = gauss_kronrod_panels(integrand, &[0.0, knee, 1.0], Tolerance::new(1e-13, 0.0))?;
    let mut value = sin_pi(alpha) / (alpha * PI) * q.value;
    if beta == Beta::Alpha {
        value *= t.powf(1.0 - alpha);
    }
    Ok(value)
}

fn ml_neg_beta(alpha: f64, beta: Beta, z: f64) -> Result<f64> {
    if alpha == 1.0 {
        return Ok((-z).exp());
    }
    let b = beta.value(alpha);
    if z == 0.0 {
        return Ok(match beta {
            Beta::One => 1.0,
            Beta::Alpha => rgamma(alpha),
        });
    }
    if z.powf(1.0 / alpha) <= SERIES_LIMIT {
        return Ok(ml_series(alpha, b, z, 0));
    }
    if let Some(v) = ml_asymptotic(alpha, b, z) {
        return Ok(v);
    }
    ml_laplace(alpha, beta, z)
}

/// `E_α(-x) = Σ_{k≥0} (-x)^k / Γ(αk + 1)` for `0 < α ≤ 1`, `x ≥ 0`.
pub fn ml_neg(alpha: f64, x: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(SpecialError::Domain {
            name: "alpha",
            value: alpha,
            domain: "0 < alpha <= 1",
        });
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(SpecialError::Domain {
            name: "x",
            value: x,
            domain: "0 <= x < inf",
        });
    }
    ml_neg_beta(alpha, Beta::One, x)
}

/// Parameters of the Mittag-Leffler density `f^{α,λ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlParams {
    alpha: f64,
    lambda: f64,
}

impl MlParams {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        if !(alpha > 0.5 && alpha <= 1.0) {
            return Err(SpecialError::Domain {
                name: "alpha",
                value: alpha,
                domain: "1/2 < alpha <= 1",
            });
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(SpecialError::Domain {
                name: "lambda",
                value: lambda,
                domain: "lambda > 0",
            });
        }
        Ok(Self { alpha, lambda })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Natural time scale `λ^(-1/α)` of the kernel.
    pub fn time_scale(&self) -> f64 {
        self.lambda.powf(-1.0 / self.alpha)
    }

    fn eval(&self, beta: Beta, z: f64) -> f64 {
        // The only failure mode is the mid-range quadrature, which is
        // integrating a smooth positive integrand; treat failure as a bug.
        ml_neg_beta(self.alpha, beta, z).expect("Mittag-Leffler quadrature failed")
    }

    /// `f(x) · x^(1-α) = λ E_{α,α}(-λ x^α)`: the density with its singular
    /// factor removed, finite at `x = 0` (value `λ/Γ(α)`).
    pub fn density_regular(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        if self.alpha == 1.0 {
            return self.lambda * (-self.lambda * x).exp();
        }
        self.lambda * self.eval(Beta::Alpha, self.lambda * x.powf(self.alpha))
    }

    /// Density `f^{α,λ}(x)` for `x > 0`.
    pub fn density(&self, x: f64) -> f64 {
        debug_assert!(x > 0.0);
        if self.alpha == 1.0 {
            return self.lambda * (-self.lambda * x).exp();
        }
        x.powf(self.alpha - 1.0) * self.density_regular(x)
    }

    /// `E_α(-λ x^α) = 1 - F(x)`.
    pub fn survival(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        if self.alpha == 1.0 {
            return (-self.lambda * x).exp();
        }
        self.eval(Beta::One, self.lambda * x.powf(self.alpha))
    }

    /// CDF `F^{α,λ}(x) = 1 - E_α(-λ x^α)`.
    pub fn cdf(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        if x == 0.0 {
            return 0.0;
        }
        if self.alpha == 1.0 {
            return -(-self.lambda * x).exp_m1();
        }
        let z = self.lambda * x.powf(self.alpha);
        if z.powf(1.0 / self.alpha) <= SERIES_LIMIT {
            // drop the k = 0 term instead of computing 1 - (1 - small)
            -ml_series(self.alpha, 1.0, z, 1)
        } else {
            1.0 - self.eval(Beta::One, z)
        }
    }

    /// `F(b) - F(a)` for `0 ≤ a ≤ b`.
    ///
    /// Narrow intervals far from the origin integrate the density with a
    /// 5-point Gauss–Legendre rule (error ~ ((b-a)/a)^10), which avoids
    /// subtracting two nearly equal survival values. Otherwise the difference
    /// is taken on whichever side (CDF or survival) avoids cancellation
    /// against 1.
    pub fn cdf_increment(&self, a: f64, b: f64) -> f64 {
        debug_assert!(0.0 <= a && a <= b);
        if b - a <= 0.05 * a {
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            return half
                * GL5
                    .iter()
                    .map(|&(x, w)| {
                        w * (self.density(mid - half * x) + self.density(mid + half * x))
                    })
                    .sum::<f64>()
                + half * GL5_CENTER * self.density(mid);
        }
        if self.cdf(a) < 0.5 {
            self.cdf(b) - self.cdf(a)
        } else {
            self.survival(a) - self.survival(b)
        }
    }
}

// 5-point Gauss–Legendre: symmetric node pairs (x, w) and the center weight.
const GL5: [(f64, f64); 2] = [
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.538_469_310_105_683, 0.478_628_670_499_366_5),
];
const GL5_CENTER: f64 = 0.568_888_888_888_888_9;

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(SpecialError::Domain {
            name,
            value: x,
            domain: "x > 0",
        })
    }
}

/// Density `f^{α,λ}(x)`; the density is singular at 0 for α < 1 so `x > 0`
/// is required.
pub fn ml_density(p: &MlParams, x: f64) -> Result<f64> {
    check_positive("x", x)?;
    Ok(p.density(x))
}

/// CDF `F^{α,λ}(x)` for `x ≥ 0`.
pub fn ml_cdf(p: &MlParams, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(SpecialError::Domain {
            name: "x",
            value: x,
            domain: "x >= 0",
        });
    }
    Ok(p.cdf(x))
}

/// `∫_0^∞ f^{α,λ}(s)² ds`, finite for `α > 1/2`.
///
/// Uses the scaling `f^{α,λ}(x) = λ^(1/α) f^{α,1}(λ^(1/α) x)`, so the integral
/// is `λ^(1/α)` times the unit-rate value. The `x^(2α-2)` singularity on
/// [0, 1] is removed by `x = v^(1/(2α-1))`; [1, 2^12] is split into octaves
/// and the remaining tail is mapped onto (0, 1] by `x = T/w`.
pub fn l2_norm_f_squared(p: &MlParams) -> Result<f64> {
    let alpha = p.alpha;
    if !(alpha > 0.5) {
        return Err(SpecialError::Domain {
            name: "alpha",
            value: alpha,
            domain: "alpha > 1/2",
        });
    }
    if alpha == 1.0 {
        return Ok(0.5 * p.lambda);
    }
    let unit = MlParams { alpha, lambda: 1.0 };
    let tol = Tolerance::new(1e-12, 0.0);
    let power = 1.0 / (2.0 * alpha - 1.0);

    // ∫_0^1 x^(2α-2) E_{α,α}(-x^α)^2 dx = power · ∫_0^1 E_{α,α}(-v^(α·power))^2 dv
    let head = gauss_kronrod(
        |v: f64| {
            let e = unit.density_regular(v.powf(power));
            e * e
        },
        0.0,
        1.0,
        tol,
    )?
    .value
        * power;

    let t_end = 4096.0;
    let mut points = vec![1.0];
    while *points.last().unwrap() < t_end {
        let next = points.last().unwrap() * 2.0;
        points.push(next);
    }
    let body = gauss_kronrod_panels(
        |x: f64| {
            let f = unit.density(x);
            f * f
        },
        &points,
        tol,
    )?
    .value;
    let tail = gauss_kronrod(
        |w: f64| {
            let x = t_end / w;
            let f = unit.density(x);
            f * f * t_end / (w * w)
        },
        0.0,
        1.0,
        tol,
    )?
    .value;
    Ok(p.lambda.powf(1.0 / alpha) * (head + body + tail))
}
