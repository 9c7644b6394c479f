//! Analytic Zumbach quantities under rough Heston.
//!
//! With `f = f^{α,λ}` and `F` its CDF, every quantity here is a one- or
//! two-dimensional integral of `f`, `F` and the forward variance curve. The
//! `u^(α-1)` singularity of `f` at the origin is removed by substituting
//! `u = v^(1/α)`, under which `f(u) du = (1/α) λ E_{α,α}(-λ v) dv` is smooth.
//! The remaining endpoint kinks (`F(x) ~ x^α`) are left to the adaptive
//! Gauss–Kronrod rule.
//!
//! Tolerances are purely relative: the covariances are of order `δ^(2α+1)`,
//! which reaches 1e-14 at the smallest day lengths of interest, so any fixed
//! absolute floor would silently swamp them.

use serde::Serialize;
use thiserror::Error;

use crate::par;
use crate::quad::{gauss_kronrod_panels, QuadError, Tolerance};
use crate::special::{gamma, l2_norm_f_squared, MlParams, SpecialError};

/// Trading day in years.
pub const DEFAULT_DELTA: f64 = 1.0 / 252.0;

const TOL: Tolerance = Tolerance::new(1e-10, 0.0);
// Inner integrals of nested quadratures are resolved more tightly so their
// noise does not stall the outer error estimate.
const INNER_TOL: Tolerance = Tolerance::new(1e-11, 0.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{name} = {value} is invalid: requires {constraint}")]
    Parameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("invalid forward variance curve: {0}")]
    Curve(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(&'static str),
    #[error("{context}: {source}")]
    Quadrature {
        context: &'static str,
        source: QuadError,
    },
    #[error(transparent)]
    Special(#[from] SpecialError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn param(name: &'static str, value: f64, ok: bool, constraint: &'static str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Parameter {
            name,
            value,
            constraint,
        })
    }
}

/// Rough Heston parameters `(H, λ, ν, ρ)`.
///
/// `ν = 0` is accepted: it is the deterministic-variance limit and every
/// formula degenerates gracefully there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    hurst: f64,
    lambda: f64,
    nu: f64,
    rho: f64,
    #[serde(skip)]
    kernel: MlParams,
}

impl ModelParams {
    pub fn new(hurst: f64, lambda: f64, nu: f64, rho: f64) -> Result<Self> {
        param("hurst", hurst, hurst > 0.0 && hurst <= 0.5, "0 < H <= 1/2")?;
        param("lambda", lambda, lambda > 0.0, "lambda > 0")?;
        param("nu", nu, nu >= 0.0, "nu >= 0")?;
        param("rho", rho, (-1.0..=1.0).contains(&rho), "-1 <= rho <= 1")?;
        let kernel = MlParams::new(hurst + 0.5, lambda)?;
        Ok(Self {
            hurst,
            lambda,
            nu,
            rho,
            kernel,
        })
    }

    /// Reference parameters: `H = 0.05, λ = 0.3, ν = 0.45, ρ = -0.7`.
    pub fn reference() -> Self {
        Self::new(0.05, 0.3, 0.45, -0.7).expect("reference parameters are valid")
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `α = H + 1/2`.
    pub fn alpha(&self) -> f64 {
        self.hurst + 0.5
    }

    /// The Mittag-Leffler kernel `f^{α,λ}`.
    pub fn kernel(&self) -> &MlParams {
        &self.kernel
    }

    pub fn with_hurst(&self, hurst: f64) -> Result<Self> {
        Self::new(hurst, self.lambda, self.nu, self.rho)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.hurst, lambda, self.nu, self.rho)
    }

    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        Self::new(self.hurst, self.lambda, nu, self.rho)
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(self.hurst, self.lambda, self.nu, rho)
    }

    /// `(ν/λ)²`, the scale of every variance-of-variance term.
    fn nu_over_lambda_sq(&self) -> f64 {
        (self.nu / self.lambda).powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CurveKind {
    Flat(f64),
    /// Ascending `(t, ξ₀)` knots; linear in between, constant outside.
    PiecewiseLinear(Vec<(f64, f64)>),
}

/// Forward variance curve `ξ₀(t) = E[V_t]`, in variance per year.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardVarianceCurve {
    kind: CurveKind,
}

// A piece `ξ(s) = a + b s` on `[start, end]`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    start: f64,
    end: f64,
    a: f64,
    b: f64,
}

impl ForwardVarianceCurve {
    pub fn flat(level: f64) -> Result<Self> {
        if !(level > 0.0 && level.is_finite()) {
            return Err(ModelError::Curve(format!(
                "flat level must be positive, got {level}"
            )));
        }
        Ok(Self {
            kind: CurveKind::Flat(level),
        })
    }

    pub fn piecewise_linear(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(ModelError::Curve("no knots".into()));
        }
        for (i, &(t, x)) in knots.iter().enumerate() {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(ModelError::Curve(format!(
                    "knot {i}: time {t} must be finite and >= 0"
                )));
            }
            if !(x > 0.0 && x.is_finite()) {
                return Err(ModelError::Curve(format!(
                    "knot {i}: variance {x} must be positive"
                )));
            }
            if i > 0 && t <= knots[i - 1].0 {
                return Err(ModelError::Curve(format!(
                    "knot {i}: times must be strictly ascending"
                )));
            }
        }
        Ok(Self {
            kind: CurveKind::PiecewiseLinear(knots),
        })
    }

    pub fn kind(&self) -> &CurveKind {
        &self.kind
    }

    /// `Some(level)` for a flat curve.
    pub fn flat_level(&self) -> Option<f64> {
        match self.kind {
            CurveKind::Flat(v) => Some(v),
            CurveKind::PiecewiseLinear(_) => None,
        }
    }

    /// `ξ₀(t)` for `t ≥ 0`.
    pub fn value(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        match &self.kind {
            CurveKind::Flat(v) => *v,
            CurveKind::PiecewiseLinear(knots) => {
                let i = knots.partition_point(|&(tk, _)| tk <= t);
                if i == 0 {
                    knots[0].1
                } else if i == knots.len() {
                    knots[i - 1].1
                } else {
                    let (t0, x0) = knots[i - 1];
                    let (t1, x1) = knots[i];
                    x0 + (x1 - x0) * (t - t0) / (t1 - t0)
                }
            }
        }
    }

    // Linear pieces covering [0, ∞).
    fn pieces(&self) -> Vec<Piece> {
        match &self.kind {
            CurveKind::Flat(v) => vec![Piece {
                start: 0.0,
                end: f64::INFINITY,
                a: *v,
                b: 0.0,
            }],
            CurveKind::PiecewiseLinear(knots) => {
                let mut out = Vec::with_capacity(knots.len() + 1);
                if knots[0].0 > 0.0 {
                    out.push(Piece {
                        start: 0.0,
                        end: knots[0].0,
                        a: knots[0].1,
                        b: 0.0,
                    });
                }
                for w in knots.windows(2) {
                    let ((t0, x0), (t1, x1)) = (w[0], w[1]);
                    let b = (x1 - x0) / (t1 - t0);
                    out.push(Piece {
                        start: t0,
                        end: t1,
                        a: x0 - b * t0,
                        b,
                    });
                }
                let last = knots[knots.len() - 1];
                out.push(Piece {
                    start: last.0,
                    end: f64::INFINITY,
                    a: last.1,
                    b: 0.0,
                });
                out
            }
        }
    }

    /// `∫_a^b ξ₀(s) ds`, exact (trapezoids on linear pieces).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        debug_assert!(a <= b);
        self.integral_over(a, b - a)
    }

    /// `∫_a^{a+len} ξ₀(s) ds`. Taking the length directly keeps short windows
    /// far from the origin free of the rounding in `(a + len) - a`.
    pub fn integral_over(&self, a: f64, len: f64) -> f64 {
        debug_assert!(a >= 0.0 && len >= 0.0);
        if let Some(v) = self.flat_level() {
            return v * len;
        }
        self.pieces()
            .iter()
            .filter_map(|p| {
                let lo = (p.start - a).max(0.0);
                let hi = (p.end - a).min(len);
                (hi > lo).then_some((hi - lo) * (p.a + p.b * (a + 0.5 * (lo + hi))))
            })
            .sum()
    }

    /// `∫_0^t (t-s)^(α-1) ξ₀(s) ds`, exact on linear pieces.
    pub fn fractional_integral(&self, t: f64, alpha: f64) -> f64 {
        debug_assert!(t >= 0.0 && alpha > 0.0);
        // with x = t - s:  ∫ x^(α-1) (a + b t - b x) dx
        self.pieces()
            .iter()
            .filter_map(|p| {
                let lo = p.start;
                let hi = p.end.min(t);
                (hi > lo).then(|| {
                    let (x0, x1) = (t - hi, t - lo);
                    (p.a + p.b * t) * (x1.powf(alpha) - x0.powf(alpha)) / alpha
                        - p.b * (x1.powf(alpha + 1.0) - x0.powf(alpha + 1.0)) / (alpha + 1.0)
                })
            })
            .sum()
    }
}

/// Zumbach covariances `Z_t(k)` on a lag grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZumbachCurve {
    pub delta: f64,
    pub t: f64,
    pub lags: Vec<u32>,
    pub values: Vec<f64>,
}

fn integrate<F: FnMut(f64) -> f64>(
    context: &'static str,
    f: F,
    points: &[f64],
    tol: Tolerance,
) -> Result<f64> {
    gauss_kronrod_panels(f, points, tol)
        .map(|q| q.value)
        .map_err(|source| ModelError::Quadrature { context, source })
}

fn check_delta(delta: f64) -> Result<()> {
    param("delta", delta, delta > 0.0, "delta > 0")
}

fn check_time(t: f64, delta: f64) -> Result<()> {
    check_delta(delta)?;
    if !(t >= delta && t.is_finite()) {
        return Err(ModelError::Precondition(format!(
            "t = {t} must satisfy t >= delta = {delta}"
        )));
    }
    Ok(())
}

/// `g₀(t) = ξ₀(t) + (λ/Γ(α)) ∫_0^t (t-s)^(α-1) ξ₀(s) ds`.
pub fn g0(params: &ModelParams, curve: &ForwardVarianceCurve, t: f64) -> Result<f64> {
    param("t", t, t >= 0.0, "t >= 0")?;
    let alpha = params.alpha();
    Ok(curve.value(t) + params.lambda * curve.fractional_integral(t, alpha) / gamma(alpha))
}

// I(s) = ∫_0^L f(u) ξ₀(t - s - u) du with L = δ - s, in the smooth variable v = u^α.
fn kernel_curve_integral(
    params: &ModelParams,
    curve: &ForwardVarianceCurve,
    end: f64,
    len: f64,
) -> Result<f64> {
    let kernel = params.kernel;
    if let Some(v) = curve.flat_level() {
        return Ok(v * kernel.cdf(len));
    }
    let alpha = params.alpha();
    let inv = 1.0 / alpha;
    let q = integrate(
        "inner kernel integral",
        |v| {
            let u = v.powf(inv);
            kernel.density_regular(u) * curve.value((end - u).max(0.0))
        },
        &[0.0, len.powf(alpha)],
        INNER_TOL,
    )?;
    Ok(q * inv)
}

/// Zumbach covariance
/// `Z_t(k) = 2(ρν/λ)² ∫_0^δ [F(s+kδ) - F(s+(k-1)δ)] ∫_0^{δ-s} f(u) ξ₀(t-s-u) du ds`.
pub fn zumbach_cov(
    params: &ModelParams,
    curve: &ForwardVarianceCurve,
    t: f64,
    k: u32,
    delta: f64,
) -> Result<f64> {
    check_time(t, delta)?;
    if k == 0 {
        return Err(ModelError::Precondition("lag k must be >= 1".into()));
    }
    if params.rho == 0.0 || params.nu == 0.0 {
        return Ok(0.0);
    }
    let kernel = params.kernel;
    let lead = (k - 1) as f64 * delta;
    let mut failure = None;
    let outer = integrate(
        "Zumbach covariance",
        |s| {
            let weight = kernel.cdf_increment(s + lead, s + lead + delta);
            match kernel_curve_integral(params, curve, t - s, delta - s) {
                Ok(inner) => weight * inner,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        &[0.0, 0.5 * delta, delta],
        TOL,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(2.0 * (params.rho * params.nu / params.lambda).powi(2) * outer?)
}

/// [`zumbach_cov`] for `k = 1..=k_max`, evaluated in parallel.
pub fn zumbach_curve(
    params: &ModelParams,
    curve: &ForwardVarianceCurve,
    t: f64,
    delta: f64,
    k_max: u32,
) -> Result<ZumbachCurve> {
    let lags: Vec<u32> = (1..=k_max).collect();
    let values = par::map_slice(&lags, |&k| zumbach_cov(params, curve, t, k, delta))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ZumbachCurve {
        delta,
        t,
        lags,
        values,
    })
}

/// `g_α(k) = Γ(α+1)^(-2) ∫_0^1 [(k+s)^α - (k+s-1)^α] (1-s)^α ds`.
pub fn g_alpha(alpha: f64, k: u32) -> Result<f64> {
    param(
        "alpha",
        alpha,
        alpha > 0.5 && alpha <= 1.0,
        "1/2 < alpha <= 1",
    )?;
    if k == 0 {
        return Err(ModelError::Precondition("lag k must be >= 1".into()));
    }
    if alpha == 1.0 {
        return Ok(0.5);
    }
    let k = k as f64;
    let q = integrate(
        "g_alpha",
        |s| power_increment(k + s - 1.0, alpha) * (1.0 - s).powf(alpha),
        &[0.0, 0.5, 1.0],
        Tolerance::new(1e-13, 0.0),
    )?;
    Ok(q / gamma(alpha + 1.0).powi(2))
}

// (m+1)^α - m^α without cancellation for large m.
fn power_increment(m: f64, alpha: f64) -> f64 {
    if m < 1.0 {
        (m + 1.0).powf(alpha) - m.powf(alpha)
    } else {
        m.powf(alpha) * (alpha * (1.0 / m).ln_1p()).exp_m1()
    }
}

/// Small-δ equivalent `2(ρν)² δ^(2α+1) g_α(k) ξ₀(t)`; independent of λ.
pub fn zumbach_asymptotic(
    params: &ModelParams,
    curve: &ForwardVarianceCurve,
    t: f64,
    k: u32,
    delta: f64,
) -> Result<f64> {
    check_time(t, delta)?;
    let alpha = params.alpha();
    let g = g_alpha(alpha, k)?;
    Ok(2.0 * (params.rho * params.nu).powi(2) * delta.powf(2.0 * alpha + 1.0) * g * curve.value(t))
}

// Geometric panel boundaries 0, δ, 2δ, 4δ, … ending exactly at `end`.
fn geometric_panels(delta: f64, end: f64) -> Vec<f64> {
    let mut pts = vec![0.0];
    let mut x = delta;
    while x < end {
        pts.push(x);
        x *= 2.0;
    }
    pts.push(end);
    pts
}

// ∫_0^b [F(s+δ) - F(s)]² ξ₀(b - s) ds
fn increment_sq_integral(
    params: &ModelParams,
    curve: &ForwardVarianceCurve,
    b: f64,
    delta: f64,
) -> Result<f64> {
    if b <= 0.0 {
        return Ok(0.0);
    }
    let kernel = params.kernel;
    integrate(
        "squared kernel increments",
        |s| kernel.cdf_increment(s, s + delta).powi(2) * curve.value((b - s).max(0.0)),
        &geometric_panels(delta, b),
        TOL,
    )
}

// ∫_0^δ F(s)² ξ₀(t - s) ds
fn cdf_sq_integral(
    params: &ModelParams,
    curve: &ForwardVarianceCurve,
    t: f64,
    delta: f64,
) -> Result<f64> {
    let kernel = params.kernel;
    integrate(
        "squared kernel CDF",
        |s| kernel.cdf(s).powi(2) * curve.value(t - s),
        &[0.0, 0.5 * delta, delta],
        TOL,
    )
}

/// Variance of the integrated variance over the day ending at `t`:
/// `(ν/λ)² [∫_0^{t-δ} (F(s+δ)-F(s))² ξ₀(t-δ-s) ds + ∫_0^δ F(s)² ξ₀(t-s) ds]`.
pub fn var_sigma2(
    params: &ModelParams,
    curve: &ForwardVarianceCurve,
    t: f64,
    delta: f64,
) -> Result<f64> {
    check_time(t, delta)?;
    if params.nu == 0.0 {
        return Ok(0.0);
    }
    let past = increment_sq_integral(params, curve, t - delta, delta)?;
    let today = cdf_sq_integral(params, curve, t, delta)?;
    Ok(params.nu_over_lambda_sq() * (past + today))
}

/// The four terms of `E[r_t⁴]`, kept apart for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FourthMoment {
    /// `12 (ρν/λ)² ∫∫ f f ξ₀`: the leverage term.
    pub leverage: f64,
    /// `3 (∫_{t-δ}^t ξ₀)²`: the Gaussian term.
    pub gaussian: f64,
    /// Intraday variance-of-variance.
    pub intraday: f64,
    /// Variance-of-variance carried over from before the day.
    pub carried: f64,
}

impl FourthMoment {
    pub fn total(&self) -> f64 {
        self.leverage + self.gaussian + self.intraday + self.carried
    }
}

/// `E[r_t⁴]` for the martingale return over the day ending at `t`.
pub fn fourth_moment_r(
    params: &ModelParams,
    curve: &ForwardVarianceCurve,
    t: f64,
    delta: f64,
) -> Result<f64> {
    fourth_moment_terms(params, curve, t, delta).map(|m| m.total())
}

/// [`fourth_moment_r`] split into its four terms.
///
/// With `b = t - δ` and `Ξ(L) = ∫_b^{b+L} ξ₀` the terms reduce to
/// `12(ρν/λ)² ∫_0^δ f(u) ∫_0^{δ-u} f(w) Ξ(δ-u-w) dw du`, `3 Ξ(δ)²`,
/// `6(ν/λ)² ∫_0^δ f(u) F(u) Ξ(δ-u) du` and
/// `3(ν/λ)² ∫_0^b (F(u+δ)-F(u))² ξ₀(b-u) du`; the last uses
/// `∫_0^δ (F(s+u)-F(u)) f(s+u) ds = (F(u+δ)-F(u))²/2`.
pub fn fourth_moment_terms(
    params: &ModelParams,
    curve: &ForwardVarianceCurve,
    t: f64,
    delta: f64,
) -> Result<FourthMoment> {
    check_time(t, delta)?;
    let b = t - delta;
    let gaussian = 3.0 * curve.integral_over(b, delta).powi(2);
    if params.nu == 0.0 {
        return Ok(FourthMoment {
            leverage: 0.0,
            gaussian,
            intraday: 0.0,
            carried: 0.0,
        });
    }
    let nl2 = params.nu_over_lambda_sq();
    let kernel = params.kernel;
    let alpha = params.alpha();
    let inv = 1.0 / alpha;

    let (leverage_integral, intraday) = if let Some(v) = curve.flat_level() {
        let ff = integrate(
            "leverage term",
            |u| kernel.cdf(u) * kernel.cdf(delta - u),
            &[0.0, 0.5 * delta, delta],
            TOL,
        )?;
        // 6 ∫ f F (δ-u) du = 3 ∫ F² by parts
        (v * ff, 3.0 * cdf_sq_integral(params, curve, t, delta)?)
    } else {
        let xi = |len: f64| curve.integral_over(b, len.max(0.0));
        let mut failure = None;
        let lev = integrate(
            "leverage term",
            |p| {
                let u = p.powf(inv);
                let inner = integrate(
                    "leverage term (inner)",
                    |q| {
                        let w = q.powf(inv);
                        kernel.density_regular(w) * xi(delta - u - w)
                    },
                    &[0.0, (delta - u).max(0.0).powf(alpha)],
                    INNER_TOL,
                );
                match inner {
                    Ok(x) => kernel.density_regular(u) * x * inv,
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                }
            },
            &[0.0, delta.powf(alpha)],
            TOL,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        let intraday = integrate(
            "intraday term",
            |p| {
                let u = p.powf(inv);
                kernel.density_regular(u) * kernel.cdf(u) * xi(delta - u)
            },
            &[0.0, delta.powf(alpha)],
            TOL,
        )?;
        (lev * inv, 6.0 * intraday * inv)
    };
    let rho2 = params.rho * params.rho;
    Ok(FourthMoment {
        leverage: if rho2 == 0.0 {
            0.0
        } else {
            12.0 * rho2 * nl2 * leverage_integral
        },
        gaussian,
        intraday: nl2 * intraday,
        carried: 3.0 * nl2 * increment_sq_integral(params, curve, b, delta)?,
    })
}

/// `∫_0^∞ [F(s+δ) - F(s)]² ds`.
///
/// Panels double from δ out to a few hundred kernel time scales; the
/// remaining power-law tail (`~ s^(-2α-2)`) is integrated exactly after the
/// map `s = T/w`.
fn stationary_increment_sq(params: &ModelParams, delta: f64) -> Result<f64> {
    let kernel = params.kernel;
    let far = (256.0 * kernel.time_scale()).max(64.0 * delta);
    let body = integrate(
        "stationary squared increments",
        |s| kernel.cdf_increment(s, s + delta).powi(2),
        &geometric_panels(delta, far),
        TOL,
    )?;
    let tail = integrate(
        "stationary squared increments (tail)",
        |w| {
            let s = far / w;
            kernel.cdf_increment(s, s + delta).powi(2) * far / (w * w)
        },
        &[0.0, 1.0],
        TOL,
    )?;
    Ok(body + tail)
}

fn check_xi_inf(xi_inf: f64) -> Result<()> {
    param("xi_inf", xi_inf, xi_inf > 0.0, "xi_inf > 0")
}

/// `lim_{t→∞} Var[σ²_t]` for `ξ₀(t) → ξ∞`.
pub fn stationary_var_sigma2(params: &ModelParams, xi_inf: f64, delta: f64) -> Result<f64> {
    check_xi_inf(xi_inf)?;
    check_delta(delta)?;
    if params.nu == 0.0 {
        return Ok(0.0);
    }
    let flat = ForwardVarianceCurve::flat(1.0)?;
    let today = cdf_sq_integral(params, &flat, delta, delta)?;
    Ok(params.nu_over_lambda_sq() * xi_inf * (stationary_increment_sq(params, delta)? + today))
}

/// `lim_{t→∞} E[r_t⁴]` for `ξ₀(t) → ξ∞`.
pub fn stationary_fourth_moment_r(params: &ModelParams, xi_inf: f64, delta: f64) -> Result<f64> {
    check_xi_inf(xi_inf)?;
    check_delta(delta)?;
    let curve = ForwardVarianceCurve::flat(xi_inf)?;
    let today = fourth_moment_terms(params, &curve, delta, delta)?;
    if params.nu == 0.0 {
        return Ok(today.total());
    }
    let carried =
        3.0 * params.nu_over_lambda_sq() * xi_inf * stationary_increment_sq(params, delta)?;
    Ok(today.leverage + today.gaussian + today.intraday + carried)
}

/// Small-δ equivalent of [`stationary_var_sigma2`]: `(ν/λ)² ξ∞ δ² ∫_0^∞ f²`.
pub fn stationary_var_sigma2_small_delta(
    params: &ModelParams,
    xi_inf: f64,
    delta: f64,
) -> Result<f64> {
    check_xi_inf(xi_inf)?;
    check_delta(delta)?;
    Ok(params.nu_over_lambda_sq() * xi_inf * delta * delta * l2_norm_f_squared(&params.kernel)?)
}

/// Small-δ equivalent of [`stationary_fourth_moment_r`]:
/// `3 ξ∞² δ² + 3 (ν/λ)² ξ∞ δ² ∫_0^∞ f²`.
pub fn stationary_fourth_moment_r_small_delta(
    params: &ModelParams,
    xi_inf: f64,
    delta: f64,
) -> Result<f64> {
    Ok(3.0 * (xi_inf * delta).powi(2)
        + 3.0 * stationary_var_sigma2_small_delta(params, xi_inf, delta)?)
}

/// Correlation-normalized Zumbach effect in the stationary regime:
/// `Z∞(k) / sqrt(Var∞[σ²] · Var∞[r²])` with `Var[r²] = E[r⁴] - (ξ∞ δ)²`.
pub fn zumbach_correl(params: &ModelParams, xi_inf: f64, k: u32, delta: f64) -> Result<f64> {
    check_xi_inf(xi_inf)?;
    check_delta(delta)?;
    if params.nu == 0.0 {
        return Err(ModelError::DegenerateDenominator(
            "Var[sigma^2] vanishes when nu = 0",
        ));
    }
    let curve = ForwardVarianceCurve::flat(xi_inf)?;
    // flat curve: Z_t(k) does not depend on t
    let z = zumbach_cov(params, &curve, delta, k, delta)?;
    if z == 0.0 {
        return Ok(0.0);
    }
    let var_s2 = stationary_var_sigma2(params, xi_inf, delta)?;
    let var_r2 = stationary_fourth_moment_r(params, xi_inf, delta)? - (xi_inf * delta).powi(2);
    let c = z / (var_s2 * var_r2).sqrt();
    if c.abs() > 1.0 {
        log::warn!("correlation-normalized Zumbach effect {c} lies outside [-1, 1]");
    }
    Ok(c)
}

/// Small-δ equivalent of [`zumbach_correl`]:
/// `2(ρν)² δ^(2α-1) g_α(k) / sqrt(A (2ξ∞ + 3A))` with `A = (ν/λ)² ∫_0^∞ f²`.
pub fn zumbach_correl_small_delta(
    params: &ModelParams,
    xi_inf: f64,
    k: u32,
    delta: f64,
) -> Result<f64> {
    check_xi_inf(xi_inf)?;
    check_delta(delta)?;
    if params.nu == 0.0 {
        return Err(ModelError::DegenerateDenominator(
            "Var[sigma^2] vanishes when nu = 0",
        ));
    }
    let a = params.nu_over_lambda_sq() * l2_norm_f_squared(&params.kernel)?;
    let alpha = params.alpha();
    Ok(
        2.0 * (params.rho * params.nu).powi(2) * delta.powf(2.0 * alpha - 1.0) * g_alpha(alpha, k)?
            / (a * (2.0 * xi_inf + 3.0 * a)).sqrt(),
    )
}
