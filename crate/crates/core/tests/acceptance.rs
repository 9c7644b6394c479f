//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so every line reaches the terminal.
//! `cargo test --test acceptance -- <filter>` runs only the criteria whose
//! name contains `<filter>`. Expected failures are listed in
//! [`EXPECTED_FAILURES`]; they print as FAIL but do not fail the target unless
//! `ZLAB_ACCEPT_STRICT=1` is set. An unexpected pass of one of them fails it.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use zlab::empirical::{business_days, rho_curve_with, DailySeries};
use zlab::model::*;
use zlab::simulate::{simulate_paths_range, MomentsMc, SimConfig, ZumbachMc};
use zlab::special::{ml_cdf, ml_density, ml_neg, MlParams};

const D: f64 = 1.0 / 252.0;

const ML_EXACT_TOL: f64 = 1e-10;
const CDF_DERIVATIVE_TOL: f64 = 1e-5;
const ALPHA_ONE_TOL: f64 = 1e-7;
const ASYMPTOTIC_RATIO_TOL: f64 = 0.05;
const ASYMPTOTIC_SLOPE_TOL: f64 = 0.02;
const LAMBDA_SPREAD_TOL: f64 = 0.20;
const H_RATIO_MIN: f64 = 10.0;
const MC_SIGMAS: f64 = 3.0;
const BRUTE_FORCE_TOL: f64 = 1e-12;
const PERMUTATION_SIGMAS: f64 = 3.0;
const SMALL_DELTA_TOL: f64 = 0.05;

/// Criteria that do not hold as stated. The reason is printed with the line.
const EXPECTED_FAILURES: &[(&str, &str)] = &[(
    "simulated_tra_curve",
    "31 x 2000 days cannot resolve ρ̄(τ) - ρ̄(-τ) > 0 at every τ up to 50; see README",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    check: fn() -> Outcome,
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn criteria() -> Vec<Criterion> {
    vec![
        Criterion {
            name: "special_exactness",
            budget: secs(1),
            check: special_exactness,
        },
        Criterion {
            name: "cdf_density_consistency",
            budget: secs(5),
            check: cdf_density_consistency,
        },
        Criterion {
            name: "alpha_one_closed_form",
            budget: secs(1),
            check: alpha_one_closed_form,
        },
        Criterion {
            name: "small_delta_convergence",
            budget: secs(30),
            check: small_delta_convergence,
        },
        Criterion {
            name: "lambda_independence",
            budget: secs(10),
            check: lambda_independence,
        },
        Criterion {
            name: "h_half_negligible",
            budget: secs(10),
            check: h_half_negligible,
        },
        Criterion {
            name: "monte_carlo_agreement",
            budget: None,
            check: monte_carlo_agreement,
        },
        Criterion {
            name: "empirical_estimator",
            budget: secs(10),
            check: empirical_estimator,
        },
        Criterion {
            name: "simulated_tra_curve",
            budget: None,
            check: simulated_tra_curve,
        },
        Criterion {
            name: "correl_small_delta",
            budget: secs(60),
            check: correl_small_delta,
        },
    ]
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let strict = std::env::var("ZLAB_ACCEPT_STRICT").is_ok_and(|v| v == "1");
    let mut bad = 0;
    let mut ran = 0;
    for c in criteria() {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let mut out = catch_unwind(AssertUnwindSafe(c.check))
            .unwrap_or_else(|e| Outcome::new(false, format!("panicked: {}", panic_message(&e))));
        let took = start.elapsed();
        if let Some(b) = c.budget.filter(|b| took > *b) {
            out.pass = false;
            out.detail += &format!("; over the {:.0} s budget", b.as_secs_f64());
        }
        let expected = EXPECTED_FAILURES.iter().find(|(n, _)| *n == c.name);
        let status = match (out.pass, expected) {
            (true, None) => "PASS",
            (true, Some(_)) => {
                bad += 1;
                "PASS (unexpected; update EXPECTED_FAILURES)"
            }
            (false, None) => {
                bad += 1;
                "FAIL"
            }
            (false, Some(_)) => {
                bad += usize::from(strict);
                "FAIL (expected)"
            }
        };
        println!(
            "{status:<15} {:<26} {:>7.2} s  {}",
            c.name,
            took.as_secs_f64(),
            out.detail
        );
        if let (false, Some((_, why))) = (out.pass, expected) {
            println!("{:<52}{why}", "");
        }
    }
    println!("acceptance: {ran} criteria run, {bad} unexpected result(s)");
    if bad > 0 {
        std::process::exit(1);
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn reference() -> ModelParams {
    ModelParams::reference()
}

fn flat() -> ForwardVarianceCurve {
    ForwardVarianceCurve::flat(0.025).unwrap()
}

fn special_exactness() -> Outcome {
    let xs: Vec<f64> = (0..500).map(|i| 50.0 * i as f64 / 499.0).collect();
    let e_ml = xs
        .iter()
        .map(|&x| (ml_neg(1.0, x).unwrap() - (-x).exp()).abs())
        .fold(0.0, f64::max);
    let mut e_cdf: f64 = 0.0;
    for lambda in [0.1, 0.3, 1.0] {
        let p = MlParams::new(1.0, lambda).unwrap();
        for &x in &xs {
            e_cdf = e_cdf.max((ml_cdf(&p, x).unwrap() + (-lambda * x).exp_m1()).abs());
        }
    }
    Outcome::new(
        e_ml < ML_EXACT_TOL && e_cdf < ML_EXACT_TOL,
        format!("max |E_1(-x) - e^-x| = {e_ml:.1e}, max |F - (1 - e^-λx)| = {e_cdf:.1e}"),
    )
}

fn cdf_density_consistency() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut at = (0.0, 0.0, 0.0);
    for alpha in [0.55, 0.75, 1.0] {
        for lambda in [0.1, 0.3, 1.0] {
            let p = MlParams::new(alpha, lambda).unwrap();
            for i in 0..=80 {
                let x = 10f64.powf(-3.0 + 4.0 * i as f64 / 80.0);
                let h = 1e-4 * x;
                let fd = (ml_cdf(&p, x + h).unwrap() - ml_cdf(&p, x - h).unwrap()) / (2.0 * h);
                let e = rel(fd, ml_density(&p, x).unwrap());
                if e > worst {
                    worst = e;
                    at = (alpha, lambda, x);
                }
            }
        }
    }
    Outcome::new(
        worst < CDF_DERIVATIVE_TOL,
        format!(
            "max rel error {worst:.1e} at α={}, λ={}, x={:.3e}",
            at.0, at.1, at.2
        ),
    )
}

// For f(x) = λe^{-λx}: Z(k) = 2(ρν/λ)² ξ e^{-λ(k-1)δ} q (q/λ - δe^{-λδ}), q = 1 - e^{-λδ}.
fn z_alpha_one(lambda: f64, nu: f64, rho: f64, xi: f64, k: u32, d: f64) -> f64 {
    let q = -(-lambda * d).exp_m1();
    let lead = (-lambda * (k - 1) as f64 * d).exp();
    2.0 * (rho * nu / lambda).powi(2) * xi * lead * q * (q / lambda - d * (-lambda * d).exp())
}

fn alpha_one_closed_form() -> Outcome {
    let p = reference().with_hurst(0.5).unwrap();
    let worst = (1..=10)
        .map(|k| {
            rel(
                zumbach_cov(&p, &flat(), 1.0, k, D).unwrap(),
                z_alpha_one(0.3, 0.45, -0.7, 0.025, k, D),
            )
        })
        .fold(0.0, f64::max);
    Outcome::new(
        worst < ALPHA_ONE_TOL,
        format!("max rel error {worst:.1e} over k = 1..10"),
    )
}

fn small_delta_convergence() -> Outcome {
    let p = reference();
    let deltas = [D, 1e-3, 1e-4, 1e-5];
    let mut lines = vec![];
    let mut ok = true;
    for k in [1, 5, 10] {
        let z: Vec<f64> = deltas
            .iter()
            .map(|&d| zumbach_cov(&p, &flat(), 1.0, k, d).unwrap())
            .collect();
        let ratios: Vec<f64> = deltas
            .iter()
            .zip(&z)
            .map(|(&d, z)| z / zumbach_asymptotic(&p, &flat(), 1.0, k, d).unwrap())
            .collect();
        let gaps: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
        let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
        let slope = (z[3] / z[2]).ln() / (deltas[3] / deltas[2]).ln();
        let target = 2.0 * p.alpha() + 1.0;
        ok &= gaps[3] < ASYMPTOTIC_RATIO_TOL && monotone && (slope - target).abs() < ASYMPTOTIC_SLOPE_TOL;
        lines.push(format!(
            "k={k}: ratio {} slope {slope:.4}",
            ratios
                .iter()
                .map(|r| format!("{r:.4}"))
                .collect::<Vec<_>>()
                .join("/")
        ));
    }
    Outcome::new(ok, lines.join("; "))
}

fn lambda_independence() -> Outcome {
    let lambdas = [0.1, 0.3, 1.0];
    let params: Vec<ModelParams> = lambdas
        .iter()
        .map(|&l| reference().with_lambda(l).unwrap())
        .collect();
    let asym: Vec<f64> = params
        .iter()
        .map(|p| zumbach_asymptotic(p, &flat(), 1.0, 1, D).unwrap())
        .collect();
    let identical = asym.iter().all(|a| *a == asym[0]);
    let spread = |k: u32| {
        let z: Vec<f64> = params
            .iter()
            .map(|p| zumbach_cov(p, &flat(), 1.0, k, D).unwrap())
            .collect();
        let (lo, hi) = z
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        (hi - lo) / lo
    };
    let by_lag: Vec<String> = (1..=10)
        .map(|k| format!("{:.1}%", 100.0 * spread(k)))
        .collect();
    let s1 = spread(1);
    Outcome::new(
        identical && s1 < LAMBDA_SPREAD_TOL,
        format!(
            "asymptotic identical: {identical}; spread at k=1 {:.1}% (k=1..10: {})",
            100.0 * s1,
            by_lag.join(" ")
        ),
    )
}

fn h_half_negligible() -> Outcome {
    let rough = reference();
    let smooth = rough.with_hurst(0.5).unwrap();
    let ratios: Vec<f64> = (1..=10)
        .map(|k| {
            zumbach_cov(&rough, &flat(), 1.0, k, D).unwrap()
                / zumbach_cov(&smooth, &flat(), 1.0, k, D).unwrap()
        })
        .collect();
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    Outcome::new(
        min > H_RATIO_MIN,
        format!(
            "Z(H=0.05)/Z(H=0.5) for k=1..10: {}",
            ratios
                .iter()
                .map(|r| format!("{r:.1}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn monte_carlo_agreement() -> Outcome {
    let p = reference();
    let curve = flat();
    let config = SimConfig {
        n_paths: 100_000,
        n_days: 756,
        steps_per_day: 20,
        seed: 1,
        ..Default::default()
    };
    let t_day = 504;
    let t = t_day as f64 * D;
    let lags = [1, 2, 5, 10];
    let mut zumbach = ZumbachMc::new(t_day, &lags);
    let mut moments = MomentsMc::new(t_day);
    let chunk = 5_000u64;
    let mut truncated = 0.0;
    for start in (0..config.n_paths as u64).step_by(chunk as usize) {
        let batch = simulate_paths_range(&p, &curve, &config, start..start + chunk).unwrap();
        zumbach.add(&batch).unwrap();
        moments.add(&batch).unwrap();
        truncated += batch.truncated_fraction * chunk as f64 / config.n_paths as f64;
    }
    let mut ok = true;
    let mut parts = vec![];
    for (k, e) in lags.iter().zip(zumbach.estimates()) {
        let z = e.z_score(zumbach_cov(&p, &curve, t, *k as u32, D).unwrap());
        ok &= z < MC_SIGMAS;
        parts.push(format!("Z({k}) {z:.2}"));
    }
    let m = moments.estimates();
    for (name, e, want) in [
        (
            "Var σ²",
            &m.var_sigma2,
            var_sigma2(&p, &curve, t, D).unwrap(),
        ),
        (
            "E r⁴",
            &m.fourth_moment_r,
            fourth_moment_r(&p, &curve, t, D).unwrap(),
        ),
    ] {
        let z = e.z_score(want);
        ok &= z < MC_SIGMAS;
        parts.push(format!("{name} {z:.2}"));
    }
    Outcome::new(
        ok,
        format!(
            "|z| {}; truncated steps {:.3}%",
            parts.join(", "),
            100.0 * truncated
        ),
    )
}

fn brute_force(s: &DailySeries, tau: i64) -> (f64, f64) {
    let n = s.len() as i64;
    let pairs: Vec<(f64, f64)> = (0..n)
        .filter(|t| (0..n).contains(&(t - tau)))
        .map(|t| (s.s2[t as usize], s.r[(t - tau) as usize].powi(2)))
        .collect();
    let k = pairs.len() as f64;
    let ms = pairs.iter().map(|p| p.0).sum::<f64>() / k;
    let mr = pairs.iter().map(|p| p.1).sum::<f64>() / k;
    let cov = pairs.iter().map(|p| (p.0 - ms) * p.1).sum::<f64>() / k;
    let vs = pairs.iter().map(|p| (p.0 - ms).powi(2)).sum::<f64>() / k;
    let vr = pairs.iter().map(|p| (p.1 - mr).powi(2)).sum::<f64>() / k;
    (cov, cov / (vs * vr).sqrt())
}

fn clustered_series(rng: &mut impl Rng, n: usize) -> DailySeries {
    let (mut r, mut s2) = (vec![], vec![]);
    let mut vol: f64 = 0.01;
    for _ in 0..n {
        vol = (vol * (0.3 * rng.sample::<f64, _>(StandardNormal)).exp()).clamp(1e-4, 0.1);
        r.push(vol * rng.sample::<f64, _>(StandardNormal));
        s2.push(vol * vol * rng.random_range(0.5..1.5));
    }
    let day0 = chrono::NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
    DailySeries::new("X", business_days(day0, n), r, s2).unwrap()
}

fn empirical_estimator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(8..=50);
        let s = clustered_series(&mut rng, n);
        let tau_max = n - 3;
        let curve = rho_curve_with(&s, tau_max, 2).unwrap();
        for tau in 1..=tau_max {
            for (sign, c2, rho) in [
                (1, curve.c2_fwd[tau - 1], curve.rho_fwd[tau - 1]),
                (-1, curve.c2_bwd[tau - 1], curve.rho_bwd[tau - 1]),
            ] {
                let (bc, br) = brute_force(&s, sign * tau as i64);
                worst = worst.max(rel(c2, bc)).max(rel(rho, br));
            }
        }
    }

    let n = 5_000;
    let s = clustered_series(&mut rng, n);
    let mut rows: Vec<(f64, f64)> = s.r.iter().cloned().zip(s.s2.iter().cloned()).collect();
    rows.shuffle(&mut rng);
    let (r, s2): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let shuffled = DailySeries::new("X", s.dates.clone(), r, s2).unwrap();
    let null = rho_curve_with(&shuffled, 10, 30).unwrap();
    let bound = PERMUTATION_SIGMAS / (n as f64).sqrt();
    let max_null = null
        .rho_fwd
        .iter()
        .chain(&null.rho_bwd)
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    let unshuffled = rho_curve_with(&s, 1, 30).unwrap().rho_fwd[0];
    Outcome::new(
        worst < BRUTE_FORCE_TOL && max_null < bound,
        format!(
            "max rel error vs double loop {worst:.1e}; shuffled max |ρ| {max_null:.4} < {bound:.4} (unshuffled ρ(1) {unshuffled:.3})"
        ),
    )
}

fn simulated_tra_curve() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let exe = env!("CARGO_BIN_EXE_zlab");
    let paths = dir.path().join("paths.csv");
    // one stream per path, so the 31 paths are independent indices
    let sim = Command::new(exe)
        .args([
            "simulate", "--paths", "31", "--days", "2000", "--seed", "1", "--lags", "1",
        ])
        .arg("--export")
        .arg(&paths)
        .arg("--out")
        .arg(dir.path().join("sim.csv"))
        .output()
        .unwrap();
    assert!(
        sim.status.success(),
        "{}",
        String::from_utf8_lossy(&sim.stderr)
    );
    let emp = Command::new(exe)
        .args([
            "empirical",
            "--format",
            "generic",
            "--tau-max",
            "50",
            "--input",
        ])
        .arg(&paths)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        emp.status.success(),
        "{}",
        String::from_utf8_lossy(&emp.stderr)
    );

    let mut reader = csv::Reader::from_path(dir.path().join("tra_average.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (fwd, bwd, delta) = (col("rho_fwd"), col("rho_bwd"), col("delta_cum"));
    let rows: Vec<(f64, f64, f64)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (
                r[fwd].parse().unwrap(),
                r[bwd].parse().unwrap(),
                r[delta].parse().unwrap(),
            )
        })
        .collect();
    assert_eq!(rows.len(), 50);
    let asymmetric = rows[..10].iter().all(|(f, b, _)| f > b);
    let dips: Vec<usize> = (1..50)
        .filter(|&i| rows[i].2 <= rows[i - 1].2)
        .map(|i| i + 1)
        .collect();
    Outcome::new(
        asymmetric && dips.is_empty(),
        format!(
            "ρ̄(τ) > ρ̄(-τ) for τ=1..10: {asymmetric}; Δ(10) {:.3}, Δ(50) {:.3}; Δ fails to increase at τ = {dips:?}",
            rows[9].2, rows[49].2
        ),
    )
}

fn correl_small_delta() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut at = (0.0, 0.0, 0.0);
    for h in [0.2, 0.3, 0.4] {
        for lambda in [0.1, 0.3, 1.0] {
            for nu in [0.2, 0.45, 0.8] {
                let p = ModelParams::new(h, lambda, nu, -0.7).unwrap();
                let e = rel(
                    zumbach_correl(&p, 0.025, 1, 1e-4).unwrap(),
                    zumbach_correl_small_delta(&p, 0.025, 1, 1e-4).unwrap(),
                );
                if e > worst {
                    worst = e;
                    at = (h, lambda, nu);
                }
            }
        }
    }
    let p = reference();
    let rough = zumbach_correl(&p, 0.025, 1, 1e-4).unwrap()
        / zumbach_correl_small_delta(&p, 0.025, 1, 1e-4).unwrap();
    Outcome::new(
        worst < SMALL_DELTA_TOL,
        format!(
            "27 points: max rel gap {:.2}% at (H, λ, ν) = {at:?}; H=0.05 ratio {rough:.3} (not gated)",
            100.0 * worst
        ),
    )
}
