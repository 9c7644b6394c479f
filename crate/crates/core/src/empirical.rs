//! Forward/backward cross-covariances of daily squared returns and realized
//! variance, their correlation versions, cross-index averages and the
//! integrated difference.
//!
//! Lag convention: positive `τ` pairs `σ²_t` with the return `τ` days
//! earlier, so `C(τ) > C(-τ)` means past returns predict future variance
//! better than the reverse.
//!
//! Every row remembers its slot in the raw daily sequence of its symbol.
//! Rows dropped during cleaning leave holes, and a lagged pair is used only
//! when both of its slots survived (pairwise deletion).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::Serialize;
use thiserror::Error;

use crate::par;
use crate::simulate::PathBatch;

/// Fewest valid pairs accepted for one lag.
pub const MIN_PAIRS: usize = 30;

#[derive(Debug, Error)]
pub enum EmpiricalError {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("no usable rows in input")]
    Empty,
    #[error("{index}: {what}")]
    InvalidSeries { index: String, what: String },
    #[error("{index}: only {pairs} valid pairs at tau = {tau}")]
    TooFewPairs {
        index: String,
        tau: i64,
        pairs: usize,
    },
    #[error("{index}: zero variance in the correlation denominator at tau = {tau}")]
    ZeroVariance { index: String, tau: i64 },
    #[error("lag grids differ between curves")]
    GridMismatch,
    #[error("tau = {tau} outside 1..={tau_max}")]
    TauOutOfRange { tau: usize, tau_max: usize },
}

pub type Result<T> = std::result::Result<T, EmpiricalError>;

/// Daily open-to-close log returns and realized variances of one index.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub index_id: String,
    pub dates: Vec<NaiveDate>,
    pub r: Vec<f64>,
    pub s2: Vec<f64>,
    /// Position of each row in the uncleaned daily sequence.
    slots: Vec<usize>,
}

impl DailySeries {
    /// A gap-free series.
    pub fn new(
        index_id: impl Into<String>,
        dates: Vec<NaiveDate>,
        r: Vec<f64>,
        s2: Vec<f64>,
    ) -> Result<Self> {
        let slots = (0..dates.len()).collect();
        Self::with_slots(index_id.into(), dates, r, s2, slots)
    }

    fn with_slots(
        index_id: String,
        dates: Vec<NaiveDate>,
        r: Vec<f64>,
        s2: Vec<f64>,
        slots: Vec<usize>,
    ) -> Result<Self> {
        let bad = |what: String| EmpiricalError::InvalidSeries {
            index: index_id.clone(),
            what,
        };
        if r.len() != dates.len() || s2.len() != dates.len() {
            return Err(bad("dates, returns and variances differ in length".into()));
        }
        if let Some(w) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(bad(format!(
                "dates not strictly increasing at {}",
                dates[w + 1]
            )));
        }
        if let Some(i) = r.iter().position(|x| !x.is_finite()) {
            return Err(bad(format!("non-finite return on {}", dates[i])));
        }
        if let Some(i) = s2.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(bad(format!(
                "invalid realized variance {} on {}",
                s2[i], dates[i]
            )));
        }
        Ok(Self {
            index_id,
            dates,
            r,
            s2,
            slots,
        })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Number of rows dropped during cleaning.
    pub fn gaps(&self) -> usize {
        self.slots.last().map_or(0, |&s| s + 1 - self.slots.len())
    }

    /// The same series read backwards in time.
    pub fn reversed(&self) -> Self {
        let last = self.slots.last().copied().unwrap_or(0);
        let rev = |v: &[f64]| v.iter().rev().copied().collect();
        Self {
            index_id: self.index_id.clone(),
            // dates stay ascending; only the values are reordered
            dates: self.dates.clone(),
            r: rev(&self.r),
            s2: rev(&self.s2),
            slots: self.slots.iter().rev().map(|s| last - s).collect(),
        }
    }

    /// Applies the optional preprocessing steps.
    pub fn transformed(&self, opts: &Preprocess) -> Self {
        let mut out = self.clone();
        if opts.demean && !out.r.is_empty() {
            let m = out.r.iter().sum::<f64>() / out.r.len() as f64;
            out.r.iter_mut().for_each(|x| *x -= m);
        }
        if let Some(q) = opts.winsorize {
            winsorize(&mut out.r, q);
            winsorize(&mut out.s2, q);
        }
        if opts.annualize {
            out.s2.iter_mut().for_each(|x| *x *= 252.0);
        }
        out
    }

    // row index for each raw slot
    fn slot_table(&self) -> Vec<Option<usize>> {
        let mut table = vec![None; self.slots.last().map_or(0, |s| s + 1)];
        for (row, &slot) in self.slots.iter().enumerate() {
            table[slot] = Some(row);
        }
        table
    }
}

/// Optional preprocessing, all off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Preprocess {
    /// Subtract the sample mean return.
    pub demean: bool,
    /// Clamp returns and variances to their `[q, 1 - q]` sample quantiles.
    pub winsorize: Option<f64>,
    /// Multiply realized variances by 252.
    pub annualize: bool,
}

fn winsorize(x: &mut [f64], q: f64) {
    if x.is_empty() || q <= 0.0 {
        return;
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pick =
        |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let (lo, hi) = (pick(q), pick(1.0 - q));
    x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
}

/// Input layouts understood by [`ingest`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputFormat {
    /// Oxford-Man realized library layout: `Symbol`, `date`, `open_price`,
    /// `close_price` and a realized variance column (`rk_parzen` by default).
    Oxford { rv_column: String },
    /// `index_id,date,r,s2`.
    Generic,
}

impl InputFormat {
    pub fn oxford() -> Self {
        Self::Oxford {
            rv_column: "rk_parzen".into(),
        }
    }
}

struct RawRow {
    date: NaiveDate,
    line: u64,
    // None when a field is missing
    values: Option<(f64, f64)>,
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate> {
    // tolerate timestamps such as "2000-01-03 00:00:00+01:00"
    let head = s.trim().get(..10).unwrap_or(s.trim());
    NaiveDate::parse_from_str(head, "%Y-%m-%d").map_err(|e| EmpiricalError::Parse {
        line,
        msg: format!("bad date {s:?}: {e}"),
    })
}

// Empty and NaN-like fields are missing; anything else must parse.
fn parse_value(s: &str, line: u64, column: &str) -> Result<Option<f64>> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    let v: f64 = t.parse().map_err(|_| EmpiricalError::Parse {
        line,
        msg: format!("{column}: cannot parse {t:?}"),
    })?;
    Ok(v.is_finite().then_some(v))
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| EmpiricalError::Parse {
            line: 1,
            msg: format!("missing column {name:?}"),
        })
}

/// Reads one series per symbol, ordered by symbol. Rows with a missing or
/// invalid field are dropped and leave a gap.
pub fn ingest<R: Read>(input: R, format: &InputFormat) -> Result<Vec<DailySeries>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let (id_col, date_col, a_col, b_col, c_col) = match format {
        InputFormat::Oxford { rv_column } => (
            column(&headers, "Symbol")?,
            // the published files keep the date in an unnamed first column
            column(&headers, "date").or_else(|e| match headers.get(0) {
                Some(h) if h.trim().is_empty() => Ok(0),
                _ => Err(e),
            })?,
            column(&headers, "open_price")?,
            column(&headers, "close_price")?,
            Some(column(&headers, rv_column)?),
        ),
        InputFormat::Generic => (
            column(&headers, "index_id")?,
            column(&headers, "date")?,
            column(&headers, "r")?,
            column(&headers, "s2")?,
            None,
        ),
    };
    let mut raw: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| {
            record.get(i).ok_or_else(|| EmpiricalError::Parse {
                line,
                msg: format!("missing field {}", i + 1),
            })
        };
        let id = field(id_col)?.trim().to_string();
        let date = parse_date(field(date_col)?, line)?;
        let a = parse_value(field(a_col)?, line, &headers[a_col])?;
        let b = parse_value(field(b_col)?, line, &headers[b_col])?;
        let values = match c_col {
            Some(c) => {
                let rv = parse_value(field(c)?, line, &headers[c])?;
                match (a, b, rv) {
                    (Some(open), Some(close), Some(rv))
                        if open > 0.0 && close > 0.0 && rv >= 0.0 =>
                    {
                        Some(((close / open).ln(), rv))
                    }
                    _ => None,
                }
            }
            None => match (a, b) {
                (Some(r), Some(s2)) if s2 >= 0.0 => Some((r, s2)),
                _ => None,
            },
        };
        raw.entry(id)
            .or_default()
            .push(RawRow { date, line, values });
    }
    let mut out = Vec::with_capacity(raw.len());
    for (id, mut rows) in raw {
        rows.sort_by_key(|r| r.date);
        if let Some(w) = rows.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(EmpiricalError::Parse {
                line: w[1].line,
                msg: format!("{id}: duplicate date {}", w[1].date),
            });
        }
        let (mut dates, mut r, mut s2, mut slots) = (vec![], vec![], vec![], vec![]);
        for (slot, row) in rows.iter().enumerate() {
            if let Some((rv, sv)) = row.values {
                dates.push(row.date);
                r.push(rv);
                s2.push(sv);
                slots.push(slot);
            }
        }
        if dates.is_empty() {
            log::warn!("{id}: no complete rows, skipped");
            continue;
        }
        if dates.len() < rows.len() {
            log::info!("{id}: dropped {} incomplete rows", rows.len() - dates.len());
        }
        out.push(DailySeries::with_slots(id, dates, r, s2, slots)?);
    }
    if out.is_empty() {
        return Err(EmpiricalError::Empty);
    }
    Ok(out)
}

/// Writes series in the generic `index_id,date,r,s2` layout.
pub fn write_generic_csv<W: Write>(series: &[DailySeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index_id", "date", "r", "s2"])?;
    for s in series {
        for i in 0..s.len() {
            w.write_record([
                s.index_id.as_str(),
                &s.dates[i].format("%Y-%m-%d").to_string(),
                &s.r[i].to_string(),
                &s.s2[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Consecutive weekdays starting at `start` (or the next weekday).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// One series per simulated path, dated on business days from `start` and
/// named `{prefix}{path}`.
pub fn series_from_batch(batch: &PathBatch, start: NaiveDate, prefix: &str) -> Vec<DailySeries> {
    let dates = business_days(start, batch.n_days());
    (0..batch.n_paths)
        .map(|p| DailySeries {
            index_id: format!("{prefix}{}", batch.first_path + p as u64),
            dates: dates.clone(),
            r: batch.r(p).to_vec(),
            s2: batch.s2(p).to_vec(),
            slots: (0..dates.len()).collect(),
        })
        .collect()
}

/// Moments over the valid pairs at one lag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagMoments {
    /// `⟨(σ²_t - ⟨σ²⟩) r²_{t-τ}⟩`.
    pub c2: f64,
    pub var_s2: f64,
    pub var_r2: f64,
    pub pairs: usize,
}

impl LagMoments {
    pub fn rho(&self) -> f64 {
        self.c2 / (self.var_s2 * self.var_r2).sqrt()
    }
}

/// Cross-moments of `σ²_t` and `r²_{t-τ}` over all pairs with both legs
/// present, with divisor equal to the pair count.
pub fn lag_moments(series: &DailySeries, tau: i64) -> Result<LagMoments> {
    lag_moments_with(series, tau, MIN_PAIRS)
}

/// [`lag_moments`] with an explicit floor on the pair count.
pub fn lag_moments_with(series: &DailySeries, tau: i64, min_pairs: usize) -> Result<LagMoments> {
    let table = series.slot_table();
    let mut pairs = Vec::with_capacity(series.len());
    for (row, &slot) in series.slots.iter().enumerate() {
        let other = slot as i64 - tau;
        if other < 0 {
            continue;
        }
        if let Some(Some(j)) = table.get(other as usize) {
            pairs.push((series.s2[row], series.r[*j] * series.r[*j]));
        }
    }
    let n = pairs.len();
    if n < min_pairs.max(1) {
        return Err(EmpiricalError::TooFewPairs {
            index: series.index_id.clone(),
            tau,
            pairs: n,
        });
    }
    let nf = n as f64;
    let ms = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mr = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut c2, mut vs, mut vr) = (0.0, 0.0, 0.0);
    for &(s, r) in &pairs {
        c2 += (s - ms) * r;
        vs += (s - ms) * (s - ms);
        vr += (r - mr) * (r - mr);
    }
    Ok(LagMoments {
        c2: c2 / nf,
        var_s2: vs / nf,
        var_r2: vr / nf,
        pairs: n,
    })
}

/// `C̃⁽²⁾(τ)` for `τ ≠ 0`.
pub fn c2(series: &DailySeries, tau: i64) -> Result<f64> {
    if tau == 0 || tau.unsigned_abs() as usize >= series.len() {
        return Err(EmpiricalError::TauOutOfRange {
            tau: tau.unsigned_abs() as usize,
            tau_max: series.len().saturating_sub(1),
        });
    }
    Ok(lag_moments(series, tau)?.c2)
}

/// Forward and backward curves on `τ = 1..=tau_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraCurve {
    pub taus: Vec<usize>,
    pub c2_fwd: Vec<f64>,
    pub c2_bwd: Vec<f64>,
    pub rho_fwd: Vec<f64>,
    pub rho_bwd: Vec<f64>,
    /// `c2_fwd - c2_bwd`.
    pub z: Vec<f64>,
    /// Running sum of `rho_fwd - rho_bwd`.
    pub delta_cum: Vec<f64>,
    /// Valid pairs per lag (the smaller of the two directions), or the
    /// number of averaged curves.
    pub n_obs: Vec<usize>,
}

impl TraCurve {
    fn assemble(
        taus: Vec<usize>,
        c2_fwd: Vec<f64>,
        c2_bwd: Vec<f64>,
        rho_fwd: Vec<f64>,
        rho_bwd: Vec<f64>,
        n_obs: Vec<usize>,
    ) -> Self {
        let z = c2_fwd.iter().zip(&c2_bwd).map(|(f, b)| f - b).collect();
        let delta_cum = rho_fwd
            .iter()
            .zip(&rho_bwd)
            .scan(0.0, |acc, (f, b)| {
                *acc += f - b;
                Some(*acc)
            })
            .collect();
        Self {
            taus,
            c2_fwd,
            c2_bwd,
            rho_fwd,
            rho_bwd,
            z,
            delta_cum,
            n_obs,
        }
    }

    pub fn tau_max(&self) -> usize {
        self.taus.len()
    }

    /// `tau,c2_fwd,c2_bwd,rho_fwd,rho_bwd,z,delta_cum,n_obs` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "tau",
            "c2_fwd",
            "c2_bwd",
            "rho_fwd",
            "rho_bwd",
            "z",
            "delta_cum",
            "n_obs",
        ])?;
        for i in 0..self.taus.len() {
            w.write_record([
                self.taus[i].to_string(),
                self.c2_fwd[i].to_string(),
                self.c2_bwd[i].to_string(),
                self.rho_fwd[i].to_string(),
                self.rho_bwd[i].to_string(),
                self.z[i].to_string(),
                self.delta_cum[i].to_string(),
                self.n_obs[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Correlation curves `ρ̃(±τ)` for `τ = 1..=tau_max`.
pub fn rho_curve(series: &DailySeries, tau_max: usize) -> Result<TraCurve> {
    rho_curve_with(series, tau_max, MIN_PAIRS)
}

/// [`rho_curve`] with an explicit floor on the pair count.
pub fn rho_curve_with(series: &DailySeries, tau_max: usize, min_pairs: usize) -> Result<TraCurve> {
    if tau_max == 0 || tau_max >= series.len() {
        return Err(EmpiricalError::TauOutOfRange {
            tau: tau_max,
            tau_max: series.len().saturating_sub(1),
        });
    }
    let cols = 6;
    let mut v: Vec<Vec<f64>> = (0..cols).map(|_| Vec::with_capacity(tau_max)).collect();
    let mut n_obs = Vec::with_capacity(tau_max);
    for tau in 1..=tau_max as i64 {
        let f = lag_moments_with(series, tau, min_pairs)?;
        let b = lag_moments_with(series, -tau, min_pairs)?;
        for (m, t) in [(&f, tau), (&b, -tau)] {
            if !(m.var_s2 > 0.0 && m.var_r2 > 0.0) {
                return Err(EmpiricalError::ZeroVariance {
                    index: series.index_id.clone(),
                    tau: t,
                });
            }
        }
        v[0].push(f.c2);
        v[1].push(b.c2);
        v[2].push(f.rho());
        v[3].push(b.rho());
        n_obs.push(f.pairs.min(b.pairs));
    }
    let mut it = v.into_iter();
    let mut next = || it.next().unwrap_or_default();
    Ok(TraCurve::assemble(
        (1..=tau_max).collect(),
        next(),
        next(),
        next(),
        next(),
        n_obs,
    ))
}

/// [`rho_curve`] for many series, in input order.
pub fn rho_curves(series: &[DailySeries], tau_max: usize) -> Vec<Result<TraCurve>> {
    par::map_slice(series, |s| rho_curve(s, tau_max))
}

/// Pointwise mean `ρ̄(τ) = (1/J) Σ_j ρ̃_j(τ)` (covariances averaged the same
/// way).
pub fn cross_index_average(curves: &[TraCurve]) -> Result<TraCurve> {
    let first = curves.first().ok_or(EmpiricalError::Empty)?;
    if curves.iter().any(|c| c.taus != first.taus) {
        return Err(EmpiricalError::GridMismatch);
    }
    let j = curves.len() as f64;
    let mean = |get: fn(&TraCurve) -> &Vec<f64>| -> Vec<f64> {
        (0..first.taus.len())
            .map(|i| curves.iter().map(|c| get(c)[i]).sum::<f64>() / j)
            .collect()
    };
    Ok(TraCurve::assemble(
        first.taus.clone(),
        mean(|c| &c.c2_fwd),
        mean(|c| &c.c2_bwd),
        mean(|c| &c.rho_fwd),
        mean(|c| &c.rho_bwd),
        vec![curves.len(); first.taus.len()],
    ))
}

/// `Δ(τ) = Σ_{i=1..τ} (ρ(i) - ρ(-i))`.
pub fn integrated_difference(curve: &TraCurve, tau: usize) -> Result<f64> {
    if tau == 0 || tau > curve.tau_max() {
        return Err(EmpiricalError::TauOutOfRange {
            tau,
            tau_max: curve.tau_max(),
        });
    }
    Ok(curve.rho_fwd[..tau]
        .iter()
        .zip(&curve.rho_bwd[..tau])
        .map(|(f, b)| f - b)
        .sum())
}
