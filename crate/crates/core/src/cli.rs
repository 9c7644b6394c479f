//! The `zlab` command line.
//!
//! Subcommands `empirical`, `model`, `simulate` and `compare`. Times are in
//! years, variances are annualized, and daily quantities (`r`, `σ²`) are the
//! dimensionless per-day values produced by the model with `δ = 1/252`.
//!
//! Exit codes: 0 success, 1 usage, 2 parse or I/O, 3 numerical
//! nonconvergence, 4 contract violation. Every output file is written to a
//! temporary file and renamed into place, so a failed run leaves no partial
//! output.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::empirical::{self, DailySeries, EmpiricalError, InputFormat, Preprocess, TraCurve};
use crate::model::{self, ForwardVarianceCurve, ModelError, ModelParams, DEFAULT_DELTA};
use crate::quad::QuadError;
use crate::simulate::{self, Convolution, MomentsMc, Scheme, SimConfig, SimError, ZumbachMc};
use crate::special::SpecialError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Contract(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Input(_) => 2,
            Self::Numerical(_) => 3,
            Self::Contract(_) => 4,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let msg = e.to_string();
        match e {
            ModelError::Parameter { .. } | ModelError::Special(SpecialError::Domain { .. }) => {
                Self::Usage(msg)
            }
            ModelError::Curve(_) => Self::Input(msg),
            ModelError::Precondition(_) | ModelError::DegenerateDenominator(_) => {
                Self::Contract(msg)
            }
            ModelError::Quadrature { .. } | ModelError::Special(SpecialError::Quadrature(_)) => {
                Self::Numerical(msg)
            }
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let msg = e.to_string();
        match e {
            SimError::Config(_) | SimError::InsufficientDays(_) => Self::Usage(msg),
            SimError::MemoryGuard { .. } | SimError::Incompatible(_) => Self::Contract(msg),
            SimError::NonFinite { .. } => Self::Numerical(msg),
            SimError::Model(m) => m.into(),
        }
    }
}

impl From<EmpiricalError> for CliError {
    fn from(e: EmpiricalError) -> Self {
        let msg = e.to_string();
        match e {
            EmpiricalError::Parse { .. }
            | EmpiricalError::Csv(_)
            | EmpiricalError::Io(_)
            | EmpiricalError::Empty
            | EmpiricalError::InvalidSeries { .. } => Self::Input(msg),
            EmpiricalError::TooFewPairs { .. }
            | EmpiricalError::ZeroVariance { .. }
            | EmpiricalError::GridMismatch
            | EmpiricalError::TauOutOfRange { .. } => Self::Contract(msg),
        }
    }
}

impl From<QuadError> for CliError {
    fn from(e: QuadError) -> Self {
        Self::Numerical(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "zlab",
    version,
    about = "Zumbach time-reversal asymmetry under rough Heston: analytic, Monte Carlo and empirical",
    after_help = "Units: times in years, variances annualized (1/year), daily r and sigma^2 dimensionless.\n\
                  Exit codes: 1 usage, 2 parse/IO, 3 numerical nonconvergence, 4 contract violation."
)]
pub struct Cli {
    /// Worker threads for path simulation and per-index runs [count, default: all cores]
    #[arg(long, env = "ZLAB_THREADS", global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// File of `flag = value` lines used as defaults; command-line flags win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Log more (-v info, -vv debug); also honours RUST_LOG
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Forward/backward correlation curves from daily return and realized-variance data
    Empirical(EmpiricalArgs),
    /// Analytic Zumbach covariance Z_t(k) and its small-delta asymptotic
    Model(ModelArgs),
    /// Monte Carlo estimates of Z_t(k), Var[sigma^2] and E[r^4]
    Simulate(SimulateArgs),
    /// Join empirical, analytic and Monte Carlo Z on the lag grid
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    /// Symbol,date,open_price,close_price,<rv column> (Oxford-Man layout)
    Oxford,
    /// index_id,date,r,s2
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    /// Positive integrated-variance scheme with inverse Gaussian steps
    InverseGaussian,
    /// Integrated-kernel Euler with full truncation
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConvolutionArg {
    Fft,
    Direct,
}

#[derive(Args, Debug, Clone)]
pub struct ModelFlags {
    /// Hurst exponent H [dimensionless, 0 < H <= 0.5]
    #[arg(long, default_value_t = 0.05)]
    pub hurst: f64,
    /// Mean-reversion speed lambda [1/year]
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    /// Volatility of variance nu [annualized, >= 0]
    #[arg(long, default_value_t = 0.45)]
    pub nu: f64,
    /// Price/variance correlation rho [dimensionless, -1..1]
    #[arg(long, default_value_t = -0.7, allow_negative_numbers = true)]
    pub rho: f64,
    /// Flat forward variance xi_0 [1/year]
    #[arg(long, default_value_t = 0.025)]
    pub xi: f64,
    /// Piecewise-linear forward variance, CSV with header `t,xi` [years, 1/year]; replaces --xi
    #[arg(long, value_name = "FILE")]
    pub curve_file: Option<PathBuf>,
    /// Length of one day delta [years]
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
}

impl ModelFlags {
    fn params(&self) -> Result<ModelParams> {
        Ok(ModelParams::new(
            self.hurst,
            self.lambda,
            self.nu,
            self.rho,
        )?)
    }

    fn curve(&self) -> Result<ForwardVarianceCurve> {
        match &self.curve_file {
            None => Ok(ForwardVarianceCurve::flat(self.xi)?),
            Some(path) => {
                let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
                let mut knots = Vec::new();
                for (i, row) in reader.deserialize::<(f64, f64)>().enumerate() {
                    let row = row.map_err(|e| {
                        CliError::Input(format!("{}: row {}: {e}", path.display(), i + 2))
                    })?;
                    knots.push(row);
                }
                Ok(ForwardVarianceCurve::piecewise_linear(knots)?)
            }
        }
    }

    fn check_delta(&self) -> Result<()> {
        if self.delta > 0.0 && self.delta.is_finite() {
            Ok(())
        } else {
            Err(CliError::Usage(format!(
                "--delta {} must be positive",
                self.delta
            )))
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct OutputFlags {
    /// Output file [default: standard output]
    #[arg(long, short, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub output_format: OutputFormat,
    /// Also write a gnuplot script next to the output file
    #[arg(long, requires = "out")]
    pub gnuplot: bool,
}

#[derive(Args, Debug)]
pub struct EmpiricalArgs {
    /// Input CSV file
    #[arg(long, short, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = DataFormat::Oxford)]
    pub format: DataFormat,
    /// Realized-variance column of Oxford-style input [daily variance]
    #[arg(long, default_value = "rk_parzen")]
    pub rv_column: String,
    /// Largest lag [days]
    #[arg(long, default_value_t = 100)]
    pub tau_max: usize,
    /// Subtract each index's mean return before squaring
    #[arg(long)]
    pub demean: bool,
    /// Clamp r and sigma^2 to their [q, 1-q] quantiles [0 <= q < 0.5]
    #[arg(long, value_name = "Q")]
    pub winsorize: Option<f64>,
    /// Multiply daily realized variance by 252
    #[arg(long)]
    pub annualize: bool,
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Also write one curve per index
    #[arg(long)]
    pub per_index: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub output_format: OutputFormat,
    /// Also write a gnuplot script for the averaged curves
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Calendar time t of the first leg [years]
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Largest lag k [days]
    #[arg(long, default_value_t = 10)]
    pub k_max: u32,
    /// Add the same curve at H = 0.5 and the ratio
    #[arg(long)]
    pub compare_h: bool,
    #[command(flatten)]
    pub output: OutputFlags,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Number of paths [count]
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    /// Time steps per day [count]
    #[arg(long, default_value_t = 20)]
    pub steps_per_day: usize,
    /// Simulated days [count]
    #[arg(long, default_value_t = 756)]
    pub days: usize,
    /// Day of the first Zumbach leg and of the moment estimates [1-based day index; default 2/3 of --days]
    #[arg(long)]
    pub t_day: Option<usize>,
    /// Lags k [days, comma separated]
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub lags: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Antithetic pairs (needs an even path count)
    #[arg(long)]
    pub antithetic: bool,
    #[arg(long, value_enum, default_value_t = SchemeArg::InverseGaussian)]
    pub scheme: SchemeArg,
    #[arg(long, value_enum, default_value_t = ConvolutionArg::Fft)]
    pub convolution: ConvolutionArg,
    /// Paths held in memory at once [count]
    #[arg(long, default_value_t = 5000)]
    pub chunk: usize,
    /// Add the analytic values and z-scores
    #[arg(long)]
    pub with_model: bool,
    /// Write per-path daily aggregates (path_id,day,r,sigma2)
    #[arg(long, value_name = "FILE")]
    pub dump: Option<PathBuf>,
    /// Write the paths as index_id,date,r,s2 series for `zlab empirical --format generic`
    #[arg(long, value_name = "FILE")]
    pub export: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputFlags,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Calendar time t [years] for the inline model curve
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Largest lag k [days] for the inline model curve
    #[arg(long, default_value_t = 10)]
    pub k_max: u32,
    /// Output of `zlab model` (CSV) instead of computing the curve inline
    #[arg(long, value_name = "FILE")]
    pub model_file: Option<PathBuf>,
    /// Curve from `zlab empirical` (CSV)
    #[arg(long, value_name = "FILE")]
    pub empirical: Option<PathBuf>,
    /// Day length of the empirical data [years]
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub empirical_delta: f64,
    /// Output of `zlab simulate` (CSV)
    #[arg(long, value_name = "FILE")]
    pub mc: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputFlags,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match splice_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match configure_threads(cli.threads).and_then(|()| execute(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

const SUBCOMMANDS: [&str; 4] = ["empirical", "model", "simulate", "compare"];

// Inserts `--flag value` pairs from the config file right after the
// subcommand, skipping flags that the command line sets itself.
fn splice_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let path = strs.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            strs.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(Path::new(&path), e))?;
    let Some(pos) = strs.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let given = |flag: &str| {
        strs.iter().any(|a| {
            a == flag
                || a.strip_prefix(flag)
                    .is_some_and(|rest| rest.starts_with('='))
        })
    };
    let mut extra: Vec<OsString> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("{path}:{}: expected key = value", n + 1)))?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        if given(&flag) {
            continue;
        }
        match value.trim() {
            "true" => extra.push(flag.into()),
            "false" => {}
            v => {
                extra.push(flag.into());
                extra.push(v.into());
            }
        }
    }
    let mut out = args;
    out.splice(pos + 1..pos + 1, extra);
    Ok(out)
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        log::warn!("built without the parallel feature; --threads {n} ignored");
    }
    Ok(())
}

fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Empirical(a) => cmd_empirical(a).map(|_| ()),
        Command::Model(a) => cmd_model(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

/// One table cell; `Empty` is written as an empty CSV field or JSON null.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::Int(x.into())
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.into())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: vec![],
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| CliError::Input(e.to_string());
        w.write_record(&self.columns).map_err(fail)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Num(x) => x.to_string(),
                Cell::Int(i) => i.to_string(),
                Cell::Text(s) => s.clone(),
                Cell::Empty => String::new(),
            }))
            .map_err(fail)?;
        }
        w.into_inner().map_err(|e| CliError::Input(e.to_string()))
    }

    pub fn to_json(&self) -> Vec<u8> {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(k, c)| {
                        let v = match c {
                            Cell::Num(x) => serde_json::Number::from_f64(*x)
                                .map_or(serde_json::Value::Null, Into::into),
                            Cell::Int(i) => (*i).into(),
                            Cell::Text(s) => s.clone().into(),
                            Cell::Empty => serde_json::Value::Null,
                        };
                        (k.to_string(), v)
                    })
                    .collect::<serde_json::Map<_, _>>();
                serde_json::Value::Object(obj)
            })
            .collect();
        let mut out = serde_json::to_vec_pretty(&rows).unwrap_or_default();
        out.push(b'\n');
        out
    }

    fn render(&self, format: OutputFormat) -> Result<Vec<u8>> {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => Ok(self.to_json()),
        }
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn emit(table: &Table, output: &OutputFlags, plot: Option<&str>) -> Result<()> {
    let bytes = table.render(output.output_format)?;
    match &output.out {
        Some(path) => {
            write_atomic(path, &bytes)?;
            if output.gnuplot {
                if let Some(kind) = plot {
                    let script = gnuplot_script(kind, path, output.output_format)?;
                    write_atomic(&path.with_extension("gp"), script.as_bytes())?;
                }
            }
            Ok(())
        }
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Input(format!("stdout: {e}"))),
    }
}

fn gnuplot_script(kind: &str, data: &Path, format: OutputFormat) -> Result<String> {
    if format != OutputFormat::Csv {
        return Err(CliError::Usage("--gnuplot needs CSV output".into()));
    }
    let name = data
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut s =
        String::from("set datafile separator ','\nset key autotitle columnhead\nset grid\n");
    let _ = match kind {
        "tra_average" => write!(
            s,
            "set multiplot layout 1,2\nset xlabel 'tau (days)'\n\
             plot '{name}' using 1:4 with points pt 7 lc 'red' title 'rho(tau)', \
             '' using 1:5 with points pt 7 lc 'blue' title 'rho(-tau)'\n\
             plot '{name}' using 1:7 with linespoints title 'Delta(tau)'\nunset multiplot\n"
        ),
        "model" => write!(
            s,
            "set xlabel 'k (days)'\nset logscale y\n\
             plot '{name}' using 1:5 with linespoints title 'Z_t(k)', '' using 1:6 with lines title 'asymptotic'\n"
        ),
        "model_h" => write!(
            s,
            "set xlabel 'k (days)'\nset logscale y\n\
             plot '{name}' using 1:5 with linespoints title 'H', '' using 1:7 with linespoints title 'H = 0.5'\n"
        ),
        _ => write!(
            s,
            "set xlabel 'k (days)'\n\
             plot '{name}' using 1:3 with linespoints title 'model', '' using 1:2 with points pt 7 title 'empirical', \
             '' using 1:5:6 with yerrorbars title 'Monte Carlo'\n"
        ),
    };
    Ok(s)
}

/// What [`cmd_empirical`] reports.
#[derive(Debug, Clone)]
pub struct EmpiricalSummary {
    pub indices: usize,
    pub skipped: usize,
    pub average: TraCurve,
}

pub fn cmd_empirical(a: &EmpiricalArgs) -> Result<EmpiricalSummary> {
    if a.tau_max == 0 {
        return Err(CliError::Usage("--tau-max must be at least 1".into()));
    }
    if let Some(q) = a.winsorize {
        if !(0.0..0.5).contains(&q) {
            return Err(CliError::Usage(format!(
                "--winsorize {q} must lie in [0, 0.5)"
            )));
        }
    }
    let format = match a.format {
        DataFormat::Oxford => InputFormat::Oxford {
            rv_column: a.rv_column.clone(),
        },
        DataFormat::Generic => InputFormat::Generic,
    };
    let file = std::fs::File::open(&a.input).map_err(|e| io_err(&a.input, e))?;
    let series = empirical::ingest(std::io::BufReader::new(file), &format)?;
    let pre = Preprocess {
        demean: a.demean,
        winsorize: a.winsorize,
        annualize: a.annualize,
    };
    let series: Vec<DailySeries> = series.iter().map(|s| s.transformed(&pre)).collect();
    let mut curves = Vec::new();
    let mut names = Vec::new();
    let mut skipped = 0;
    for (s, c) in series.iter().zip(empirical::rho_curves(&series, a.tau_max)) {
        match c {
            Ok(c) => {
                curves.push(c);
                names.push(s.index_id.clone());
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", s.index_id);
                skipped += 1;
            }
        }
    }
    if curves.is_empty() {
        return Err(CliError::Contract(format!(
            "no index has enough data for tau_max = {}",
            a.tau_max
        )));
    }
    let average = empirical::cross_index_average(&curves)?;

    let ext = match a.output_format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    let mut files = vec![(
        a.out_dir.join(format!("tra_average.{ext}")),
        render_curve(&average, a.output_format)?,
    )];
    if a.per_index {
        for (name, c) in names.iter().zip(&curves) {
            let safe: String = name
                .chars()
                .map(|ch| {
                    if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' {
                        ch
                    } else {
                        '_'
                    }
                })
                .collect();
            files.push((
                a.out_dir.join(format!("tra_{safe}.{ext}")),
                render_curve(c, a.output_format)?,
            ));
        }
    }
    if a.gnuplot {
        let data = a.out_dir.join(format!("tra_average.{ext}"));
        files.push((
            a.out_dir.join("tra_average.gp"),
            gnuplot_script("tra_average", &data, a.output_format)?.into_bytes(),
        ));
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    let tau_max = average.tau_max();
    println!("indices: {} (skipped {skipped})", curves.len());
    println!("Delta({tau_max}) = {}", average.delta_cum[tau_max - 1]);
    Ok(EmpiricalSummary {
        indices: curves.len(),
        skipped,
        average,
    })
}

fn render_curve(c: &TraCurve, format: OutputFormat) -> Result<Vec<u8>> {
    match format {
        OutputFormat::Csv => {
            let mut buf = Vec::new();
            c.write_csv(&mut buf)?;
            Ok(buf)
        }
        OutputFormat::Json => {
            let mut out =
                serde_json::to_vec_pretty(c).map_err(|e| CliError::Input(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

fn model_table(flags: &ModelFlags, t: f64, k_max: u32, compare_h: bool) -> Result<Table> {
    flags.check_delta()?;
    if k_max == 0 {
        return Err(CliError::Usage("--k-max must be at least 1".into()));
    }
    let params = flags.params()?;
    let curve = flags.curve()?;
    let delta = flags.delta;
    let z = model::zumbach_curve(&params, &curve, t, delta, k_max)?;
    let mut cols = vec!["k", "tau", "delta", "t", "z", "z_asymptotic"];
    let half = if compare_h {
        cols.extend(["z_h05", "ratio"]);
        let p = params.with_hurst(0.5)?;
        Some(model::zumbach_curve(&p, &curve, t, delta, k_max)?)
    } else {
        None
    };
    let mut table = Table::new(&cols);
    for (i, &k) in z.lags.iter().enumerate() {
        let asym = model::zumbach_asymptotic(&params, &curve, t, k, delta)?;
        let mut row = vec![
            k.into(),
            (k as f64 * delta).into(),
            delta.into(),
            t.into(),
            z.values[i].into(),
            asym.into(),
        ];
        if let Some(h) = &half {
            let ratio = (h.values[i] != 0.0).then(|| z.values[i] / h.values[i]);
            row.extend([h.values[i].into(), ratio.into()]);
        }
        table.push(row);
    }
    Ok(table)
}

pub fn cmd_model(a: &ModelArgs) -> Result<()> {
    let table = model_table(&a.model, a.t, a.k_max, a.compare_h)?;
    emit(
        &table,
        &a.output,
        Some(if a.compare_h { "model_h" } else { "model" }),
    )
}

// Accumulates CSV rows of several chunks into one temporary file.
struct ChunkWriter {
    path: PathBuf,
    tmp: csv::Writer<tempfile::NamedTempFile>,
}

impl ChunkWriter {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
        let mut w = csv::Writer::from_writer(tmp);
        w.write_record(header).map_err(|e| io_err(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            tmp: w,
        })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.tmp
            .write_record(fields)
            .map_err(|e| io_err(&self.path, e))
    }

    fn finish(self) -> Result<()> {
        let path = self.path;
        let tmp = self
            .tmp
            .into_inner()
            .map_err(|e| io_err(&path, e.error()))?;
        tmp.persist(&path).map_err(|e| io_err(&path, e.error))?;
        Ok(())
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    a.model.check_delta()?;
    let params = a.model.params()?;
    let curve = a.model.curve()?;
    let config = SimConfig {
        n_paths: a.paths,
        steps_per_day: a.steps_per_day,
        n_days: a.days,
        delta: a.model.delta,
        seed: a.seed,
        antithetic: a.antithetic,
        scheme: match a.scheme {
            SchemeArg::InverseGaussian => Scheme::InverseGaussian,
            SchemeArg::Euler => Scheme::Euler,
        },
        convolution: match a.convolution {
            ConvolutionArg::Fft => Convolution::Fft,
            ConvolutionArg::Direct => Convolution::Direct,
        },
        ..Default::default()
    };
    config.validate()?;
    let t_day = a.t_day.unwrap_or((2 * a.days / 3).max(1));
    if a.lags.is_empty() || a.lags.contains(&0) {
        return Err(CliError::Usage("--lags must be positive".into()));
    }
    if let Some(&k) = a.lags.iter().max() {
        if t_day == 0 || t_day + k > a.days {
            return Err(CliError::Usage(format!(
                "--t-day {t_day} plus lag {k} exceeds --days {}",
                a.days
            )));
        }
    }
    // keep antithetic pairs within one chunk
    let chunk = (a.chunk.max(2) / 2 * 2) as u64;
    let mut z_acc = ZumbachMc::new(t_day, &a.lags);
    let mut m_acc = MomentsMc::new(t_day);
    let mut dump = a
        .dump
        .as_deref()
        .map(|p| ChunkWriter::create(p, &["path_id", "day", "r", "sigma2"]))
        .transpose()?;
    let mut export = a
        .export
        .as_deref()
        .map(|p| ChunkWriter::create(p, &["index_id", "date", "r", "s2"]))
        .transpose()?;
    let start_date = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let dates: Vec<String> = empirical::business_days(start_date, a.days)
        .iter()
        .map(|d| d.format("%Y-%m-%d").to_string())
        .collect();
    let mut truncated = 0.0;
    let total = a.paths as u64;
    let mut start = 0;
    while start < total {
        let end = (start + chunk).min(total);
        let batch = simulate::simulate_paths_range(&params, &curve, &config, start..end)?;
        z_acc.add(&batch)?;
        m_acc.add(&batch)?;
        truncated += batch.truncated_fraction * batch.n_paths as f64;
        for p in 0..batch.n_paths {
            let id = (start + p as u64).to_string();
            for d in 0..a.days {
                let (r, s) = (batch.r(p)[d].to_string(), batch.s2(p)[d].to_string());
                if let Some(w) = dump.as_mut() {
                    w.row(&[id.clone(), (d + 1).to_string(), r.clone(), s.clone()])?;
                }
                if let Some(w) = export.as_mut() {
                    w.row(&[format!("SIM{id}"), dates[d].clone(), r, s])?;
                }
            }
        }
        log::info!("simulated paths {start}..{end}");
        start = end;
    }
    let truncated = truncated / a.paths as f64;

    let delta = a.model.delta;
    let t = t_day as f64 * delta;
    let mut table = Table::new(&[
        "quantity",
        "k",
        "delta",
        "t",
        "estimate",
        "std_error",
        "n",
        "model",
        "z_score",
    ]);
    let mut report = String::new();
    let model_value = |q: &str, k: usize| -> Result<Option<f64>> {
        if !a.with_model {
            return Ok(None);
        }
        Ok(Some(match q {
            "zumbach" => model::zumbach_cov(&params, &curve, t, k as u32, delta)?,
            "mean_sigma2" => curve.integral(t - delta, t),
            "var_sigma2" => model::var_sigma2(&params, &curve, t, delta)?,
            _ => model::fourth_moment_r(&params, &curve, t, delta)?,
        }))
    };
    let m = m_acc.estimates();
    let rows = a
        .lags
        .iter()
        .zip(z_acc.estimates())
        .map(|(&k, e)| ("zumbach", Some(k), e))
        .chain([
            ("mean_sigma2", None, m.mean_sigma2),
            ("var_sigma2", None, m.var_sigma2),
            ("fourth_moment_r", None, m.fourth_moment_r),
        ]);
    for (q, k, e) in rows {
        let model = model_value(q, k.unwrap_or(0))?;
        let z = model.filter(|_| e.std_error > 0.0).map(|v| e.z_score(v));
        let _ = writeln!(
            report,
            "{q:<16}{:>4}  {:.6e} +/- {:.2e}{}",
            k.map_or(String::new(), |k| k.to_string()),
            e.estimate,
            e.std_error,
            model.map_or(String::new(), |v| format!("  model {v:.6e}"))
        );
        table.push(vec![
            q.into(),
            k.map_or(Cell::Empty, Cell::from),
            delta.into(),
            t.into(),
            e.estimate.into(),
            e.std_error.into(),
            e.n.into(),
            model.into(),
            z.into(),
        ]);
    }
    if let Some(w) = dump {
        w.finish()?;
    }
    if let Some(w) = export {
        w.finish()?;
    }
    emit(&table, &a.output, None)?;
    if a.output.out.is_some() {
        print!("{report}");
        println!("truncated steps: {:.4}%", 100.0 * truncated);
    } else {
        eprint!("{report}");
        eprintln!("truncated steps: {:.4}%", 100.0 * truncated);
    }
    Ok(())
}

fn read_rows(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = r.headers().map_err(|e| io_err(path, e))?.clone();
    let rows = r
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| io_err(path, e))?;
    Ok((headers, rows))
}

fn field(
    path: &Path,
    headers: &csv::StringRecord,
    row: &csv::StringRecord,
    name: &str,
) -> Result<Option<f64>> {
    let i = headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Input(format!("{}: missing column {name}", path.display())))?;
    let s = row.get(i).unwrap_or("").trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| {
        CliError::Input(format!(
            "{}: bad number {s:?} in column {name}",
            path.display()
        ))
    })
}

fn same_delta(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

pub fn cmd_compare(a: &CompareArgs) -> Result<()> {
    // k -> (model, asymptotic), plus the δ each source was computed with
    let mut deltas: Vec<(String, f64)> = Vec::new();
    let mut model_rows: Vec<(usize, f64, f64)> = Vec::new();
    match &a.model_file {
        Some(path) => {
            let (h, rows) = read_rows(path)?;
            for row in &rows {
                let k = field(path, &h, row, "k")?.unwrap_or(0.0) as usize;
                let z = field(path, &h, row, "z")?.unwrap_or(f64::NAN);
                let asym = field(path, &h, row, "z_asymptotic")?.unwrap_or(f64::NAN);
                if let Some(d) = field(path, &h, row, "delta")? {
                    deltas.push((path.display().to_string(), d));
                }
                model_rows.push((k, z, asym));
            }
        }
        None => {
            let table = model_table(&a.model, a.t, a.k_max, false)?;
            deltas.push(("--delta".into(), a.model.delta));
            for row in &table.rows {
                let num = |i: usize| match row[i] {
                    Cell::Num(x) => x,
                    _ => f64::NAN,
                };
                let k = match row[0] {
                    Cell::Int(k) => k as usize,
                    _ => 0,
                };
                model_rows.push((k, num(4), num(5)));
            }
        }
    }
    let mut empirical_z = std::collections::BTreeMap::new();
    if let Some(path) = &a.empirical {
        deltas.push(("--empirical-delta".into(), a.empirical_delta));
        let (h, rows) = read_rows(path)?;
        for row in &rows {
            let tau = field(path, &h, row, "tau")?.unwrap_or(0.0) as usize;
            if let Some(z) = field(path, &h, row, "z")? {
                empirical_z.insert(tau, z);
            }
        }
    }
    let mut mc = std::collections::BTreeMap::new();
    if let Some(path) = &a.mc {
        let (h, rows) = read_rows(path)?;
        let qi = h.iter().position(|c| c == "quantity");
        for row in &rows {
            if let Some(d) = field(path, &h, row, "delta")? {
                deltas.push((path.display().to_string(), d));
            }
            if qi.and_then(|i| row.get(i)) != Some("zumbach") {
                continue;
            }
            let k = field(path, &h, row, "k")?.unwrap_or(0.0) as usize;
            let est = field(path, &h, row, "estimate")?.unwrap_or(f64::NAN);
            let se = field(path, &h, row, "std_error")?.unwrap_or(f64::NAN);
            mc.insert(k, (est, se));
        }
    }
    if let Some((first_src, first)) = deltas.first() {
        if let Some((src, d)) = deltas.iter().find(|(_, d)| !same_delta(*d, *first)) {
            return Err(CliError::Contract(format!(
                "delta mismatch: {first} from {first_src} but {d} from {src}"
            )));
        }
    }
    let mut table = Table::new(&[
        "k",
        "z_empirical",
        "z_model",
        "z_asymptotic",
        "z_mc",
        "z_mc_se",
        "gap_empirical",
        "gap_mc",
    ]);
    for &(k, z, asym) in &model_rows {
        let emp = empirical_z.get(&k).copied();
        let (est, se) = mc
            .get(&k)
            .copied()
            .map_or((None, None), |(e, s)| (Some(e), Some(s)));
        let gap = |x: Option<f64>| x.filter(|_| z != 0.0).map(|x| (x - z) / z);
        table.push(vec![
            k.into(),
            emp.into(),
            z.into(),
            asym.into(),
            est.into(),
            se.into(),
            gap(emp).into(),
            gap(est).into(),
        ]);
    }
    emit(&table, &a.output, Some("compare"))
}
