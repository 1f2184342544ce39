//! Batch driver: one subcommand per experiment, CSV or JSON on the way out.

pub mod commands;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::extension::Profile1D;
use crate::gauge::GaugeSpec;
use crate::weight::WeightConvention;

pub use commands::Outcome;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_UNCONVERGED: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;

pub const TOLERANCE_RANGE: (f64, f64) = (1e-12, 1e-2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "conelab", version, about = "Numerical experiments on weighted conic restriction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Gauge as inline JSON or a path to a JSON file.
    #[arg(long, global = true)]
    pub gauge: Option<String>,
    /// JSON file with any of: gauge, tolerance, seed, workers, output, format.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "CONELAB_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    #[arg(long, global = true, value_enum)]
    pub convention: Option<WeightConvention>,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Homogeneity, Euler relation, sign and circle normalization of w.
    WeightAudit {
        #[arg(long, default_value_t = 1000)]
        points: usize,
    },
    /// Parametric curvature against w/|∇φ|^{n+1} along Σ.
    CurvatureCheck {
        #[arg(long, default_value_t = 1000)]
        points: usize,
    },
    /// w_{φ∘X} = det(X)²·w_φ∘X for seeded random X.
    AffineCheck {
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Plane integrals against their level-set slicing.
    CoareaCheck,
    /// Direct against sliced evaluation of the extension operator.
    SliceCheck,
    /// Dyadic sublevel sets of w and the fitted arclength exponent.
    Sublevel {
        #[arg(long, default_value_t = crate::measure::SUBLEVEL_NODES)]
        nodes: usize,
        #[arg(long, default_value_t = 10)]
        fit_bins: usize,
        /// Contact order; fitted from the curvature zeros when omitted.
        #[arg(long)]
        k: Option<f64>,
    },
    /// Knapp-cap ratio against δ and its log-log slope.
    KnappScan {
        #[arg(long, default_value_t = 1.2)]
        p: f64,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta0: f64,
        /// δ runs over 2^{-max}, …, 2^{-min}.
        #[arg(long, default_value_t = 3)]
        delta_min_exp: i32,
        #[arg(long, default_value_t = 9)]
        delta_max_exp: i32,
        #[arg(long, value_enum, default_value_t = Profile1D::Gaussian)]
        profile: Profile1D,
    },
    /// ρ, τ identities and the dyadic optimisation.
    Exponents,
    /// Lower bound on |J| and the divergent partial masses.
    Sogge {
        #[arg(long, default_value_t = 3)]
        k: u32,
        #[arg(long, default_value_t = 1.2)]
        p: f64,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
    /// g(α, s) on a grid and the stationary-phase exponent.
    Oscillatory {
        #[arg(long, default_value_t = 3)]
        k: u32,
        #[arg(long, default_value_t = 1.2)]
        p: f64,
        #[arg(long, default_value_t = 6)]
        alphas: usize,
    },
    /// Every subcommand at its defaults, one summary row each.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::WeightAudit { .. } => "weight-audit",
            Command::CurvatureCheck { .. } => "curvature-check",
            Command::AffineCheck { .. } => "affine-check",
            Command::CoareaCheck => "coarea-check",
            Command::SliceCheck => "slice-check",
            Command::Sublevel { .. } => "sublevel",
            Command::KnappScan { .. } => "knapp-scan",
            Command::Exponents => "exponents",
            Command::Sogge { .. } => "sogge",
            Command::Oscillatory { .. } => "oscillatory",
            Command::Report => "report",
        }
    }
}

/// Settings loadable from the optional JSON config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub gauge: Option<GaugeSpec>,
    pub tolerance: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub convention: Option<WeightConvention>,
}

/// Resolved settings; flags override the config file.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    /// `None` selects the subcommand's default gauge.
    pub gauge: Option<GaugeSpec>,
    /// `None` selects the subcommand's default tolerance.
    pub tolerance: Option<f64>,
    pub seed: u64,
    pub workers: usize,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    pub convention: WeightConvention,
}

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn parse_gauge(arg: &str) -> Result<GaugeSpec, ConfigError> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| ConfigError(format!("cannot read gauge file {arg}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("invalid gauge JSON: {e}")))
}

impl RunConfig {
    pub fn resolve(cli: &Cli) -> Result<Self, ConfigError> {
        let file: FileConfig = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("invalid config: {e}")))?
            }
            None => FileConfig::default(),
        };
        let gauge = match &cli.gauge {
            Some(arg) => Some(parse_gauge(arg)?),
            None => file.gauge,
        };
        if let Some(spec) = &gauge {
            crate::gauge::Gauge::new(spec.clone()).map_err(|e| ConfigError(format!("invalid gauge: {e}")))?;
        }
        let tolerance = cli.tolerance.or(file.tolerance);
        if let Some(t) = tolerance {
            if !(TOLERANCE_RANGE.0..=TOLERANCE_RANGE.1).contains(&t) {
                return Err(ConfigError(format!(
                    "tolerance {t} outside [{:e}, {:e}]",
                    TOLERANCE_RANGE.0, TOLERANCE_RANGE.1
                )));
            }
        }
        let workers = cli.workers.or(file.workers).unwrap_or(1);
        if workers < 1 {
            return Err(ConfigError("workers must be >= 1".into()));
        }
        Ok(Self {
            gauge,
            tolerance,
            seed: cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            workers,
            output: cli.output.clone().or(file.output),
            format: cli.format.or(file.format).unwrap_or_default(),
            convention: cli.convention.or(file.convention).unwrap_or_default(),
        })
    }
}

/// Table cell; floats print with 17 significant digits in CSV.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    B(bool),
    S(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::F(x) if x.is_nan() => "nan".into(),
            Cell::F(x) if x.is_infinite() => if *x > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::F(x) => format!("{x:.16e}"),
            Cell::I(i) => i.to_string(),
            Cell::B(b) => b.to_string(),
            Cell::S(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(x) if x.is_finite() => json!(x),
            Cell::F(x) => json!(x.to_string()),
            Cell::I(i) => json!(i),
            Cell::B(b) => json!(b),
            Cell::S(s) => json!(s),
        }
    }
}

pub fn render_csv(outcome: &Outcome) -> String {
    let mut out = outcome.header.join(",");
    out.push('\n');
    for row in &outcome.rows {
        let cells: Vec<String> = row.iter().map(Cell::csv).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

pub fn render_json(name: &str, config: &RunConfig, outcome: &Outcome) -> String {
    let rows: Vec<Value> = outcome
        .rows
        .iter()
        .map(|row| {
            let mut m = Map::new();
            for (h, c) in outcome.header.iter().zip(row) {
                m.insert((*h).to_string(), c.json());
            }
            Value::Object(m)
        })
        .collect();
    let max_residual = if outcome.max_residual.is_finite() {
        json!(outcome.max_residual)
    } else {
        json!(outcome.max_residual.to_string())
    };
    let report = json!({
        "subcommand": name,
        "config": config,
        "rows": rows,
        "pass": outcome.pass,
        "max_residual": max_residual,
        "summary": outcome.summary,
    });
    serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
}

pub fn exit_code(outcome: &Outcome) -> i32 {
    if !outcome.pass {
        EXIT_FAIL
    } else if outcome.unconverged {
        EXIT_UNCONVERGED
    } else {
        EXIT_PASS
    }
}

/// Runs one subcommand inside a pool of `config.workers` threads.
pub fn execute(command: &Command, config: &RunConfig) -> Result<Outcome, ConfigError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ConfigError(format!("worker pool: {e}")))?;
    pool.install(|| commands::dispatch(command, config))
}

/// Parses arguments, runs, writes output; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let config = match RunConfig::resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = match execute(&cli.command, &config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let text = match config.format {
        OutputFormat::Csv => render_csv(&outcome),
        OutputFormat::Json => render_json(cli.command.name(), &config, &outcome),
    };
    let written = match &config.output {
        Some(path) => std::fs::write(path, text.as_bytes()),
        None => std::io::stdout().write_all(text.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("cannot write output: {e}");
        return EXIT_CONFIG;
    }
    eprintln!(
        "{}: pass={} unconverged={} max_residual={:e}",
        cli.command.name(),
        outcome.pass,
        outcome.unconverged,
        outcome.max_residual
    );
    exit_code(&outcome)
}
