//! `rpoll`: analysis, approximation and simulation of polling systems with
//! retrials and glue periods.
//!
//! Every command writes a table to the given writer, as CSV or as aligned
//! text. Output depends only on the arguments, so a fixed seed reproduces it
//! byte for byte.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use retrial_polling::approx::{self, ApproxRow, ApproxTable, StationRef};
use retrial_polling::branching::{self, BranchingSummary};
use retrial_polling::htlimits::limit_rows;
use retrial_polling::simulator::{self, pool_intervals, pool_rows, RegenerationDiagnostics};
use retrial_polling::{
    five_station_example, ApproxError, BranchingError, ConfigFile, ConfigFileError, LoadProfile, PollingConfig,
    SimError, SimMode, SimOptions, ValidationErrors,
};

#[derive(Debug, Parser)]
#[command(name = "rpoll", version, about = "Polling systems with retrials and glue periods")]
pub struct Cli {
    /// Station configuration (TOML). Defaults to the built-in five-station example.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output format; `analyze` defaults to text, everything else to CSV.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Root seed for all random streams.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Coin,
    Clocks,
}

impl From<ModeArg> for SimMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Coin => SimMode::GlueCoin,
            ModeArg::Clocks => SimMode::ExactClocks,
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct SimArgs {
    /// Cycles per replication, warmup included.
    #[arg(long, default_value_t = 100_000)]
    pub cycles: u64,
    /// Warmup cycles discarded (default: 10% of cycles).
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Coin)]
    pub mode: ModeArg,
    /// Independent replications.
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Batches per replication for the batch-means intervals.
    #[arg(long, default_value_t = simulator::DEFAULT_BATCHES)]
    pub batches: usize,
}

impl SimArgs {
    pub fn options(&self, seed: u64) -> SimOptions {
        SimOptions {
            cycles: self.cycles,
            warmup: self.warmup,
            seed,
            mode: self.mode.into(),
            batches: self.batches,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Branching constants and heavy-traffic limit coefficients.
    Analyze {
        /// Also report load-dependent quantities at this load.
        #[arg(long)]
        rho: Option<f64>,
        /// Emit every limit law coefficient instead of the summary.
        #[arg(long)]
        limits: bool,
    },
    /// Mean number of customers by the interpolation approximation.
    Approx {
        /// `start:stop:step` or a comma-separated list of loads.
        #[arg(long)]
        rho_grid: String,
    },
    /// Simulate and report per-coordinate statistics.
    Simulate {
        #[arg(long)]
        rho: f64,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Simulated against approximated mean numbers of customers.
    Compare {
        #[arg(long)]
        rho_grid: String,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error("invalid configuration:\n{0}")]
    Validation(ValidationErrors),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Branching(#[from] BranchingError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// The reader of our output went away (e.g. `| head`).
    pub fn is_broken_pipe(&self) -> bool {
        let io = match self {
            CliError::Io(e) => Some(e),
            CliError::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(e) => Some(e),
                _ => None,
            },
            _ => None,
        };
        io.is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
    }

    /// 2 for bad input, 3 for numerical non-convergence, 4 for too little
    /// simulation data, 1 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) | CliError::Usage(_) | CliError::Approx(_) => 2,
            CliError::Branching(BranchingError::NoConvergence { .. }) => 3,
            CliError::Branching(_) => 2,
            CliError::Simulation(SimError::InsufficientCycles { .. } | SimError::InvalidBatches { .. }) => 4,
            CliError::Simulation(_) => 2,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

/// Loads and validates the configuration, or the built-in example.
pub fn load_config(path: Option<&PathBuf>) -> Result<PollingConfig, CliError> {
    let config = match path {
        Some(p) => ConfigFile::read(p)?.to_config(),
        None => five_station_example(),
    };
    config.validate().map_err(CliError::Validation)?;
    Ok(config)
}

fn profile(config: &PollingConfig) -> Result<LoadProfile, CliError> {
    LoadProfile::normalize(config).map_err(|e| CliError::Validation(ValidationErrors(vec![e])))
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("invalid load grid '{spec}'"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let grid = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [a, b, step] = parts[..] else { return Err(bad()) };
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if !(step > 0.0) || b < a {
            return Err(bad());
        }
        let count = ((b - a) / step + 1e-9).floor() as usize;
        (0..=count).map(|k| ((a + k as f64 * step) * 1e12).round() / 1e12).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if grid.is_empty() {
        return Err(bad());
    }
    Ok(grid)
}

/// A rectangular table rendered as CSV or aligned text.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: Vec<&'static str>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn write(&self, format: Format, out: &mut dyn Write) -> Result<(), CliError> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(&self.header)?;
                for r in &self.rows {
                    w.write_record(r)?;
                }
                w.flush()?;
            }
            Format::Text => {
                let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
                for r in &self.rows {
                    for (w, cell) in widths.iter_mut().zip(r) {
                        *w = (*w).max(cell.len());
                    }
                }
                let line = |cells: Vec<&str>| {
                    let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                    padded.join("  ").trim_end().to_string()
                };
                writeln!(out, "{}", line(self.header.clone()))?;
                for r in &self.rows {
                    writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
                }
            }
        }
        Ok(())
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Summary of the branching constants, one quantity per row.
pub fn analyze_table(config: &PollingConfig, rho: Option<f64>) -> Result<Table, CliError> {
    let profile = profile(config)?;
    let s = BranchingSummary::compute(&profile)?;
    let mut t = Table::new(vec!["quantity", "station", "value"]);
    let mut push = |q: &str, station: Option<usize>, v: f64| {
        t.rows.push(vec![q.to_string(), station.map(|i| (i + 1).to_string()).unwrap_or_default(), num(v)]);
    };
    push("stations", None, s.len() as f64);
    push("config_load", None, profile.source_load());
    push("b1", None, s.b1);
    push("b2", None, s.b2);
    push("abs_b", None, s.abs_b);
    push("r", None, s.r);
    push("xi_hat", None, s.xi);
    push("delta", None, s.delta);
    push("xi_prime_at_1", None, 1.0 / s.delta);
    push("a", None, s.a);
    push("alpha", None, s.alpha);
    push("workload_scale", None, s.workload_scale());
    push("limit_scale", None, s.limit_scale());
    let per_station: [(&str, &[f64]); 7] = [
        ("lambda_hat", &s.lambda_hat),
        ("rho_hat", &s.rho_hat),
        ("stick_probability", &s.stick),
        ("w_hat", &s.w_hat),
        ("u_hat", s.u_hat()),
        ("g_hat", &s.g_hat),
        ("exhaustiveness", &s.exhaustiveness),
    ];
    for (q, values) in per_station {
        for (i, &v) in values.iter().enumerate() {
            push(q, Some(i), v);
        }
    }
    for i in 0..s.len() {
        push("c1", Some(i), approx::c1_coefficient(&s, i));
    }
    if let Some(rho) = rho {
        let xi = branching::perron_root(&profile, rho)?;
        push("rho", None, rho);
        push("xi", None, xi);
        if let Ok(pi) = branching::pi_limit(xi) {
            push("scaled_pi", None, (1.0 - rho) * pi);
        }
        if rho < 1.0 {
            for i in 0..s.len() {
                push("mean_approx", Some(i), approx::mean_customers_approx(&s, i, rho)?);
            }
            push("mean_approx_total", None, approx::total_customers_approx(&s, rho)?);
        }
    }
    Ok(t)
}

pub fn limits_table(config: &PollingConfig) -> Result<Table, CliError> {
    let s = BranchingSummary::compute(&profile(config)?)?;
    let mut t = Table::new(vec![
        "epoch",
        "component",
        "coordinate",
        "base_coeff",
        "uniform_coeff",
        "shape",
        "probability",
        "mean",
        "variance",
    ]);
    for r in limit_rows(&s) {
        t.rows.push(vec![
            r.epoch,
            r.component.to_string(),
            r.coordinate,
            num(r.base_coeff),
            num(r.uniform_coeff),
            num(r.shape),
            num(r.probability),
            num(r.mean),
            num(r.variance),
        ]);
    }
    Ok(t)
}

pub fn approx_table(config: &PollingConfig, grid: &[f64]) -> Result<Table, CliError> {
    let s = BranchingSummary::compute(&profile(config)?)?;
    let mut t = Table::new(vec!["rho", "station", "mean_approx"]);
    for r in ApproxTable::build(&s, grid)?.rows {
        t.rows.push(vec![num(r.rho), r.station.to_string(), num(r.approx_mean)]);
    }
    Ok(t)
}

pub fn simulate_table(config: &PollingConfig, rho: f64, options: &SimOptions, reps: usize) -> Result<Table, CliError> {
    let estimates = simulator::run_replications(config, rho, options, reps)?;
    for e in &estimates {
        if let Some(w) = simulator::cycle_regeneration_check(e).warning {
            eprintln!("warning: {w}");
        }
    }
    let mut t = Table::new(vec!["epoch", "station", "coordinate", "mean", "var", "ci95", "n"]);
    for r in pool_rows(&estimates) {
        t.rows.push(vec![
            r.observation.label().to_string(),
            r.observation.station_label(),
            r.coordinate.to_string(),
            num(r.stat.mean),
            num(r.stat.variance),
            opt(r.stat.ci95),
            r.stat.n.to_string(),
        ]);
    }
    Ok(t)
}

/// Simulated against approximated mean numbers of customers per load.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    /// Per-station rows then a total row, for each load in grid order.
    pub rows: Vec<ApproxRow>,
    /// Regeneration diagnostics of the first replication at each load.
    pub diagnostics: Vec<(f64, RegenerationDiagnostics)>,
}

impl CompareReport {
    pub fn totals(&self) -> impl Iterator<Item = &ApproxRow> {
        self.rows.iter().filter(|r| r.station == StationRef::Total)
    }
}

pub fn compare(config: &PollingConfig, grid: &[f64], options: &SimOptions, reps: usize) -> Result<CompareReport, CliError> {
    let s = BranchingSummary::compute(&profile(config)?)?;
    let n = s.len();
    let table = ApproxTable::build(&s, grid)?;
    let mut rows = Vec::with_capacity(table.rows.len());
    let mut diagnostics = Vec::new();
    for (k, &rho) in grid.iter().enumerate() {
        let estimates = simulator::run_replications(config, rho, options, reps)?;
        diagnostics.push((rho, simulator::cycle_regeneration_check(&estimates[0])));
        for row in &table.rows[k * (n + 1)..(k + 1) * (n + 1)] {
            let mut weights = vec![0.0; 2 * n];
            match row.station {
                StationRef::Station(i) => {
                    weights[i] = 1.0;
                    weights[n + i] = 1.0;
                }
                StationRef::Total => weights.iter_mut().for_each(|w| *w = 1.0),
            }
            let intervals: Vec<_> = estimates.iter().map(|e| e.time_average_functional(&weights)).collect();
            let iv = pool_intervals(&intervals);
            rows.push(row.clone().with_simulation(iv.mean, iv.half_width));
        }
    }
    Ok(CompareReport { rows, diagnostics })
}

pub fn compare_table(report: &CompareReport) -> Table {
    let mut t = Table::new(vec!["rho", "station", "sim_mean", "sim_ci95", "approx_mean", "pct_error"]);
    for r in &report.rows {
        t.rows.push(vec![
            num(r.rho),
            r.station.to_string(),
            opt(r.sim_mean),
            opt(r.sim_ci95),
            num(r.approx_mean),
            opt(r.pct_error),
        ]);
    }
    t
}

/// Runs one parsed command line, writing its table to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(cli.config.as_ref())?;
    let (table, default_format) = match &cli.command {
        Command::Analyze { rho, limits } => {
            if *limits {
                (limits_table(&config)?, Format::Csv)
            } else {
                (analyze_table(&config, *rho)?, Format::Text)
            }
        }
        Command::Approx { rho_grid } => (approx_table(&config, &parse_grid(rho_grid)?)?, Format::Csv),
        Command::Simulate { rho, sim } => {
            (simulate_table(&config, *rho, &sim.options(cli.seed), sim.reps)?, Format::Csv)
        }
        Command::Compare { rho_grid, sim } => {
            let report = compare(&config, &parse_grid(rho_grid)?, &sim.options(cli.seed), sim.reps)?;
            for (rho, d) in &report.diagnostics {
                if let Some(w) = &d.warning {
                    eprintln!("warning: rho {rho}: {w}");
                }
            }
            (compare_table(&report), Format::Csv)
        }
    };
    table.write(cli.format.unwrap_or(default_format), out)
}
