//! Command-line harness for the `lqgbc` experiments.
//!
//! Every run resolves its configuration (config file, then flags), logs it to stderr,
//! computes a [`Table`] and writes it as CSV either to stdout or atomically to `--out`, with
//! a JSON summary next to it.

pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lqgbc::analysis::{self, AnalysisError};
use lqgbc::lqg::{dare_residual, LqgError, LqgSolution, SystemSpec};
use lqgbc::numerics::NumericsError;
use lqgbc::simulator::{self, SimError, TrialConfig};
use serde_json::json;
use thiserror::Error;

use crate::config::{Command, Config, CovSpec};
pub use crate::output::{Cell, Table};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid {field}: {message}")]
    Config { field: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

fn spec_error(e: LqgError) -> CliError {
    match e {
        LqgError::Empty | LqgError::StableMode { .. } | LqgError::DuplicateModes { .. } => {
            CliError::config("modes", e.to_string())
        }
        LqgError::CovarianceShape { .. }
        | LqgError::CovarianceDiagonal { .. }
        | LqgError::CovarianceNotPsd { .. } => CliError::config("cov", e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::HorizonTooLong { .. } | SimError::ZeroHorizon => {
            CliError::config("n", e.to_string())
        }
        SimError::NoTrials => CliError::config("trials", e.to_string()),
        SimError::Code(c) => CliError::config("grid-fraction", c.to_string()),
        SimError::Numerics(NumericsError::ComplexCovariance { .. }) => {
            CliError::config("noise", e.to_string())
        }
        SimError::Pool(_) => CliError::config("jobs", e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

fn analysis_error(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::InvalidRank { .. } => CliError::config("cov", e.to_string()),
        AnalysisError::InvalidPower(_) => CliError::config("power", e.to_string()),
        AnalysisError::InvalidGrid => CliError::config("powers", e.to_string()),
        AnalysisError::InvalidMode(_) => CliError::config("a-grid", e.to_string()),
        AnalysisError::ZeroReceivers => CliError::config("k", e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lqgbc",
    version,
    about = "LQG feedback codes for the Gaussian broadcast channel"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArg,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum CommandArg {
    /// Riccati/Lyapunov solution, gain and asymptotic power.
    Solve,
    /// Monte Carlo ensemble of the closed-loop code.
    Simulate,
    /// Power gain and sum rate at a single power.
    Phi,
    /// Sum rate over a power grid.
    Sweep,
    /// Pre-log ratio under a rank-deficient noise covariance.
    Prelog,
    /// Transmit power of the Ozarow–Leung code versus the LQG code.
    CompareOl,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Solve => Command::Solve,
            CommandArg::Simulate => Command::Simulate,
            CommandArg::Phi => Command::Phi,
            CommandArg::Sweep => Command::Sweep,
            CommandArg::Prelog => Command::Prelog,
            CommandArg::CompareOl => Command::CompareOl,
        }
    }
}

/// Flags override keys of the same name in `--config`.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Number of receivers.
    #[arg(long, global = true)]
    pub k: Option<String>,
    /// Mode modulus for the symmetric layout.
    #[arg(long, global = true)]
    pub a: Option<String>,
    /// Explicit modes, comma-separated `re+imj`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub modes: Option<String>,
    /// identity | rho=<r> | rank1 | rank=<r> | file=<path>
    #[arg(long, global = true)]
    pub cov: Option<String>,
    /// Block length.
    #[arg(long, global = true)]
    pub n: Option<String>,
    #[arg(long, global = true)]
    pub trials: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    pub jobs: Option<String>,
    /// nats | bits
    #[arg(long, global = true)]
    pub units: Option<String>,
    /// CSV output path; the JSON summary goes next to it.
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// circular | real | silent
    #[arg(long, global = true)]
    pub noise: Option<String>,
    /// Power for `phi`.
    #[arg(long, global = true)]
    pub power: Option<String>,
    /// Comma-separated ascending powers for `sweep`.
    #[arg(long, global = true)]
    pub powers: Option<String>,
    /// Comma-separated mode moduli for `prelog`.
    #[arg(long = "a-grid", global = true)]
    pub a_grid: Option<String>,
    /// Decode messages from grids at this fraction of each receiver's rate.
    #[arg(long = "grid-fraction", global = true)]
    pub grid_fraction: Option<String>,
}

impl Flags {
    fn overrides(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("k", &self.k),
            ("a", &self.a),
            ("modes", &self.modes),
            ("cov", &self.cov),
            ("n", &self.n),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("jobs", &self.jobs),
            ("units", &self.units),
            ("out", &self.out),
            ("noise", &self.noise),
            ("power", &self.power),
            ("powers", &self.powers),
            ("a-grid", &self.a_grid),
            ("grid-fraction", &self.grid_fraction),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

/// Result of one command.
#[derive(Debug, Clone)]
pub struct Report {
    pub config: Config,
    pub table: Table,
    pub summary: serde_json::Value,
}

/// Parses flags, merges the config file and resolves defaults.
pub fn resolve(cli: &Cli) -> Result<Config, CliError> {
    let mut settings = match &cli.flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            config::parse_config_file(&text)?
        }
        None => BTreeMap::new(),
    };
    settings.extend(cli.flags.overrides());
    Config::resolve(cli.command.into(), &settings)
}

pub fn run(config: &Config) -> Result<Report, CliError> {
    let (table, extra) = match config.command {
        Command::Solve => solve(config)?,
        Command::Simulate => simulate(config)?,
        Command::Phi => phi(config)?,
        Command::Sweep => sweep(config)?,
        Command::Prelog => prelog(config)?,
        Command::CompareOl => compare_ol(config)?,
    };
    let mut summary = json!({
        "command": config.command.name(),
        "config": config.to_json(),
        "columns": table.header(),
        "rows": table.rows().len(),
    });
    if let (Some(obj), serde_json::Value::Object(extra)) = (summary.as_object_mut(), extra) {
        obj.extend(extra);
    }
    Ok(Report {
        config: config.clone(),
        table,
        summary,
    })
}

/// Writes the CSV and JSON summary to `--out`, or the CSV to stdout.
pub fn emit(report: &Report) -> Result<(), CliError> {
    let csv = report.table.to_csv()?;
    match &report.config.out {
        Some(path) => {
            let summary = serde_json::to_string_pretty(&report.summary)
                .map_err(|e| CliError::Io(e.to_string()))?;
            output::write_atomic(path, csv.as_bytes())?;
            output::write_atomic(
                &output::summary_path(path),
                format!("{summary}\n").as_bytes(),
            )?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

/// Full command-line entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = resolve(&cli).and_then(|config| {
        for line in config.to_lines().lines() {
            eprintln!("[config] {line}");
        }
        run(&config)
    });
    match result.and_then(|report| emit(&report)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn system(config: &Config) -> Result<SystemSpec, CliError> {
    SystemSpec::new(config.modes.clone(), config.noise_cov.clone()).map_err(spec_error)
}

fn solve(config: &Config) -> Result<(Table, serde_json::Value), CliError> {
    let spec = system(config)?;
    let sol = LqgSolution::solve(&spec).map_err(spec_error)?;
    let quadratic = (&sol.gain * &sol.steady_cov * sol.gain.adjoint())[(0, 0)].re;
    let residual = dare_residual(&sol.riccati, &spec.open_loop(), &spec.input_map());

    let mut table = Table::new(["quantity", "row", "col", "re", "im"]);
    let mut push_matrix =
        |name: &str,
         rows: usize,
         cols: usize,
         at: &dyn Fn(usize, usize) -> num_complex::Complex64| {
            for i in 0..rows {
                for j in 0..cols {
                    let z = at(i, j);
                    table.push(vec![
                        Cell::Text(name.into()),
                        i.into(),
                        j.into(),
                        z.re.into(),
                        z.im.into(),
                    ]);
                }
            }
        };
    let k = spec.k();
    push_matrix("G", k, k, &|i, j| sol.riccati[(i, j)]);
    push_matrix("C", 1, k, &|_, j| sol.gain[j]);
    push_matrix("K_s", k, k, &|i, j| sol.steady_cov[(i, j)]);
    for (name, value) in [
        ("power", sol.power),
        ("power_quadratic", quadratic),
        ("closed_loop_radius", sol.closed_loop_radius),
        ("stability_margin", 1.0 - sol.closed_loop_radius),
    ] {
        table.push(vec![
            Cell::Text(name.into()),
            0usize.into(),
            0usize.into(),
            value.into(),
            0.0.into(),
        ]);
    }
    let extra = json!({
        "power": sol.power,
        "stability_margin": 1.0 - sol.closed_loop_radius,
        "riccati_residual": residual,
    });
    Ok((table, extra))
}

fn simulate(config: &Config) -> Result<(Table, serde_json::Value), CliError> {
    let spec = system(config)?;
    let solution = LqgSolution::solve(&spec).map_err(spec_error)?;
    let power = solution.power;
    let mut trial = TrialConfig::with_solution(spec.clone(), solution, config.n)
        .and_then(|t| t.with_noise(config.noise))
        .map_err(sim_error)?;
    if let Some(f) = config.grid_fraction {
        let rates: Vec<f64> = spec.modes().iter().map(|a| f * a.norm().ln()).collect();
        trial = trial.with_grid_rates(&rates).map_err(sim_error)?;
    }
    let ens = simulator::run_ensemble(&trial, config.trials, config.seed, config.jobs)
        .map_err(sim_error)?;

    let u = config.units;
    let s = u.suffix();
    let mut table = Table::new([
        "receiver".to_string(),
        "mode_re".into(),
        "mode_im".into(),
        format!("target_rate_{s}"),
        format!("exponent_{s}"),
        format!("trial_exponent_{s}"),
        format!("trial_exponent_stderr_{s}"),
        "final_mse".into(),
        "final_mse_stderr".into(),
        "avg_power".into(),
        "avg_power_stderr".into(),
        "tail_power".into(),
        "tail_power_stderr".into(),
        "asymptotic_power".into(),
        "grid_error_rate".into(),
    ]);
    for (j, a) in spec.modes().iter().enumerate() {
        table.push(vec![
            j.into(),
            a.re.into(),
            a.im.into(),
            u.rate(a.norm().ln()).into(),
            ens.ensemble_exponent[j].map(|e| u.rate(e)).into(),
            u.rate(ens.trial_exponent[j].mean).into(),
            u.rate(ens.trial_exponent[j].stderr).into(),
            ens.final_mse[j].mean.into(),
            ens.final_mse[j].stderr.into(),
            ens.avg_power.mean.into(),
            ens.avg_power.stderr.into(),
            ens.tail_power.mean.into(),
            ens.tail_power.stderr.into(),
            power.into(),
            ens.grid_error_rate.as_ref().map(|r| r[j]).into(),
        ]);
    }
    let extra = json!({
        "trials": ens.trials,
        "base_seed": ens.base_seed,
        "rng": "ChaCha8, seeded with the base seed, stream = trial index",
        "asymptotic_power": power,
        "avg_power": ens.avg_power.mean,
        "tail_power": ens.tail_power.mean,
        "max_identity_residual": ens.max_identity_residual,
    });
    Ok((table, extra))
}

fn phi(config: &Config) -> Result<(Table, serde_json::Value), CliError> {
    let (k, p, u) = (config.k, config.power, config.units);
    let point = analysis::SumRatePoint::new(k, p).map_err(analysis_error)?;
    let mac = analysis::mac_sum_rate(k, p / k as f64).map_err(analysis_error)?;
    let s = u.suffix();
    let mut table = Table::new([
        "k".to_string(),
        "power".into(),
        "phi".into(),
        format!("rate_{s}"),
        format!("rate_no_feedback_{s}"),
        format!("mac_rate_at_power_over_k_{s}"),
        "equation_residual".into(),
    ]);
    let residual = analysis::phi_residual(k, p, point.phi);
    table.push(vec![
        k.into(),
        p.into(),
        point.phi.into(),
        u.rate(point.rate).into(),
        u.rate(point.rate_no_feedback).into(),
        u.rate(mac).into(),
        residual.into(),
    ]);
    Ok((
        table,
        json!({ "duality_residual_nats": (point.rate - mac).abs(), "equation_residual": residual }),
    ))
}

fn sweep(config: &Config) -> Result<(Table, serde_json::Value), CliError> {
    let u = config.units;
    let s = u.suffix();
    let rows = analysis::sweep(config.k, &config.powers).map_err(analysis_error)?;
    let mut table = Table::new([
        "power".to_string(),
        "phi".into(),
        format!("rate_{s}"),
        format!("rate_no_feedback_{s}"),
        "gain".into(),
    ]);
    for r in &rows {
        table.push(vec![
            r.power.into(),
            r.phi.into(),
            u.rate(r.rate).into(),
            u.rate(r.rate_no_feedback).into(),
            r.phi.into(),
        ]);
    }
    Ok((table, json!({ "k": config.k })))
}

fn prelog(config: &Config) -> Result<(Table, serde_json::Value), CliError> {
    let k = config.k;
    let r = match config.cov {
        CovSpec::Identity => k,
        CovSpec::RankOne => 1,
        CovSpec::Rank(r) => r,
        _ => {
            return Err(CliError::config(
                "cov",
                "prelog needs identity, rank1 or rank=<r>",
            ))
        }
    };
    let exp = analysis::prelog_achieved(k, r, &config.a_grid).map_err(analysis_error)?;
    let u = config.units;
    let mut table = Table::new([
        "k".to_string(),
        "r".into(),
        "effective_k".into(),
        "a".into(),
        format!("rate_{}", u.suffix()),
        "power".into(),
        "closed_form_power".into(),
        "ratio".into(),
    ]);
    for p in &exp.points {
        table.push(vec![
            k.into(),
            r.into(),
            exp.effective_k().into(),
            p.a.into(),
            u.rate(p.rate).into(),
            p.power.into(),
            p.closed_form_power.into(),
            p.ratio.into(),
        ]);
    }
    let worst = exp
        .points
        .iter()
        .map(|p| (p.power - p.closed_form_power).abs() / p.closed_form_power)
        .fold(0.0, f64::max);
    Ok((
        table,
        json!({ "prelog_limit": exp.effective_k(), "max_relative_power_gap": worst }),
    ))
}

fn compare_ol(config: &Config) -> Result<(Table, serde_json::Value), CliError> {
    let cmp = simulator::compare_ol(config.a, config.n, config.trials, config.seed, config.jobs)
        .map_err(sim_error)?;
    let ol_asymptotic =
        simulator::ol_asymptotic_power(config.a, 10 * config.n.max(200)).map_err(sim_error)?;
    let mut table = Table::new([
        "a",
        "n",
        "trials",
        "lqg_power",
        "lqg_power_stderr",
        "ol_power",
        "ol_power_stderr",
        "difference",
        "difference_stderr",
        "separation_sigma",
        "lqg_asymptotic",
        "ol_asymptotic",
    ]);
    table.push(vec![
        config.a.into(),
        cmp.horizon.into(),
        cmp.trials.into(),
        cmp.lqg_power.mean.into(),
        cmp.lqg_power.stderr.into(),
        cmp.ol_power.mean.into(),
        cmp.ol_power.stderr.into(),
        cmp.difference.mean.into(),
        cmp.difference.stderr.into(),
        cmp.separation().into(),
        cmp.lqg_asymptotic.into(),
        ol_asymptotic.into(),
    ]);
    let extra = json!({
        "base_seed": cmp.base_seed,
        "noise": "real, independent unit variance",
        "messages": "uniform on (-1/2, 1/2), shared by both codes",
    });
    Ok((table, extra))
}
