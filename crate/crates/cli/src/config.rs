//! Experiment configuration: a flat `key = value` file overlaid with command-line flags.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lqgbc::analysis::{rank_one_circulant_cov, rank_r_cov};
use lqgbc::numerics::{CMatrix, NoiseKind};
use num_complex::Complex64;

use crate::CliError;

pub const DEFAULT_K: usize = 2;
pub const DEFAULT_N: usize = 300;
pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_POWER: f64 = 1.0;
pub const DEFAULT_POWERS: [f64; 7] = [0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0];
pub const DEFAULT_A_GRID: [f64; 6] = [1.2, 1.5, 2.0, 3.0, 5.0, 10.0];

/// Keys accepted in config files and as `--key` flags.
pub const KEYS: [&str; 15] = [
    "k",
    "a",
    "modes",
    "cov",
    "n",
    "trials",
    "seed",
    "jobs",
    "units",
    "out",
    "noise",
    "power",
    "powers",
    "a-grid",
    "grid-fraction",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Simulate,
    Phi,
    Sweep,
    Prelog,
    CompareOl,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Phi => "phi",
            Command::Sweep => "sweep",
            Command::Prelog => "prelog",
            Command::CompareOl => "compare-ol",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Nats,
    Bits,
}

impl Units {
    /// Converts a rate in nats to these units.
    pub fn rate(self, nats: f64) -> f64 {
        match self {
            Units::Nats => nats,
            Units::Bits => nats / std::f64::consts::LN_2,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Units::Nats => "nats",
            Units::Bits => "bits",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovSpec {
    Identity,
    /// Unit diagonal, every off-diagonal entry equal to `rho`.
    Rho(f64),
    RankOne,
    Rank(usize),
    File(PathBuf),
}

impl fmt::Display for CovSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovSpec::Identity => write!(f, "identity"),
            CovSpec::Rho(r) => write!(f, "rho={r}"),
            CovSpec::RankOne => write!(f, "rank1"),
            CovSpec::Rank(r) => write!(f, "rank={r}"),
            CovSpec::File(p) => write!(f, "file={}", p.display()),
        }
    }
}

fn parse_cov(value: &str) -> Result<CovSpec, CliError> {
    let bad = || CliError::config("cov", format!("unrecognised covariance `{value}`"));
    let (head, arg) = match value.find(['=', ':']) {
        Some(i) => (&value[..i], Some(&value[i + 1..])),
        None => (value, None),
    };
    match (head, arg) {
        ("identity", None) => Ok(CovSpec::Identity),
        ("rank1" | "rank-one", None) => Ok(CovSpec::RankOne),
        ("rho", Some(r)) => Ok(CovSpec::Rho(parse_num("cov", r)?)),
        ("rank", Some(r)) => Ok(CovSpec::Rank(parse_num("cov", r)?)),
        ("file", Some(p)) if !p.is_empty() => Ok(CovSpec::File(PathBuf::from(p))),
        _ => Err(bad()),
    }
}

/// Reads a covariance file: the dimension `k` on the first line, then `k` rows of `k`
/// entries written as `re imj` pairs.
pub fn read_cov_file(path: &Path) -> Result<CMatrix, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_cov_text(&text)
        .map_err(|msg| CliError::config("cov", format!("{}: {msg}", path.display())))
}

pub fn parse_cov_text(text: &str) -> Result<CMatrix, String> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let k: usize = lines
        .next()
        .ok_or("empty file")?
        .parse()
        .map_err(|_| "first line must be the dimension")?;
    if k == 0 {
        return Err("dimension must be at least 1".into());
    }
    let mut entries = Vec::with_capacity(k * k);
    for row in 0..k {
        let line = lines
            .next()
            .ok_or(format!("expected {k} rows, found {row}"))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 * k {
            return Err(format!(
                "row {} has {} tokens, expected {}",
                row + 1,
                tokens.len(),
                2 * k
            ));
        }
        for pair in tokens.chunks(2) {
            let re: f64 = pair[0]
                .parse()
                .map_err(|_| format!("bad real part `{}`", pair[0]))?;
            let im_text = pair[1].trim_end_matches(['j', 'i']);
            let im: f64 = im_text
                .parse()
                .map_err(|_| format!("bad imaginary part `{}`", pair[1]))?;
            entries.push(Complex64::new(re, im));
        }
    }
    if lines.next().is_some() {
        return Err(format!("trailing content after {k} rows"));
    }
    Ok(CMatrix::from_row_slice(k, k, &entries))
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::config(key, format!("cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value.split(',').map(|v| parse_num(key, v)).collect()
}

/// Parses `re+imj` (also `re-imj`, `re`, `imj`).
pub fn parse_complex(value: &str) -> Result<Complex64, CliError> {
    Complex64::from_str(value.trim())
        .map_err(|_| CliError::config("modes", format!("cannot parse complex `{value}`")))
}

pub fn format_complex(z: Complex64) -> String {
    // `+ 0.0` turns -0 into +0.
    let (re, im) = (z.re + 0.0, z.im + 0.0);
    let sign = if im < 0.0 { '-' } else { '+' };
    format!("{re}{sign}{}j", im.abs())
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::config(
                "config",
                format!("line {}: expected key = value", lineno + 1),
            )
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::config(
                "config",
                format!("line {}: unknown key `{key}`", lineno + 1),
            ));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Fully resolved configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub command: Command,
    pub k: usize,
    pub a: f64,
    pub modes: Vec<Complex64>,
    /// True when `modes` came from `--modes` rather than the symmetric layout.
    pub explicit_modes: bool,
    pub cov: CovSpec,
    pub noise_cov: CMatrix,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub jobs: usize,
    pub units: Units,
    pub out: Option<PathBuf>,
    pub noise: NoiseKind,
    pub power: f64,
    pub powers: Vec<f64>,
    pub a_grid: Vec<f64>,
    pub grid_fraction: Option<f64>,
}

impl Config {
    /// Builds the configuration from merged `key → value` settings.
    pub fn resolve(command: Command, map: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let get = |key: &str| map.get(key).map(String::as_str);

        let a = match get("a") {
            Some(v) => parse_num("a", v)?,
            None => std::f64::consts::SQRT_2,
        };
        if !(a > 1.0 && a.is_finite()) {
            return Err(CliError::config("a", format!("must exceed 1, got {a}")));
        }
        let cov = match get("cov") {
            Some(v) => parse_cov(v)?,
            None => CovSpec::Identity,
        };
        let file_cov = match &cov {
            CovSpec::File(path) => Some(read_cov_file(path)?),
            _ => None,
        };
        let explicit_modes = get("modes").is_some();
        let modes_list = match get("modes") {
            Some(v) => Some(
                v.split(',')
                    .map(parse_complex)
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let k_flag: Option<usize> = get("k").map(|v| parse_num("k", v)).transpose()?;
        let k = match (&modes_list, k_flag, &file_cov) {
            (Some(m), Some(k), _) if m.len() != k => {
                return Err(CliError::config(
                    "k",
                    format!("{k} disagrees with {} modes", m.len()),
                ))
            }
            (Some(m), _, _) => m.len(),
            (None, Some(k), _) => k,
            (None, None, Some(c)) => c.nrows(),
            (None, None, None) => DEFAULT_K,
        };
        if k == 0 {
            return Err(CliError::config("k", "must be at least 1"));
        }
        let modes = modes_list.unwrap_or_else(|| lqgbc::lqg::SystemSpec::symmetric_modes(k, a));

        let noise_cov = match (&cov, file_cov) {
            (_, Some(c)) => {
                if c.nrows() != k {
                    return Err(CliError::config(
                        "cov",
                        format!("file has dimension {}, expected {k}", c.nrows()),
                    ));
                }
                c
            }
            (CovSpec::Identity, None) => CMatrix::identity(k, k),
            (CovSpec::Rho(rho), None) => {
                let mut c = CMatrix::from_element(k, k, Complex64::new(*rho, 0.0));
                c.fill_diagonal(Complex64::new(1.0, 0.0));
                c
            }
            (CovSpec::RankOne, None) => rank_one_circulant_cov(k),
            (CovSpec::Rank(r), None) => {
                rank_r_cov(k, *r).map_err(|e| CliError::config("cov", e.to_string()))?
            }
            (CovSpec::File(_), None) => unreachable!("file covariance is read above"),
        };

        let positive = |key: &str, default: usize| -> Result<usize, CliError> {
            let v = match get(key) {
                Some(v) => parse_num(key, v)?,
                None => default,
            };
            if v == 0 {
                return Err(CliError::config(key, "must be at least 1"));
            }
            Ok(v)
        };
        let n = positive("n", DEFAULT_N)?;
        let trials = positive("trials", DEFAULT_TRIALS)?;
        let seed = get("seed")
            .map(|v| parse_num("seed", v))
            .transpose()?
            .unwrap_or(DEFAULT_SEED);
        let jobs = get("jobs")
            .map(|v| parse_num("jobs", v))
            .transpose()?
            .unwrap_or(0);
        let units = match get("units") {
            None | Some("nats") => Units::Nats,
            Some("bits") => Units::Bits,
            Some(other) => {
                return Err(CliError::config(
                    "units",
                    format!("expected nats or bits, got `{other}`"),
                ))
            }
        };
        let noise = match get("noise") {
            None | Some("circular") => NoiseKind::Circular,
            Some("real") => NoiseKind::Real,
            Some("silent") => NoiseKind::Silent,
            Some(other) => {
                return Err(CliError::config(
                    "noise",
                    format!("expected circular, real or silent, got `{other}`"),
                ))
            }
        };
        let power = get("power")
            .map(|v| parse_num("power", v))
            .transpose()?
            .unwrap_or(DEFAULT_POWER);
        if !(power > 0.0 && power.is_finite()) {
            return Err(CliError::config(
                "power",
                format!("must be positive, got {power}"),
            ));
        }
        let powers = match get("powers") {
            Some(v) => parse_list("powers", v)?,
            None => DEFAULT_POWERS.to_vec(),
        };
        if powers.is_empty()
            || powers.iter().any(|p| !(*p > 0.0 && p.is_finite()))
            || powers.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(CliError::config(
                "powers",
                "must be positive and strictly ascending",
            ));
        }
        // A single --a stands in for the grid when no grid is given.
        let a_grid = match (get("a-grid"), get("a")) {
            (Some(v), _) => parse_list("a-grid", v)?,
            (None, Some(_)) => vec![a],
            (None, None) => DEFAULT_A_GRID.to_vec(),
        };
        if a_grid.iter().any(|v| !(*v > 1.0 && v.is_finite())) {
            return Err(CliError::config("a-grid", "every value must exceed 1"));
        }
        let grid_fraction = get("grid-fraction")
            .map(|v| parse_num::<f64>("grid-fraction", v))
            .transpose()?;
        if let Some(f) = grid_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(CliError::config(
                    "grid-fraction",
                    format!("must lie in (0, 1), got {f}"),
                ));
            }
        }

        Ok(Self {
            command,
            k,
            a,
            modes,
            explicit_modes,
            cov,
            noise_cov,
            n,
            trials,
            seed,
            jobs,
            units,
            out: get("out").map(PathBuf::from),
            noise,
            power,
            powers,
            a_grid,
            grid_fraction,
        })
    }

    /// The configuration as `key = value` lines, readable back as a config file.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "# command: {}", self.command.name());
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "a = {}", self.a);
        let modes: Vec<String> = self.modes.iter().map(|&z| format_complex(z)).collect();
        let _ = writeln!(s, "modes = {}", modes.join(","));
        let _ = writeln!(s, "cov = {}", self.cov);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "jobs = {}", self.jobs);
        let _ = writeln!(s, "units = {}", self.units.suffix());
        if let Some(out) = &self.out {
            let _ = writeln!(s, "out = {}", out.display());
        }
        let noise = match self.noise {
            NoiseKind::Circular => "circular",
            NoiseKind::Real => "real",
            NoiseKind::Silent => "silent",
        };
        let _ = writeln!(s, "noise = {noise}");
        let _ = writeln!(s, "power = {}", self.power);
        let _ = writeln!(s, "powers = {}", list(&self.powers));
        let _ = writeln!(s, "a-grid = {}", list(&self.a_grid));
        if let Some(f) = self.grid_fraction {
            let _ = writeln!(s, "grid-fraction = {f}");
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for line in self.to_lines().lines().filter(|l| !l.starts_with('#')) {
            if let Some((k, v)) = line.split_once(" = ") {
                map.insert(k.to_string(), serde_json::Value::String(v.to_string()));
            }
        }
        map.insert("command".into(), self.command.name().into());
        serde_json::Value::Object(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(pairs: &[(&str, &str)]) -> Result<Config, CliError> {
        let map = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Config::resolve(Command::Solve, &map)
    }

    #[test]
    fn defaults() {
        let c = resolve(&[]).unwrap();
        assert_eq!(c.k, 2);
        assert_eq!(c.a, std::f64::consts::SQRT_2);
        assert_eq!(c.noise_cov, CMatrix::identity(2, 2));
        assert_eq!((c.n, c.trials, c.seed, c.jobs), (300, 1000, 1, 0));
        assert_eq!(c.a_grid, DEFAULT_A_GRID.to_vec());
    }

    #[test]
    fn covariance_specs() {
        assert_eq!(parse_cov("rho=-0.5").unwrap(), CovSpec::Rho(-0.5));
        assert_eq!(parse_cov("rho:0.25").unwrap(), CovSpec::Rho(0.25));
        assert_eq!(parse_cov("rank-one").unwrap(), CovSpec::RankOne);
        assert_eq!(parse_cov("rank=2").unwrap(), CovSpec::Rank(2));
        assert!(parse_cov("rank").is_err());
        assert!(parse_cov("diag").is_err());
        let c = resolve(&[("k", "3"), ("cov", "rank=2")]).unwrap();
        assert_eq!(c.noise_cov, rank_r_cov(3, 2).unwrap());
    }

    #[test]
    fn modes_set_k() {
        let c = resolve(&[("modes", "1.5+0j,-1.5+0j,0+2j")]).unwrap();
        assert_eq!(c.k, 3);
        assert_eq!(c.modes[2], Complex64::new(0.0, 2.0));
        assert!(resolve(&[("modes", "2,3"), ("k", "3")]).is_err());
        assert!(resolve(&[("modes", "2,x")]).is_err());
    }

    #[test]
    fn cov_file_round_trip() {
        let text = "2\n1 0j 0.5 -0.25j\n0.5 0.25j 1 0j\n";
        let m = parse_cov_text(text).unwrap();
        assert_eq!(m[(0, 1)], Complex64::new(0.5, -0.25));
        assert_eq!(m[(1, 0)], Complex64::new(0.5, 0.25));
        assert!(parse_cov_text("2\n1 0j 0 0j\n").is_err());
        assert!(parse_cov_text("2\n1 0j 0\n0 0j 1 0j\n").is_err());
        assert!(parse_cov_text("x\n").is_err());
    }

    #[test]
    fn config_lines_resolve_to_the_same_config() {
        let c = resolve(&[
            ("k", "3"),
            ("cov", "rho=0.2"),
            ("seed", "9"),
            ("units", "bits"),
        ])
        .unwrap();
        let map = parse_config_file(&c.to_lines()).unwrap();
        assert_eq!(
            Config::resolve(Command::Solve, &map).unwrap(),
            Config {
                explicit_modes: true,
                ..c
            }
        );
    }

    #[test]
    fn field_level_errors() {
        for (pairs, key) in [
            (vec![("a", "0.9")], "a"),
            (vec![("n", "0")], "n"),
            (vec![("units", "hartley")], "units"),
            (vec![("powers", "1,0.5")], "powers"),
            (vec![("seed", "-1")], "seed"),
        ] {
            match resolve(&pairs) {
                Err(CliError::Config { field, .. }) => assert_eq!(field, key),
                other => panic!("expected config error for {key}, got {other:?}"),
            }
        }
        assert!(parse_config_file("bogus = 1").is_err());
        assert!(parse_config_file("k 3").is_err());
    }
}
