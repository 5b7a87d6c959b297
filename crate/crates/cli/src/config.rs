//! Experiment configuration: a subcommand, a typed flat parameter map, an
//! output directory and a seed. Values come from defaults, then an optional
//! `key = value` file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "NSASYM_OUT";
/// Output directory when neither `--out` nor [`OUT_ENV`] is given.
pub const DEFAULT_OUT: &str = "nsasym-out";

/// Subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Landau,
    Kernel,
    Potentials,
    Decompose,
    Picard,
    Flux,
    VerifyAll,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Subcommand::Landau,
        Subcommand::Kernel,
        Subcommand::Potentials,
        Subcommand::Decompose,
        Subcommand::Picard,
        Subcommand::Flux,
        Subcommand::VerifyAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Landau => "landau",
            Subcommand::Kernel => "kernel",
            Subcommand::Potentials => "potentials",
            Subcommand::Decompose => "decompose",
            Subcommand::Picard => "picard",
            Subcommand::Flux => "flux",
            Subcommand::VerifyAll => "verify-all",
        }
    }

    fn about(self) -> &'static str {
        match self {
            Subcommand::Landau => "Landau solution samples, |b| <-> A and PDE residuals",
            Subcommand::Kernel => "Oseen tensor samples and decay constants",
            Subcommand::Potentials => "Weighted decay of the space-time potentials",
            Subcommand::Decompose => "Force decomposition of an analytic test field",
            Subcommand::Picard => "Picard iteration for the perturbed system",
            Subcommand::Flux => "Momentum-flux integrals and extraction of b",
            Subcommand::VerifyAll => "Run every verification suite",
        }
    }

    /// Parameters accepted by the subcommand, with defaults.
    pub fn params(self) -> &'static [Param] {
        match self {
            Subcommand::Landau => LANDAU,
            Subcommand::Kernel => KERNEL,
            Subcommand::Potentials => POTENTIALS,
            Subcommand::Decompose => DECOMPOSE,
            Subcommand::Picard => PICARD,
            Subcommand::Flux => FLUX,
            Subcommand::VerifyAll => &[],
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Type of a parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kind {
    Float,
    Int,
    Choice(&'static [&'static str]),
    FloatList,
}

impl Kind {
    fn describe(&self) -> String {
        match self {
            Kind::Float => "a number".into(),
            Kind::Int => "a nonnegative integer".into(),
            Kind::Choice(c) => format!("one of {}", c.join("|")),
            Kind::FloatList => "a comma-separated list of numbers".into(),
        }
    }
}

/// A named, typed parameter with its default.
#[derive(Clone, Copy, Debug)]
pub struct Param {
    pub key: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub help: &'static str,
}

const fn p(key: &'static str, kind: Kind, default: &'static str, help: &'static str) -> Param {
    Param { key, kind, default, help }
}

const LANDAU: &[Param] = &[
    p("A", Kind::Float, "2.0", "profile parameter A > 1"),
    p("r_min", Kind::Float, "0.5", "smallest grid radius"),
    p("r_max", Kind::Float, "50", "largest grid radius"),
    p("n_r", Kind::Int, "32", "number of radii"),
    p("n_theta", Kind::Int, "16", "polar points of the sphere rule"),
    p("n_phi", Kind::Int, "32", "azimuthal points of the sphere rule"),
];

const KERNEL: &[Param] = &[
    p("t_min", Kind::Float, "1e-2", "smallest time"),
    p("t_max", Kind::Float, "1e2", "largest time"),
    p("r_min", Kind::Float, "1e-2", "smallest |x|"),
    p("r_max", Kind::Float, "1e2", "largest |x|"),
    p("n", Kind::Int, "20", "log-grid points per axis"),
];

const POTENTIALS: &[Param] = &[
    p("case", Kind::Choice(&["theta", "lambda", "intest"]), "theta", "which potential to sample"),
    p("r_min", Kind::Float, "2", "smallest |x|"),
    p("r_max", Kind::Float, "50", "largest |x|"),
    p("n", Kind::Int, "8", "number of log-spaced radii"),
    p("t", Kind::Float, "1", "evaluation time"),
    p("eta", Kind::Float, "0.25", "weight exponent for the intest cases"),
];

const DECOMPOSE: &[Param] = &[
    p("field", Kind::Choice(&["rational", "shifted"]), "rational", "analytic test field"),
    p("radius", Kind::Float, "1", "support radius R of the compact part"),
    p("a", Kind::Float, "6", "decay exponent of the envelope M <x>^-a"),
    p("samples", Kind::Int, "50", "random reconstruction samples"),
    p("sample_radius", Kind::Float, "30", "radius of the sampling ball"),
];

const PICARD: &[Param] = &[
    p("eps", Kind::Float, "1e-2", "data size epsilon"),
    p("eta", Kind::Float, "0.25", "weight exponent eta in (0, 1)"),
    p("preset", Kind::Choice(&["ss", "dss", "custom"]), "ss", "data preset"),
    p("landau_norm", Kind::Float, "1e-2", "custom preset: sup |x||U| of the Landau background"),
    p("swirl", Kind::Float, "1e-2", "custom preset: swirl amplitude"),
    p("modulation", Kind::Float, "0", "custom preset: log-periodic modulation"),
    p("times", Kind::FloatList, "1", "time slices (one slice: self-similar fast path)"),
    p("n_xi", Kind::Int, "12", "nodes in |x| / sqrt t"),
    p("n_theta", Kind::Int, "9", "polar nodes including the poles"),
    p("n_phi", Kind::Int, "1", "azimuthal nodes (1: single meridian)"),
    p("xi_min", Kind::Float, "0.05", "smallest |x| / sqrt t"),
    p("xi_max", Kind::Float, "20", "largest |x| / sqrt t"),
    p("tol", Kind::Float, "1e-7", "fixed-point tolerance"),
    p("max_iter", Kind::Int, "30", "iteration cap"),
];

const FLUX: &[Param] = &[
    p("preset", Kind::Choice(&["landau", "zero"]), "landau", "velocity/pressure pair"),
    p("A", Kind::Float, "2.0", "Landau profile parameter"),
    p("radii", Kind::FloatList, "2,4,8", "sphere radii"),
    p("sphere_theta", Kind::Int, "32", "polar points of the sphere rule"),
    p("sphere_phi", Kind::Int, "64", "azimuthal points of the sphere rule"),
    p("time_nodes", Kind::Int, "1", "trapezoidal time nodes per period"),
    p("period", Kind::Float, "1", "period of the fields"),
];

/// Keys accepted in a config file besides the subcommand parameters.
const GLOBAL_KEYS: [&str; 3] = ["seed", "jobs", "out"];

/// A parsed parameter value.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Float(f64),
    Int(u64),
    Text(String),
    List(Vec<f64>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Float(v) => write!(f, "{v:e}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Text(s) => write!(f, "{s}"),
            Value::List(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

/// Invalid configuration; maps to exit code 2.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(message: impl Into<String>) -> ConfigError {
    ConfigError { message: message.into() }
}

/// What a parse produced: a runnable config, or text to print and exit 0.
#[derive(Debug)]
pub enum Parsed {
    Run(ExperimentConfig),
    Info(String),
}

/// Fully resolved experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub subcommand: Subcommand,
    pub params: BTreeMap<String, Value>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; `None` keeps suites sequential.
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn float(&self, key: &str) -> f64 {
        match self.params.get(key) {
            Some(Value::Float(v)) => *v,
            other => panic!("parameter {key} is not a float: {other:?}"),
        }
    }

    pub fn int(&self, key: &str) -> usize {
        match self.params.get(key) {
            Some(Value::Int(v)) => *v as usize,
            other => panic!("parameter {key} is not an integer: {other:?}"),
        }
    }

    pub fn text(&self, key: &str) -> &str {
        match self.params.get(key) {
            Some(Value::Text(v)) => v,
            other => panic!("parameter {key} is not a choice: {other:?}"),
        }
    }

    pub fn list(&self, key: &str) -> &[f64] {
        match self.params.get(key) {
            Some(Value::List(v)) => v,
            other => panic!("parameter {key} is not a list: {other:?}"),
        }
    }

    /// Parameters as `key -> text` for reports.
    pub fn param_strings(&self) -> BTreeMap<String, String> {
        self.params.iter().map(|(k, v)| (k.clone(), v.to_string())).collect()
    }
}

/// Parses one value of the given kind; errors name the key.
pub fn parse_value(key: &str, kind: Kind, raw: &str) -> Result<Value, ConfigError> {
    let raw = raw.trim();
    let bad = || config_error(format!("invalid value '{raw}' for key '{key}': expected {}", kind.describe()));
    match kind {
        Kind::Float => {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            if v.is_finite() {
                Ok(Value::Float(v))
            } else {
                Err(bad())
            }
        }
        Kind::Int => raw.parse::<u64>().map(Value::Int).map_err(|_| bad()),
        Kind::Choice(choices) => {
            if choices.contains(&raw) {
                Ok(Value::Text(raw.to_string()))
            } else {
                Err(bad())
            }
        }
        Kind::FloatList => {
            let v: Result<Vec<f64>, _> = raw.split(',').map(|s| s.trim().parse::<f64>()).collect();
            match v {
                Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(Value::List(v)),
                _ => Err(bad()),
            }
        }
    }
}

/// Reads a flat `key = value` file; `#` starts a comment.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read config file {}: {e}", path.display())))?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_error(format!("config line {}: expected 'key = value'", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// The clap command tree generated from the parameter tables.
pub fn command() -> Command {
    let mut cmd = Command::new("nsasym")
        .about("Verification suites for exterior Navier-Stokes asymptotics")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(Arg::new("config").long("config").global(true).value_name("FILE").help("flat key = value file; flags override it"))
        .arg(Arg::new("out").long("out").global(true).value_name("DIR").help(format!("output directory (default: ${OUT_ENV} or {DEFAULT_OUT})")))
        .arg(Arg::new("seed").long("seed").global(true).value_name("N").help("seed for random sample points (default 42)"))
        .arg(Arg::new("jobs").long("jobs").global(true).value_name("N").help("worker threads for intra-suite parallelism"));
    for sc in Subcommand::ALL {
        let mut sub = Command::new(sc.name()).about(sc.about());
        for prm in sc.params() {
            sub = sub.arg(
                Arg::new(prm.key)
                    .long(prm.key)
                    .value_name(prm.key)
                    .action(ArgAction::Set)
                    .allow_negative_numbers(true)
                    .help(format!("{} [default: {}]", prm.help, prm.default)),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Parses `argv` (including the program name) into a configuration.
/// `env_out` is the value of [`OUT_ENV`], passed in so parsing stays pure.
pub fn parse_config(argv: &[String], env_out: Option<&str>) -> Result<Parsed, ConfigError> {
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Ok(Parsed::Info(e.to_string())),
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => Err(config_error(e.to_string())),
                _ => Err(config_error(e.to_string())),
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let subcommand = Subcommand::from_name(name).expect("known subcommand");
    resolve(subcommand, &matches, sub, env_out).map(Parsed::Run)
}

fn resolve(sc: Subcommand, top: &ArgMatches, sub: &ArgMatches, env_out: Option<&str>) -> Result<ExperimentConfig, ConfigError> {
    let schema = sc.params();
    let global = |key: &str| -> Option<String> {
        sub.get_one::<String>(key).or_else(|| top.get_one::<String>(key)).cloned()
    };

    let file_entries = match global("config") {
        Some(path) => read_config_file(Path::new(&path))?,
        None => Vec::new(),
    };
    let mut file_values: BTreeMap<String, String> = BTreeMap::new();
    for (k, v) in file_entries {
        let known = schema.iter().any(|p| p.key == k) || GLOBAL_KEYS.contains(&k.as_str());
        if !known {
            let mut valid: Vec<&str> = schema.iter().map(|p| p.key).collect();
            valid.extend(GLOBAL_KEYS);
            return Err(config_error(format!(
                "unknown key '{k}' for {}; valid keys: {}",
                sc.name(),
                valid.join(", ")
            )));
        }
        file_values.insert(k, v);
    }

    let mut params = BTreeMap::new();
    for prm in schema {
        let raw = sub
            .get_one::<String>(prm.key)
            .cloned()
            .or_else(|| file_values.get(prm.key).cloned())
            .unwrap_or_else(|| prm.default.to_string());
        params.insert(prm.key.to_string(), parse_value(prm.key, prm.kind, &raw)?);
    }

    let pick = |key: &str| global(key).or_else(|| file_values.get(key).cloned());
    let seed = match pick("seed") {
        Some(s) => match parse_value("seed", Kind::Int, &s)? {
            Value::Int(v) => v,
            _ => unreachable!(),
        },
        None => 42,
    };
    let jobs = match pick("jobs") {
        Some(s) => match parse_value("jobs", Kind::Int, &s)? {
            Value::Int(0) => return Err(config_error("invalid value '0' for key 'jobs': expected at least 1")),
            Value::Int(v) => Some(v as usize),
            _ => unreachable!(),
        },
        None => None,
    };
    let output_dir = pick("out")
        .or_else(|| env_out.map(str::to_string))
        .unwrap_or_else(|| DEFAULT_OUT.to_string());
    Ok(ExperimentConfig { subcommand: sc, params, output_dir: PathBuf::from(output_dir), seed, jobs })
}
