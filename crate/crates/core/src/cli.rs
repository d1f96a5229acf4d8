//! Command-line front end: configuration, named computations, figure recipes,
//! CSV output and the run manifest.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use rayon::prelude::*;
use thiserror::Error;

use crate::correlators::{default_dtau, span_grid, CorrelationError, CorrelationSeries, Correlator, TWO_TIME_SPAN};
use crate::liouville::{build_liouvillian, spectrum, LiouvilleError, MatrixCheck, StateDiagnostics};
use crate::model::{sig, AtomIndex, ModelParams};
use crate::trajectories::{estimate_g2, mcwf_run, McwfConfig, McwfError, MAX_STEP};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const FIGURES: [&str; 8] = ["fig2", "fig3a", "fig3b", "fig4", "fig5", "fig6", "fig7", "fig8"];

/// Keys accepted in config files; flags use the same names with `--`.
pub const KEYS: [&str; 17] = [
    "omega1",
    "omega2",
    "v12",
    "gamma2",
    "gammaph",
    "theta",
    "t-sep",
    "tau-min",
    "tau-max",
    "dtau",
    "atoms",
    "seed",
    "trajectories",
    "duration",
    "step",
    "bin-width",
    "out",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("no command given (expected one of steady, spectrum, g2, g15, g3, g25, ampratio, figure, trajectories)")]
    MissingCommand,
    #[error("unknown command `{0}`")]
    UnknownCommand(String),
    #[error("unknown figure `{0}` (expected fig2..fig8, fig3a, fig3b)")]
    UnknownFigure(String),
    #[error("{0}")]
    Usage(String),
    /// Help or version text was requested.
    #[error("{0}")]
    Info(String),
    #[error("I/O failure on {path}: {reason}")]
    IoFailure { path: PathBuf, reason: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("state invariants violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownKey(_)
            | CliError::BadValue { .. }
            | CliError::MissingCommand
            | CliError::UnknownCommand(_)
            | CliError::UnknownFigure(_)
            | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Info(_) => EXIT_OK,
            CliError::Numerical(_) | CliError::Invariant(_) => EXIT_INVARIANT,
            CliError::IoFailure { .. } => EXIT_IO,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::IoFailure {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    }
}

impl From<CorrelationError> for CliError {
    fn from(e: CorrelationError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<LiouvilleError> for CliError {
    fn from(e: LiouvilleError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<McwfError> for CliError {
    fn from(e: McwfError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "rydcorr", version, about = "Photon correlations of two interacting three-level ladder atoms")]
struct Args {
    /// steady, spectrum, g2, g15, g3, g25, ampratio, figure or trajectories
    command: Option<String>,
    /// Figure name for the `figure` command (fig2, fig3a, fig3b, fig4 .. fig8)
    figure: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    omega1: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    omega2: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    v12: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    gamma2: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    gammaph: Option<String>,
    /// Quadrature phase in radians
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    /// Separation T between the two counts of three-time correlators
    #[arg(long = "t-sep", allow_hyphen_values = true)]
    t_sep: Option<String>,
    #[arg(long = "tau-min", allow_hyphen_values = true)]
    tau_min: Option<String>,
    #[arg(long = "tau-max", allow_hyphen_values = true)]
    tau_max: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    dtau: Option<String>,
    /// Atom indices, e.g. "1,2,2"
    #[arg(long)]
    atoms: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    trajectories: Option<String>,
    /// Trajectory duration
    #[arg(long, allow_hyphen_values = true)]
    duration: Option<String>,
    /// Trajectory step
    #[arg(long, allow_hyphen_values = true)]
    step: Option<String>,
    /// Delay-bin width for trajectory pair statistics
    #[arg(long = "bin-width", allow_hyphen_values = true)]
    bin_width: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
    /// Flat `key = value` file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Args {
    fn flags(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("omega1", &self.omega1),
            ("omega2", &self.omega2),
            ("v12", &self.v12),
            ("gamma2", &self.gamma2),
            ("gammaph", &self.gammaph),
            ("theta", &self.theta),
            ("t-sep", &self.t_sep),
            ("tau-min", &self.tau_min),
            ("tau-max", &self.tau_max),
            ("dtau", &self.dtau),
            ("atoms", &self.atoms),
            ("seed", &self.seed),
            ("trajectories", &self.trajectories),
            ("duration", &self.duration),
            ("step", &self.step),
            ("bin-width", &self.bin_width),
            ("out", &self.out),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Steady,
    Spectrum,
    G2,
    G15,
    G3,
    G25,
    AmpRatio,
    Figure,
    Trajectories,
}

impl Command {
    fn parse(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "steady" => Command::Steady,
            "spectrum" => Command::Spectrum,
            "g2" => Command::G2,
            "g15" => Command::G15,
            "g3" => Command::G3,
            "g25" => Command::G25,
            "ampratio" => Command::AmpRatio,
            "figure" => Command::Figure,
            "trajectories" => Command::Trajectories,
            other => return Err(CliError::UnknownCommand(other.into())),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Steady => "steady",
            Command::Spectrum => "spectrum",
            Command::G2 => "g2",
            Command::G15 => "g15",
            Command::G3 => "g3",
            Command::G25 => "g25",
            Command::AmpRatio => "ampratio",
            Command::Figure => "figure",
            Command::Trajectories => "trajectories",
        }
    }

    fn default_atoms(self) -> &'static [usize] {
        match self {
            Command::G15 => &[1, 1],
            Command::G3 => &[1, 1, 2],
            Command::G25 | Command::AmpRatio => &[1, 2, 2],
            _ => &[1, 2],
        }
    }

    fn atom_count(self) -> Option<usize> {
        match self {
            Command::G2 | Command::G15 | Command::Trajectories => Some(2),
            Command::G3 | Command::G25 | Command::AmpRatio => Some(3),
            _ => None,
        }
    }
}

/// Fully resolved run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub figure: Option<String>,
    pub params: ModelParams<f64>,
    pub theta: f64,
    pub t_sep: Option<f64>,
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    pub dtau: Option<f64>,
    pub atoms: Vec<AtomIndex>,
    pub seed: u64,
    pub trajectories: usize,
    pub duration: f64,
    pub step: Option<f64>,
    pub bin_width: f64,
    pub out: PathBuf,
}

/// Parses a flat `key = value` document with `#` comments.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| CliError::BadValue {
            key: format!("line {}", n + 1),
            reason: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::UnknownKey(key.into()));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn number(map: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>, CliError> {
    map.get(key)
        .map(|v| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::BadValue {
                    key: key.into(),
                    reason: format!("`{v}` is not a finite number"),
                })
        })
        .transpose()
}

fn positive(map: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>, CliError> {
    match number(map, key)? {
        Some(x) if x <= 0.0 => Err(CliError::BadValue {
            key: key.into(),
            reason: format!("must be positive, got {x}"),
        }),
        other => Ok(other),
    }
}

fn integer<I: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<I>, CliError> {
    map.get(key)
        .map(|v| {
            v.parse::<I>().map_err(|_| CliError::BadValue {
                key: key.into(),
                reason: format!("`{v}` is not a nonnegative integer"),
            })
        })
        .transpose()
}

fn parse_atoms(text: &str) -> Result<Vec<AtomIndex>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .and_then(|n| AtomIndex::try_from(n).ok())
                .ok_or_else(|| CliError::BadValue {
                    key: "atoms".into(),
                    reason: format!("`{}` is not an atom index (1 or 2)", s.trim()),
                })
        })
        .collect()
}

/// Builds a configuration from command-line words; `argv[0]` is the program name.
pub fn parse_config(argv: &[String]) -> Result<RunConfig, CliError> {
    let args = Args::try_parse_from(argv).map_err(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::UnknownArgument => {
                let key = e
                    .get(clap::error::ContextKind::InvalidArg)
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "?".into());
                CliError::UnknownKey(key)
            }
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    })?;
    let mut map = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    for (key, value) in args.flags() {
        if let Some(v) = value {
            map.insert(key.to_string(), v.clone());
        }
    }
    let command = Command::parse(args.command.as_deref().ok_or(CliError::MissingCommand)?)?;
    let figure = match (command, args.figure) {
        (Command::Figure, Some(name)) if FIGURES.contains(&name.as_str()) => Some(name),
        (Command::Figure, Some(name)) => return Err(CliError::UnknownFigure(name)),
        (Command::Figure, None) => return Err(CliError::Usage("`figure` needs a figure name".into())),
        (_, Some(extra)) => return Err(CliError::Usage(format!("unexpected argument `{extra}`"))),
        (_, None) => None,
    };
    resolve(command, figure, &map)
}

fn resolve(command: Command, figure: Option<String>, map: &BTreeMap<String, String>) -> Result<RunConfig, CliError> {
    let defaults = ModelParams::<f64>::reference();
    let get = |key: &str, default: f64| -> Result<f64, CliError> { Ok(number(map, key)?.unwrap_or(default)) };
    let omega1 = get("omega1", defaults.omega1.re)?;
    let omega2 = get("omega2", defaults.omega2.re)?;
    let v12 = get("v12", defaults.v12)?;
    let gamma2 = get("gamma2", defaults.gamma2)?;
    let gamma_ph = get("gammaph", defaults.gamma_ph)?;
    for (key, rate) in [("gamma2", gamma2), ("gammaph", gamma_ph)] {
        if rate < 0.0 {
            return Err(CliError::BadValue {
                key: key.into(),
                reason: format!("rates must be nonnegative, got {rate}"),
            });
        }
    }
    let params = ModelParams::real(omega1, omega2, v12, gamma2, gamma_ph).map_err(|e| CliError::BadValue {
        key: "params".into(),
        reason: e.to_string(),
    })?;

    let atoms = match map.get("atoms") {
        Some(text) => parse_atoms(text)?,
        None => command
            .default_atoms()
            .iter()
            .map(|n| AtomIndex::try_from(*n).expect("valid default"))
            .collect(),
    };
    if let Some(n) = command.atom_count() {
        if atoms.len() != n {
            return Err(CliError::BadValue {
                key: "atoms".into(),
                reason: format!("`{}` needs {n} atom indices, got {}", command.name(), atoms.len()),
            });
        }
    }
    let tau_min = number(map, "tau-min")?;
    let tau_max = number(map, "tau-max")?;
    if let (Some(a), Some(b)) = (tau_min, tau_max) {
        if a >= b {
            return Err(CliError::BadValue {
                key: "tau-max".into(),
                reason: format!("must exceed tau-min ({a} >= {b})"),
            });
        }
    }
    let trajectories = integer::<usize>(map, "trajectories")?.unwrap_or(1000);
    if trajectories == 0 {
        return Err(CliError::BadValue {
            key: "trajectories".into(),
            reason: "must be at least 1".into(),
        });
    }
    Ok(RunConfig {
        command,
        figure,
        params,
        theta: get("theta", FRAC_PI_2)?,
        t_sep: positive(map, "t-sep")?,
        tau_min,
        tau_max,
        dtau: positive(map, "dtau")?,
        atoms,
        seed: integer::<u64>(map, "seed")?.unwrap_or(0),
        trajectories,
        duration: positive(map, "duration")?.unwrap_or(200.0),
        step: positive(map, "step")?,
        bin_width: positive(map, "bin-width")?.unwrap_or(0.1),
        out: PathBuf::from(map.get("out").map(String::as_str).unwrap_or(".")),
    })
}

impl RunConfig {
    pub fn dtau(&self) -> f64 {
        self.dtau.unwrap_or_else(|| default_dtau(&self.params))
    }

    /// `{m·dτ : tau_min ≤ m·dτ ≤ tau_max}`.
    fn anchored_grid(&self, lo: f64, hi: f64) -> Result<Vec<f64>, CliError> {
        let dt = self.dtau();
        let lo = self.tau_min.unwrap_or(lo);
        let hi = self.tau_max.unwrap_or(hi);
        let first = (lo / dt - 1e-9).ceil() as i64;
        let last = (hi / dt + 1e-9).floor() as i64;
        if last < first {
            return Err(CliError::BadValue {
                key: "dtau".into(),
                reason: format!("no grid points in [{lo}, {hi}]"),
            });
        }
        Ok((first..=last).map(|m| m as f64 * dt).collect())
    }

    fn three_time_grid(&self, t: f64) -> Result<Vec<f64>, CliError> {
        let lo = self.tau_min.unwrap_or(0.0);
        let hi = self.tau_max.unwrap_or(t);
        if lo < 0.0 || hi > t {
            return Err(CliError::BadValue {
                key: "tau-max".into(),
                reason: format!("three-time grids must lie in [0, T = {t}]"),
            });
        }
        Ok(span_grid(lo, hi, self.dtau()))
    }

    fn param_echo(&self) -> String {
        params_text(&self.params)
    }
}

/// One output file's worth of data.
#[derive(Debug, Clone)]
pub struct Output {
    pub file: String,
    pub series: CorrelationSeries<f64>,
    pub params: ModelParams<f64>,
}

fn params_text(p: &ModelParams<f64>) -> String {
    format!(
        "omega1={};omega2={};v12={};gamma2={};gammaph={}",
        p.omega1.re, p.omega2.re, p.v12, p.gamma2, p.gamma_ph
    )
}

fn opt_text(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), |v| format!("{v}"))
}

/// CSV text: a `#` header line, a column line, then `tau,value` rows in
/// scientific notation with twelve digits after the point.
pub fn csv_text(series: &CorrelationSeries<f64>, params: &ModelParams<f64>) -> Result<String, CliError> {
    if series.is_empty() || series.values.len() != series.tau.len() {
        return Err(CliError::Numerical("refusing to write an empty or ragged series".into()));
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# kind={}, atoms={}, theta={}, T={}, params={}",
        series.kind,
        series.atoms_label(),
        opt_text(series.theta),
        opt_text(series.t_sep),
        params_text(params)
    );
    match &series.std_errors {
        None => {
            s.push_str("tau,value\n");
            for (t, v) in series.tau.iter().zip(&series.values) {
                let _ = writeln!(s, "{t:.12e},{v:.12e}");
            }
        }
        Some(errors) => {
            s.push_str("tau,value,std_error\n");
            for ((t, v), e) in series.tau.iter().zip(&series.values).zip(errors) {
                let _ = writeln!(s, "{t:.12e},{v:.12e},{e:.12e}");
            }
        }
    }
    Ok(s)
}

pub fn write_csv(series: &CorrelationSeries<f64>, params: &ModelParams<f64>, path: &Path) -> Result<(), CliError> {
    let text = csv_text(series, params)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Header line and numeric rows of a CSV written by [`write_csv`].
pub fn parse_csv(text: &str) -> Result<(String, Vec<Vec<f64>>), CliError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").to_string();
    let _columns = lines.next();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|x| {
                    x.parse::<f64>().map_err(|_| CliError::BadValue {
                        key: "csv".into(),
                        reason: format!("`{x}` is not a number"),
                    })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

/// What a run produced, before it is written out.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub outputs: Vec<Output>,
    /// Extra files as (name, contents).
    pub extra_files: Vec<(String, String)>,
    pub diagnostics: StateDiagnostics,
    /// Additional manifest lines.
    pub notes: Vec<(String, String)>,
    pub grid: Vec<(String, String)>,
}

impl RunReport {
    fn push(&mut self, file: String, series: CorrelationSeries<f64>, params: ModelParams<f64>) {
        self.diagnostics.merge(&series.diagnostics);
        self.outputs.push(Output { file, series, params });
    }
}

fn label(atoms: &[AtomIndex]) -> String {
    atoms.iter().map(|a| a.number().to_string()).collect()
}

fn grid_notes(report: &mut RunReport, grid: &[f64]) {
    report.grid.push(("grid.tau_min".into(), format!("{:e}", grid[0])));
    report.grid.push(("grid.tau_max".into(), format!("{:e}", grid[grid.len() - 1])));
    report.grid.push(("grid.points".into(), grid.len().to_string()));
}

/// Runs the configured computation without touching the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let mut report = RunReport::default();
    report.grid.push(("grid.dtau".into(), format!("{:e}", cfg.dtau())));
    let a = &cfg.atoms;
    match cfg.command {
        Command::Steady => steady_report(cfg, &mut report)?,
        Command::Spectrum => spectrum_report(cfg, &mut report)?,
        Command::G2 => {
            let grid = cfg.anchored_grid(0.0, TWO_TIME_SPAN)?;
            grid_notes(&mut report, &grid);
            let s = Correlator::new(&cfg.params)?.g2(a[0], a[1], &grid)?;
            report.push(format!("g2_{}.csv", label(a)), s, cfg.params);
        }
        Command::G15 => {
            let grid = cfg.anchored_grid(-TWO_TIME_SPAN, TWO_TIME_SPAN)?;
            grid_notes(&mut report, &grid);
            let s = Correlator::new(&cfg.params)?.g15(a[0], a[1], cfg.theta, &grid)?;
            report.push(format!("g15_{}.csv", label(a)), s, cfg.params);
        }
        Command::G3 | Command::G25 => {
            let t = cfg.t_sep.unwrap_or(5.0);
            let grid = cfg.three_time_grid(t)?;
            grid_notes(&mut report, &grid);
            report.grid.push(("grid.t_sep".into(), format!("{t:e}")));
            let c = Correlator::new(&cfg.params)?;
            let (name, s) = if cfg.command == Command::G3 {
                ("g3", c.g3(a[0], a[1], a[2], &grid, t)?)
            } else {
                ("g25", c.g25(a[0], a[1], a[2], cfg.theta, &grid, t)?)
            };
            report.push(format!("{name}_{}.csv", label(a)), s, cfg.params);
        }
        Command::AmpRatio => {
            let t_grid = ampratio_grid(cfg)?;
            grid_notes(&mut report, &t_grid);
            let w = cfg.params.rabi_period();
            report.grid.push(("grid.window_half_width".into(), format!("{w:e}")));
            let [hi, lo, mean] = Correlator::new(&cfg.params)?.amplitude_ratio(a[0], a[1], a[2], cfg.theta, &t_grid, w)?;
            for (name, s) in [("max", hi), ("min", lo), ("mean", mean)] {
                report.push(format!("ampratio_{}_{name}.csv", label(a)), s, cfg.params);
            }
        }
        Command::Figure => figure_report(cfg, &mut report)?,
        Command::Trajectories => trajectories_report(cfg, &mut report)?,
    }
    Ok(report)
}

fn ampratio_grid(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let lo = cfg.tau_min.unwrap_or(5.0);
    let hi = cfg.tau_max.unwrap_or(20.0);
    if lo <= 0.0 {
        return Err(CliError::BadValue {
            key: "tau-min".into(),
            reason: "separations must be positive".into(),
        });
    }
    Ok(span_grid(lo, hi, cfg.dtau()))
}

fn steady_report(cfg: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    let c = Correlator::new(&cfg.params)?;
    let rho = c.steady();
    report.diagnostics.record(MatrixCheck::of(rho.matrix()));
    let mut text = format!("# kind=steady, params={}\nquantity,value\n", params_text(&cfg.params));
    for atom in AtomIndex::BOTH {
        for level in 1..=3 {
            let v = rho.expect(&sig(atom, level, level)).re;
            let _ = writeln!(text, "population{level}_atom{atom},{v:.12e}");
        }
        let z = c.coherence(atom);
        let _ = writeln!(text, "coherence21_atom{atom}_re,{:.12e}", z.re);
        let _ = writeln!(text, "coherence21_atom{atom}_im,{:.12e}", z.im);
    }
    let both = rho.matrix()[(8, 8)].re;
    let _ = writeln!(text, "population33_pair,{both:.12e}");
    report.extra_files.push(("steady.csv".into(), text));
    Ok(())
}

fn spectrum_report(cfg: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    let l = build_liouvillian(&cfg.params);
    let s = spectrum(&l)?;
    report.diagnostics.record(MatrixCheck::of(&s.right_modes[0]));
    let mut text = format!("# kind=spectrum, params={}\nre,im\n", params_text(&cfg.params));
    for z in &s.eigenvalues {
        let _ = writeln!(text, "{:.12e},{:.12e}", z.re, z.im);
    }
    report.notes.push(("spectrum.zero_modes".into(), s.zero_mode_count(1e-10).to_string()));
    report.notes.push(("spectrum.max_real_part".into(), format!("{:e}", s.max_real_part())));
    report.extra_files.push(("spectrum.csv".into(), text));
    Ok(())
}

fn trajectories_report(cfg: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    let step = cfg.step.unwrap_or(MAX_STEP / cfg.params.rabi().max(1.0));
    let mut mc = McwfConfig::new(cfg.trajectories, cfg.duration, step, cfg.seed);
    mc.sample_interval = 1.0;
    let batch = mcwf_run(&cfg.params, &mc)?;
    let mut clicks = Vec::new();
    batch
        .write_clicks(&mut clicks)
        .map_err(|e| CliError::io(Path::new("clicks.csv"), e))?;
    report
        .extra_files
        .push(("clicks.csv".into(), String::from_utf8(clicks).expect("ascii")));
    report.notes.push(("mcwf.trajectories".into(), batch.count.to_string()));
    report.notes.push(("mcwf.duration".into(), format!("{:e}", batch.duration)));
    report.notes.push(("mcwf.step".into(), format!("{:e}", batch.step)));
    let c = Correlator::new(&cfg.params)?;
    for atom in AtomIndex::BOTH {
        let pop = batch.population(atom);
        report.notes.push((format!("mcwf.population22_atom{atom}"), format!("{:e}", pop.mean)));
        report
            .notes
            .push((format!("mcwf.population22_atom{atom}.std_error"), format!("{:e}", pop.std_error)));
        report
            .notes
            .push((format!("master.population22_atom{atom}"), format!("{:e}", c.population(atom))));
        report.notes.push((format!("mcwf.clicks_atom{atom}"), batch.total_clicks(atom).to_string()));
    }
    let grid = cfg.anchored_grid(0.0, 2.0)?;
    let grid: Vec<f64> = grid.into_iter().filter(|t| *t >= 0.0).collect();
    let (i, j) = (cfg.atoms[0], cfg.atoms[1]);
    match estimate_g2(&batch, i, j, &grid, cfg.bin_width) {
        Ok(s) => report.push(format!("mcwf_g2_{}.csv", label(&cfg.atoms)), s, cfg.params),
        Err(McwfError::InsufficientStatistics { tau, expected }) => {
            report.notes.push((
                "mcwf.g2".into(),
                format!("insufficient statistics (bin at {tau:e} expects {expected:e} pairs)"),
            ));
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

/// Figure recipes: fixed panel values on top of the configured parameters.
fn figure_report(cfg: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    use AtomIndex::{One, Two};
    let name = cfg.figure.as_deref().expect("figure name");
    let base = cfg.params;
    let theta = cfg.theta;
    let dt = cfg.dtau();
    let panels_v = [0.0, 0.5, 1.0];
    let anchored = |lo: f64, hi: f64| cfg.anchored_grid(lo, hi);
    let outputs: Vec<Output> = match name {
        "fig2" => {
            let grid = anchored(0.0, TWO_TIME_SPAN)?;
            grid_notes(report, &grid);
            vec![Output {
                file: "fig2_g2_12.csv".into(),
                series: Correlator::new(&base)?.g2(One, Two, &grid)?,
                params: base,
            }]
        }
        "fig3a" | "fig3b" => {
            let grid = anchored(-TWO_TIME_SPAN, TWO_TIME_SPAN)?;
            grid_notes(report, &grid);
            let j = if name == "fig3a" { One } else { Two };
            panels_v
                .par_iter()
                .map(|v| {
                    let p = base.with_v12(*v);
                    Ok(Output {
                        file: format!("{name}_g15_1{}_v{v}.csv", j.number()),
                        series: Correlator::new(&p)?.g15(One, j, theta, &grid)?,
                        params: p,
                    })
                })
                .collect::<Result<_, CliError>>()?
        }
        "fig4" | "fig5" | "fig6" | "fig7" => {
            let j = if matches!(name, "fig4" | "fig6") { One } else { Two };
            let three = matches!(name, "fig4" | "fig5");
            let ts: [f64; 3] = if three { [5.0, 10.0, 15.0] } else { [5.0, 10.0, 20.0] };
            report.grid.push((
                "grid.t_values".into(),
                ts.iter().map(|t| format!("{t}")).collect::<Vec<_>>().join(","),
            ));
            let c = Correlator::new(&base)?;
            ts.par_iter()
                .map(|t| {
                    let grid = span_grid(0.0, *t, dt);
                    let (kind, series) = if three {
                        ("g3", c.g3(One, j, Two, &grid, *t)?)
                    } else {
                        ("g25", c.g25(One, j, Two, theta, &grid, *t)?)
                    };
                    Ok(Output {
                        file: format!("{name}_{kind}_1{}2_T{t}.csv", j.number()),
                        series,
                        params: base,
                    })
                })
                .collect::<Result<_, CliError>>()?
        }
        "fig8" => {
            let t_grid = ampratio_grid(cfg)?;
            grid_notes(report, &t_grid);
            let w = base.rabi_period();
            report.grid.push(("grid.window_half_width".into(), format!("{w:e}")));
            let [hi, lo, mean] = Correlator::new(&base)?.amplitude_ratio(One, Two, Two, theta, &t_grid, w)?;
            [("max", hi), ("min", lo), ("mean", mean)]
                .into_iter()
                .map(|(n, series)| Output {
                    file: format!("fig8_ampratio_122_{n}.csv"),
                    series,
                    params: base,
                })
                .collect()
        }
        other => return Err(CliError::UnknownFigure(other.into())),
    };
    for o in outputs {
        report.push(o.file, o.series, o.params);
    }
    Ok(())
}

/// Flat `key=value` manifest. The wall time sits alone on the last line.
pub fn manifest_text(cfg: &RunConfig, report: &RunReport, wall_seconds: f64) -> String {
    let d = &report.diagnostics;
    let verdict = |ok: bool| if ok { "pass" } else { "fail" };
    let mut s = String::new();
    let _ = writeln!(s, "tool=rydcorr");
    let _ = writeln!(s, "version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "command={}", cfg.command.name());
    if let Some(f) = &cfg.figure {
        let _ = writeln!(s, "figure={f}");
    }
    let _ = writeln!(s, "params={}", cfg.param_echo());
    let _ = writeln!(s, "theta={}", cfg.theta);
    let _ = writeln!(s, "atoms={}", label(&cfg.atoms));
    let _ = writeln!(s, "seed={}", cfg.seed);
    for (k, v) in &report.grid {
        let _ = writeln!(s, "{k}={v}");
    }
    let files: Vec<&str> = report
        .outputs
        .iter()
        .map(|o| o.file.as_str())
        .chain(report.extra_files.iter().map(|(n, _)| n.as_str()))
        .collect();
    let _ = writeln!(s, "files={}", files.join(","));
    for (k, v) in &report.notes {
        let _ = writeln!(s, "{k}={v}");
    }
    let _ = writeln!(s, "invariant.states_checked={}", d.checked);
    let _ = writeln!(s, "invariant.trace.max_deviation={:e}", d.max_trace_deviation);
    let _ = writeln!(s, "invariant.trace={}", verdict(d.trace_ok()));
    let _ = writeln!(s, "invariant.hermiticity.max_residue={:e}", d.max_hermiticity);
    let _ = writeln!(s, "invariant.hermiticity={}", verdict(d.hermiticity_ok()));
    let min = if d.checked == 0 { 0.0 } else { d.min_eigenvalue };
    let _ = writeln!(s, "invariant.positivity.min_eigenvalue={min:e}");
    let _ = writeln!(s, "invariant.positivity={}", verdict(d.positivity_ok()));
    let _ = writeln!(s, "status={}", if d.passes() { "ok" } else { "invariant_failure" });
    let _ = writeln!(s, "wall_time_seconds={wall_seconds:.3}");
    s
}

/// Runs a configuration and writes its files and manifest into `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let started = Instant::now();
    let report = execute(cfg)?;
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    for o in &report.outputs {
        write_csv(&o.series, &o.params, &cfg.out.join(&o.file))?;
    }
    for (name, text) in &report.extra_files {
        let path = cfg.out.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    let manifest = cfg.out.join("manifest.txt");
    let text = manifest_text(cfg, &report, started.elapsed().as_secs_f64());
    fs::write(&manifest, text).map_err(|e| CliError::io(&manifest, e))?;
    if !report.diagnostics.passes() {
        return Err(CliError::Invariant(format!("{:?}", report.diagnostics)));
    }
    Ok(report)
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with(argv: &[String]) -> i32 {
    let cfg = match parse_config(argv) {
        Ok(cfg) => cfg,
        Err(CliError::Info(text)) => {
            print!("{text}");
            return EXIT_OK;
        }
        Err(e) => {
            eprintln!("rydcorr: {e}");
            return e.exit_code();
        }
    };
    match run(&cfg) {
        Ok(report) => {
            for o in &report.outputs {
                println!("{}", cfg.out.join(&o.file).display());
            }
            for (name, _) in &report.extra_files {
                println!("{}", cfg.out.join(name).display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("rydcorr: {e}");
            e.exit_code()
        }
    }
}
