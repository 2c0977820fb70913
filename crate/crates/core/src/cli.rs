//! Command-line front end.
//!
//! Every command writes one CSV or JSON document (stdout, or atomically to
//! `--out`) and encodes its verdict in the exit status: 0 pass, 1 fail or
//! runtime error, 2 usage error. CSV documents start with
//! `# schema_version=1`; blocks are separated by two blank lines and
//! introduced by a `# <name>` comment, so gnuplot can address them by index.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;

use crate::embedding::{
    build_pair, build_probe, discretize_kh, doubler_packet, fine_grid_for, resolvent_gap_on_probe, CompositeGapMap,
    PairKind, Probe,
};
use crate::criteria::{run_criterion, CriterionReport, CRITERIA};
use crate::error::DiracError;
use crate::lattice::{free_resolvent, operator_norm_estimate, snapshot, PeriodicLattice};
use crate::linalg::SymbolMatrix;
use crate::potential::{
    perturbed_convergence_sweep, perturbed_resolvent_with, sample_potential, theta_prime, HolderPotential,
    PerturbedRecord, PotentialInfo, SweepSetup,
};
use crate::symbol_analysis::{
    convergence_sweep, default_grid_n, fit_loglog, fit_rate, nonconvergence_witness, symbol_zero_census, RateFit,
    WitnessReport, DEFAULT_ZERO_TOL,
};
use crate::symbols::{dirac_matrices, pauli, Dimension, ModelId, ModelKind};

pub const SCHEMA_VERSION: &str = "1";
pub const THREADS_ENV: &str = "DIRAC_LATTICE_THREADS";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Slack allowed below a witness closed form.
pub const WITNESS_TOLERANCE: f64 = 1e-9;

/// Failure classes that map onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(DiracError),
}

impl From<DiracError> for CliError {
    fn from(e: DiracError) -> Self {
        match e {
            DiracError::InvalidArgument(_)
            | DiracError::UnsupportedModel(_)
            | DiracError::UnsupportedPair(_)
            | DiracError::Precondition(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(DiracError::from(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Parser)]
#[command(name = "dirac-lattice", version, about = "Lattice Dirac operators: resolvent convergence experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Symbol-level sup-norm resolvent differences against the continuum, with a rate fit.
    SymbolSweep(SymbolSweepArgs),
    /// Closed-form non-convergence witnesses for pairs of lattice models.
    Witness(WitnessArgs),
    /// Zero census of massless lattice symbols.
    Doubling(DoublingArgs),
    /// Probe-level resolvent gaps through the embedding and discretization operators.
    OperatorGap(OperatorGapArgs),
    /// Perturbed resolvent gaps with a Hölder potential.
    PotentialGap(PotentialGapArgs),
    /// Runs one acceptance criterion (or all) and reports every check.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Criterion number 1 to 10, or `all`.
    #[arg(long)]
    pub criterion: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output file (written atomically); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SymbolSweepArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub d: u8,
    #[arg(long)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 0.0)]
    pub m: f64,
    /// Comma-separated spectral shifts, e.g. `i,2i,1+i`.
    #[arg(long, default_value = "i")]
    pub z: String,
    /// Mesh sizes: `1/16..1/256` (halving) or a comma list.
    #[arg(long, default_value = "1/16..1/256")]
    pub h: String,
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Fail unless every fitted slope lies in `MIN,MAX`.
    #[arg(long)]
    pub expect_slope: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct WitnessArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub d: u8,
    /// Model pair, e.g. `fb,s`.
    #[arg(long)]
    pub pair: String,
    #[arg(long, default_value_t = 0.0)]
    pub m: f64,
    #[arg(long, default_value = "1..1/256")]
    pub h: String,
    #[arg(long)]
    pub grid_n: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DoublingArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub d: u8,
    #[arg(long, default_value = "s,s_mod")]
    pub models: String,
    #[arg(long, default_value_t = 0.0)]
    pub m: f64,
    #[arg(long, default_value = "1")]
    pub h: String,
    #[arg(long)]
    pub grid_n: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ZERO_TOL)]
    pub tol: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct OperatorGapArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub d: u8,
    #[arg(long)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 0.0)]
    pub m: f64,
    #[arg(long, default_value = "smooth")]
    pub pair: PairKind,
    #[arg(long, default_value = "i")]
    pub z: String,
    #[arg(long, default_value = "1/8..1/64")]
    pub h: String,
    /// Lattice points per axis (default 256 for d ≤ 2, 16 for d = 3).
    #[arg(long)]
    pub n: Option<usize>,
    /// Fine-grid refinement (default 8 for d ≤ 2, 4 for d = 3).
    #[arg(long)]
    pub refinement: Option<usize>,
    /// Comma-separated probes; `doubler` adds a packet at a spurious zero.
    #[arg(long, default_value = "gaussian,small_packet,medium_packet,zone_edge_packet,random_band_limited")]
    pub probes: String,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Also estimate `‖J_h R_h K_h − R_0‖` by power iteration.
    #[arg(long)]
    pub composite_norm: bool,
    #[arg(long, default_value_t = 32)]
    pub norm_n: usize,
    #[arg(long, default_value_t = 4)]
    pub norm_refinement: usize,
    #[arg(long, default_value_t = 60)]
    pub norm_iters: usize,
    #[arg(long)]
    pub expect_l2_slope: Option<String>,
    #[arg(long)]
    pub expect_h1_slope: Option<String>,
    /// Fail unless every composite norm is at least this value.
    #[arg(long)]
    pub expect_floor: Option<f64>,
    /// Directory for DLAT1 snapshots of `K_h f` and `(H_{0,h} − z)^{-1} K_h f`.
    #[arg(long)]
    pub save_fields: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PotentialGapArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3), default_value_t = 1)]
    pub d: u8,
    #[arg(long, default_value = "fb")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 0.0)]
    pub m: f64,
    /// One of zero, constant, tanh, cusp.
    #[arg(long, default_value = "tanh")]
    pub potential: String,
    #[arg(long, default_value_t = 0.5)]
    pub amplitude: f64,
    /// sigma1..3 (d ≤ 2), beta or alpha1..3 (d = 3), or identity.
    #[arg(long, default_value = "sigma1")]
    pub coefficient: String,
    /// Hölder exponent of the cusp profile.
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value_t = 4.0)]
    pub radius: f64,
    #[arg(long, default_value = "smooth")]
    pub pair: PairKind,
    #[arg(long, default_value = "2i")]
    pub z: String,
    #[arg(long, default_value = "1/4..1/64")]
    pub h: String,
    #[arg(long = "box", default_value_t = 32.0)]
    pub box_side: f64,
    #[arg(long, default_value_t = 4)]
    pub refinement: usize,
    #[arg(long, default_value = "gaussian,small_packet")]
    pub probes: String,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Directory for DLAT1 snapshots of the lattice solutions.
    #[arg(long)]
    pub save_fields: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

/// Parses and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    match execute(&cli.command) {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAIL
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got '{raw}'"))?;
    // A global pool may already exist when embedded in a larger program.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one command and writes its document; `Ok(pass)`.
pub fn execute(command: &Command) -> CliResult<bool> {
    let (doc, pass, out) = match command {
        Command::SymbolSweep(a) => {
            let (doc, pass) = cmd_symbol_sweep(a)?;
            (doc, pass, &a.common.out)
        }
        Command::Witness(a) => {
            let (doc, pass) = cmd_witness(a)?;
            (doc, pass, &a.common.out)
        }
        Command::Doubling(a) => {
            let (doc, pass) = cmd_doubling(a)?;
            (doc, pass, &a.common.out)
        }
        Command::OperatorGap(a) => {
            let (doc, pass) = cmd_operator_gap(a)?;
            (doc, pass, &a.common.out)
        }
        Command::PotentialGap(a) => {
            let (doc, pass) = cmd_potential_gap(a)?;
            (doc, pass, &a.common.out)
        }
        Command::Verify(a) => {
            let (doc, pass) = cmd_verify(a)?;
            (doc, pass, &a.common.out)
        }
    };
    match out {
        Some(path) => write_atomic(path, doc.as_bytes())?,
        None => print!("{doc}"),
    }
    Ok(pass)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

// ---------------------------------------------------------------- parsing

fn parse_dyadic(s: &str) -> CliResult<(f64, u32)> {
    let s = s.trim();
    if s == "1" {
        return Ok((1.0, 0));
    }
    if let Some(den) = s.strip_prefix("1/") {
        if let Ok(den) = den.trim().parse::<u64>() {
            if den.is_power_of_two() {
                let k = den.trailing_zeros();
                return Ok((1.0 / den as f64, k));
            }
        }
        if let Some(exp) = den.trim().strip_prefix("2^") {
            if let Ok(k) = exp.parse::<u32>() {
                if k < 63 {
                    return Ok((2f64.powi(-(k as i32)), k));
                }
            }
        }
    }
    usage(format!("'{s}' is not a dyadic mesh size 1/2^k"))
}

fn parse_h_value(s: &str) -> CliResult<f64> {
    let s = s.trim();
    if let Ok((h, _)) = parse_dyadic(s) {
        return Ok(h);
    }
    if let Some((num, den)) = s.split_once('/') {
        let (num, den): (f64, f64) = match (num.trim().parse(), den.trim().parse()) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return usage(format!("bad mesh size '{s}'")),
        };
        return Ok(num / den);
    }
    s.parse::<f64>().or_else(|_| usage(format!("bad mesh size '{s}'")))
}

/// `1/16..1/256` (dyadic, halving) or a comma list such as `1/8,1/16,0.03125`.
/// The result is strictly decreasing with values in `(0, 1]`.
pub fn parse_h_list(s: &str) -> CliResult<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return usage("h list is empty");
    }
    let list = if let Some((a, b)) = s.split_once("..") {
        let ((_, ka), (_, kb)) = (parse_dyadic(a)?, parse_dyadic(b)?);
        if kb < ka {
            return usage(format!("h range '{s}' must run from coarse to fine"));
        }
        (ka..=kb).map(|k| 2f64.powi(-(k as i32))).collect()
    } else {
        s.split(',').map(parse_h_value)
            .collect::<CliResult<Vec<f64>>>()?
    };
    if list.is_empty() {
        return usage("h list is empty");
    }
    if list.iter().any(|&h| !(h > 0.0 && h <= 1.0)) {
        return usage("mesh sizes must lie in (0, 1]");
    }
    if list.windows(2).any(|w| w[1] >= w[0]) {
        return usage("h list must be strictly decreasing");
    }
    Ok(list)
}

/// `i`, `2i`, `-i`, `1+i`, `1-0.5i`, `0.5`, `-2.5i`.
pub fn parse_z(s: &str) -> CliResult<Complex64> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || CliError::Usage(format!("bad complex shift '{s}'"));
    if t.is_empty() {
        return Err(bad());
    }
    let Some(body) = t.strip_suffix('i') else {
        return t
            .parse::<f64>()
            .ok()
            .filter(|re| re.is_finite())
            .map(|re| Complex64::new(re, 0.0))
            .ok_or_else(bad);
    };
    // Split at the last sign that is not the leading one or part of an exponent.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(k) => (&body[..k], &body[k..]),
        None => ("", body),
    };
    let re = if re.is_empty() { 0.0 } else { re.parse::<f64>().map_err(|_| bad())? };
    let im = match im {
        "" | "+" => 1.0,
        "-" => -1.0,
        other => other.parse::<f64>().map_err(|_| bad())?,
    };
    if !(re.is_finite() && im.is_finite()) {
        return Err(bad());
    }
    Ok(Complex64::new(re, im))
}

pub fn parse_z_list(s: &str) -> CliResult<Vec<Complex64>> {
    let list: Vec<Complex64> = s.split(',').filter(|t| !t.trim().is_empty()).map(parse_z).collect::<CliResult<_>>()?;
    if list.is_empty() {
        return usage("z list is empty");
    }
    Ok(list)
}

fn parse_range(s: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if let [a, b] = parts.as_slice() {
        if let (Ok(lo), Ok(hi)) = (a.parse::<f64>(), b.parse::<f64>()) {
            if lo <= hi {
                return Ok((lo, hi));
            }
        }
    }
    usage(format!("expected 'MIN,MAX', got '{s}'"))
}

fn parse_kinds(s: &str) -> CliResult<Vec<ModelKind>> {
    let kinds: Vec<ModelKind> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<ModelKind>().map_err(CliError::from))
        .collect::<CliResult<_>>()?;
    if kinds.is_empty() {
        return usage("model list is empty");
    }
    Ok(kinds)
}

/// A requested probe: one of the library probes or the model's doubler packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeChoice {
    Library(Probe),
    Doubler,
}

impl ProbeChoice {
    fn name(self) -> &'static str {
        match self {
            ProbeChoice::Library(p) => p.as_str(),
            ProbeChoice::Doubler => "doubler",
        }
    }
}

pub fn parse_probes(s: &str) -> CliResult<Vec<ProbeChoice>> {
    let list: Vec<ProbeChoice> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            if t == "doubler" {
                Ok(ProbeChoice::Doubler)
            } else {
                t.parse::<Probe>().map(ProbeChoice::Library).map_err(CliError::from)
            }
        })
        .collect::<CliResult<_>>()?;
    if list.is_empty() {
        return usage("probe list is empty");
    }
    Ok(list)
}

fn dimension(d: u8) -> CliResult<Dimension> {
    Ok(Dimension::from_d(d as usize)?)
}

fn discrete_kind(kind: ModelKind) -> CliResult<ModelKind> {
    if !kind.is_discrete() {
        return usage("this command needs a lattice model (fb, s, fb_mod or s_mod)");
    }
    Ok(kind)
}

/// Rejects real shifts inside the spectrum `(−∞, −|m|] ∪ [|m|, ∞)`.
fn check_shifts(zs: &[Complex64], m: f64) -> CliResult<()> {
    for z in zs {
        if z.im == 0.0 && z.re.abs() >= m.abs() {
            return usage(format!("z = {z} lies in the spectrum; use a non-real z or one in (-|m|, |m|)"));
        }
    }
    Ok(())
}

fn coefficient_matrix(name: &str, dim: Dimension) -> CliResult<SymbolMatrix> {
    let nu = dim.nu();
    let (alphas, beta) = dirac_matrices();
    let m = match (name, nu) {
        ("identity", _) => SymbolMatrix::identity(nu),
        ("sigma1", 2) => pauli(1)?,
        ("sigma2", 2) => pauli(2)?,
        ("sigma3", 2) => pauli(3)?,
        ("beta", 4) => beta,
        ("alpha1", 4) => alphas[0],
        ("alpha2", 4) => alphas[1],
        ("alpha3", 4) => alphas[2],
        _ => return usage(format!("coefficient '{name}' is not available in d = {}", dim.d())),
    };
    Ok(m)
}

// ---------------------------------------------------------------- output

fn csv_block<R: Serialize>(doc: &mut String, name: Option<&str>, rows: &[R]) -> CliResult<()> {
    if let Some(name) = name {
        doc.push_str("\n\n");
        let _ = writeln!(doc, "# {name}");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Runtime(DiracError::Format(e.to_string())))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(DiracError::Format(e.to_string())))?;
    doc.push_str(&String::from_utf8(bytes).expect("csv output is UTF-8"));
    Ok(())
}

fn csv_header() -> String {
    format!("# schema_version={SCHEMA_VERSION}\n")
}

fn json_doc<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(DiracError::Format(e.to_string())))?;
    s.push('\n');
    Ok(s)
}

fn within(value: f64, range: Option<(f64, f64)>) -> bool {
    range.is_none_or(|(lo, hi)| value >= lo && value <= hi)
}

// ---------------------------------------------------------------- symbol-sweep

#[derive(Serialize)]
struct SweepRow<'a> {
    model: &'a str,
    d: usize,
    m: f64,
    z_re: f64,
    z_im: f64,
    h: f64,
    sup_diff: f64,
    xi_argmax_1: f64,
    xi_argmax_2: Option<f64>,
    xi_argmax_3: Option<f64>,
    grid_n: usize,
}

#[derive(Serialize)]
struct SweepFitRow<'a> {
    model: &'a str,
    d: usize,
    m: f64,
    z_re: f64,
    z_im: f64,
    slope: f64,
    intercept: f64,
    r_squared: f64,
    points_used: usize,
}

pub fn cmd_symbol_sweep(a: &SymbolSweepArgs) -> CliResult<(String, bool)> {
    let dim = dimension(a.d)?;
    let kind = discrete_kind(a.model)?;
    let hs = parse_h_list(&a.h)?;
    let zs = parse_z_list(&a.z)?;
    check_shifts(&zs, a.m)?;
    let expect = a.expect_slope.as_deref().map(parse_range).transpose()?;
    let grid_n = a.grid_n.unwrap_or_else(|| default_grid_n(dim));
    let family = ModelId::discrete(kind, dim, a.m, hs[0])?;
    let name = kind.as_str();
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut pass = true;
    for &z in &zs {
        let records = convergence_sweep(&family, z, &hs, grid_n)?;
        for r in &records {
            rows.push(SweepRow {
                model: name,
                d: dim.d(),
                m: a.m,
                z_re: z.re,
                z_im: z.im,
                h: r.h,
                sup_diff: r.value,
                xi_argmax_1: r.xi_argmax[0],
                xi_argmax_2: r.xi_argmax.get(1).copied(),
                xi_argmax_3: r.xi_argmax.get(2).copied(),
                grid_n: r.grid_n,
            });
        }
        match fit_rate(&records) {
            Ok(fit) => {
                pass &= within(fit.slope, expect);
                fits.push(SweepFitRow {
                    model: name,
                    d: dim.d(),
                    m: a.m,
                    z_re: z.re,
                    z_im: z.im,
                    slope: fit.slope,
                    intercept: fit.intercept,
                    r_squared: fit.r_squared,
                    points_used: fit.points_used,
                });
            }
            Err(DiracError::DegenerateData(_)) => pass &= expect.is_none(),
            Err(e) => return Err(e.into()),
        }
    }
    let mut doc = csv_header();
    csv_block(&mut doc, None, &rows)?;
    csv_block(&mut doc, Some("fit"), &fits)?;
    Ok((doc, pass))
}

// ---------------------------------------------------------------- witness

#[derive(Serialize)]
struct WitnessDoc {
    schema_version: &'static str,
    command: &'static str,
    tolerance: f64,
    reports: Vec<WitnessReport>,
    pass: bool,
}

pub fn cmd_witness(a: &WitnessArgs) -> CliResult<(String, bool)> {
    let dim = dimension(a.d)?;
    let kinds = parse_kinds(&a.pair)?;
    let [ka, kb] = kinds.as_slice() else {
        return usage("--pair takes exactly two models, e.g. fb,s");
    };
    let hs = parse_h_list(&a.h)?;
    let grid_n = a.grid_n.unwrap_or_else(|| default_grid_n(dim));
    let mut reports = Vec::new();
    for &h in &hs {
        let ma = ModelId::discrete(discrete_kind(*ka)?, dim, a.m, h)?;
        let mb = ModelId::discrete(discrete_kind(*kb)?, dim, a.m, h)?;
        reports.push(nonconvergence_witness(&ma, &mb, grid_n)?);
    }
    let pass = reports.iter().all(|r| r.measured >= r.closed_form - WITNESS_TOLERANCE);
    let doc = WitnessDoc {
        schema_version: SCHEMA_VERSION,
        command: "witness",
        tolerance: WITNESS_TOLERANCE,
        reports,
        pass,
    };
    Ok((json_doc(&doc)?, pass))
}

// ---------------------------------------------------------------- doubling

#[derive(Serialize)]
struct CensusEntry {
    model: ModelKind,
    d: usize,
    h: f64,
    grid_n: usize,
    count: usize,
    /// Known count for s (2^d) and s_mod (1); absent otherwise.
    expected: Option<usize>,
    zeros: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct CensusDoc {
    schema_version: &'static str,
    command: &'static str,
    tol: f64,
    census: Vec<CensusEntry>,
    pass: bool,
}

pub fn cmd_doubling(a: &DoublingArgs) -> CliResult<(String, bool)> {
    let dim = dimension(a.d)?;
    if a.m != 0.0 {
        return usage(format!("the zero census needs m = 0, got {}", a.m));
    }
    let kinds = parse_kinds(&a.models)?;
    let hs = parse_h_list(&a.h)?;
    let grid_n = a.grid_n.unwrap_or_else(|| default_grid_n(dim));
    let mut census = Vec::new();
    for &kind in &kinds {
        for &h in &hs {
            let model = ModelId::discrete(discrete_kind(kind)?, dim, 0.0, h)?;
            let zeros = symbol_zero_census(&model, grid_n, a.tol)?;
            let expected = match kind {
                ModelKind::S => Some(1 << dim.d()),
                ModelKind::SMod => Some(1),
                _ => None,
            };
            census.push(CensusEntry {
                model: kind,
                d: dim.d(),
                h,
                grid_n,
                count: zeros.len(),
                expected,
                zeros,
            });
        }
    }
    let pass = census.iter().all(|c| c.expected.is_none_or(|e| e == c.count));
    let doc = CensusDoc {
        schema_version: SCHEMA_VERSION,
        command: "doubling",
        tol: a.tol,
        census,
        pass,
    };
    Ok((json_doc(&doc)?, pass))
}

// ---------------------------------------------------------------- operator-gap

#[derive(Serialize)]
struct GapRow<'a> {
    model: &'a str,
    d: usize,
    m: f64,
    pair: PairKind,
    z_re: f64,
    z_im: f64,
    h: f64,
    n: usize,
    refinement: usize,
    probe: &'a str,
    l2_gap: f64,
    h1_gap: f64,
}

#[derive(Serialize)]
struct NormRow {
    h: f64,
    n: usize,
    refinement: usize,
    composite_norm: f64,
}

#[derive(Serialize)]
struct GapFitRow<'a> {
    probe: &'a str,
    normalization: &'a str,
    slope: f64,
    intercept: f64,
    r_squared: f64,
    points_used: usize,
}

fn field_name(dir: &Path, stem: &str, idx: usize, probe: &str) -> PathBuf {
    dir.join(format!("{stem}_h{idx}_{probe}.dlat1"))
}

pub fn cmd_operator_gap(a: &OperatorGapArgs) -> CliResult<(String, bool)> {
    let dim = dimension(a.d)?;
    let kind = discrete_kind(a.model)?;
    let hs = parse_h_list(&a.h)?;
    let z = parse_z(&a.z)?;
    check_shifts(&[z], a.m)?;
    let probes = parse_probes(&a.probes)?;
    let expect_l2 = a.expect_l2_slope.as_deref().map(parse_range).transpose()?;
    let expect_h1 = a.expect_h1_slope.as_deref().map(parse_range).transpose()?;
    let (n, refinement) = match dim {
        Dimension::Three => (a.n.unwrap_or(16), a.refinement.unwrap_or(4)),
        _ => (a.n.unwrap_or(256), a.refinement.unwrap_or(8)),
    };
    let pair = build_pair(a.pair, dim);
    if let Some(dir) = &a.save_fields {
        fs::create_dir_all(dir)?;
    }
    let name = kind.as_str();
    let mut rows = Vec::new();
    // Per probe: (h, L² gap) and (h, H¹ gap) series.
    let mut series: Vec<[Vec<(f64, f64)>; 2]> = vec![[Vec::new(), Vec::new()]; probes.len()];
    for (hi, &h) in hs.iter().enumerate() {
        let model = ModelId::discrete(kind, dim, a.m, h)?;
        let lattice = PeriodicLattice::new(dim, n, h)?;
        let fine = fine_grid_for(&lattice, refinement)?;
        for (pi, &choice) in probes.iter().enumerate() {
            let f = match choice {
                ProbeChoice::Library(p) => build_probe(p, &fine, h, a.seed),
                ProbeChoice::Doubler => doubler_packet(&model, &fine)?,
            };
            let gap = resolvent_gap_on_probe(&pair, &model, z, &f)?;
            series[pi][0].push((h, gap.l2));
            series[pi][1].push((h, gap.h1));
            rows.push(GapRow {
                model: name,
                d: dim.d(),
                m: a.m,
                pair: a.pair,
                z_re: z.re,
                z_im: z.im,
                h,
                n,
                refinement,
                probe: choice.name(),
                l2_gap: gap.l2,
                h1_gap: gap.h1,
            });
            if let Some(dir) = &a.save_fields {
                let kf = discretize_kh(&pair, &f, h)?;
                snapshot::save(&kf, &field_name(dir, "kf", hi, choice.name()))?;
                let u = free_resolvent(&model, z, &kf)?;
                snapshot::save(&u, &field_name(dir, "resolvent", hi, choice.name()))?;
            }
        }
    }
    let mut pass = true;
    let mut norms = Vec::new();
    if a.composite_norm {
        for &h in &hs {
            let model = ModelId::discrete(kind, dim, a.m, h)?;
            let lattice = PeriodicLattice::new(dim, a.norm_n, h)?;
            let map = CompositeGapMap::new(&pair, &model, z, lattice, a.norm_refinement)?;
            let norm = operator_norm_estimate(&map, a.norm_iters, a.seed)?;
            pass &= a.expect_floor.is_none_or(|floor| norm >= floor);
            norms.push(NormRow {
                h,
                n: a.norm_n,
                refinement: a.norm_refinement,
                composite_norm: norm,
            });
        }
    } else if a.expect_floor.is_some() {
        return usage("--expect-floor requires --composite-norm");
    }
    let mut fits = Vec::new();
    for (choice, [l2, h1]) in probes.iter().zip(&series) {
        for (label, pts, expect) in [("l2", l2, expect_l2), ("h1", h1, expect_h1)] {
            match fit_loglog(pts) {
                Ok(fit) => {
                    pass &= within(fit.slope, expect);
                    fits.push(gap_fit_row(choice.name(), label, &fit));
                }
                Err(DiracError::DegenerateData(_)) => pass &= expect.is_none(),
                Err(e) => return Err(e.into()),
            }
        }
    }
    let mut doc = csv_header();
    csv_block(&mut doc, None, &rows)?;
    if a.composite_norm {
        csv_block(&mut doc, Some("composite_norm"), &norms)?;
    }
    csv_block(&mut doc, Some("fit"), &fits)?;
    Ok((doc, pass))
}

fn gap_fit_row<'a>(probe: &'a str, normalization: &'a str, fit: &RateFit) -> GapFitRow<'a> {
    GapFitRow {
        probe,
        normalization,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        points_used: fit.points_used,
    }
}

// ---------------------------------------------------------------- potential-gap

#[derive(Serialize)]
pub struct PotentialManifest {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub model: ModelKind,
    pub d: usize,
    pub m: f64,
    pub potential: PotentialInfo,
    pub pair: PairKind,
    pub z: [f64; 2],
    pub box_side: f64,
    pub refinement: usize,
    pub seed: u64,
    pub theta: f64,
    pub tau: f64,
    pub theta_prime: f64,
    /// `0.8·θ′`.
    pub slope_threshold: f64,
    pub records: Vec<PerturbedRecord>,
    pub fit: Option<RateFit>,
    pub pass: bool,
}

fn build_potential(a: &PotentialGapArgs, dim: Dimension) -> CliResult<HolderPotential> {
    let coeff = || coefficient_matrix(&a.coefficient, dim);
    let v = match a.potential.as_str() {
        "zero" => HolderPotential::zero(dim),
        "constant" => HolderPotential::constant(dim, coeff()?.scale_re(a.amplitude))?,
        "tanh" => HolderPotential::tanh(dim, a.amplitude, coeff()?)?,
        "cusp" => HolderPotential::cusp(dim, a.amplitude, a.theta, a.radius, coeff()?)?,
        other => return usage(format!("unknown potential '{other}' (zero, constant, tanh, cusp)")),
    };
    Ok(v)
}

pub fn cmd_potential_gap(a: &PotentialGapArgs) -> CliResult<(String, bool)> {
    let dim = dimension(a.d)?;
    let kind = discrete_kind(a.model)?;
    if a.pair != PairKind::SmoothBiorthogonal {
        return usage("potential-gap needs the smooth pair (the sinc generator decays too slowly)");
    }
    let hs = parse_h_list(&a.h)?;
    let z = parse_z(&a.z)?;
    if z.im == 0.0 {
        return usage("potential-gap needs a non-real z");
    }
    let probes: Vec<Probe> = parse_probes(&a.probes)?
        .into_iter()
        .map(|p| match p {
            ProbeChoice::Library(p) => Ok(p),
            ProbeChoice::Doubler => usage("the doubler probe is not available for potential-gap"),
        })
        .collect::<CliResult<_>>()?;
    let v = build_potential(a, dim)?;
    let pair = build_pair(a.pair, dim);
    let family = ModelId::discrete(kind, dim, a.m, hs[0])?;
    let setup = SweepSetup {
        box_side: a.box_side,
        refinement: a.refinement,
        seed: a.seed,
        ..SweepSetup::default()
    };
    let records = perturbed_convergence_sweep(&family, &v, &pair, z, &hs, &probes, &setup)?;
    let tau = pair.tau(a.box_side);
    let tp = theta_prime(v.theta(), tau, dim.d())?;
    let threshold = 0.8 * tp;
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.h, r.value)).collect();
    let fit = match fit_loglog(&pts) {
        Ok(f) => Some(f),
        Err(DiracError::DegenerateData(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let pass = fit.is_some_and(|f| f.slope >= threshold);
    if let Some(dir) = &a.save_fields {
        save_potential_fields(dir, &family, &v, &pair, z, &hs, &probes, &setup)?;
    }
    let manifest = PotentialManifest {
        schema_version: SCHEMA_VERSION,
        command: "potential-gap",
        model: kind,
        d: dim.d(),
        m: a.m,
        potential: v.info(),
        pair: a.pair,
        z: [z.re, z.im],
        box_side: a.box_side,
        refinement: a.refinement,
        seed: a.seed,
        theta: v.theta(),
        tau,
        theta_prime: tp,
        slope_threshold: threshold,
        records,
        fit,
        pass,
    };
    Ok((json_doc(&manifest)?, pass))
}

#[allow(clippy::too_many_arguments)]
fn save_potential_fields(
    dir: &Path,
    family: &ModelId,
    v: &HolderPotential,
    pair: &crate::embedding::RieszPair,
    z: Complex64,
    hs: &[f64],
    probes: &[Probe],
    setup: &SweepSetup,
) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let h_min = *hs.last().expect("nonempty");
    let n_max = (setup.box_side / h_min).round() as usize;
    let fine = PeriodicLattice::new(family.dim, n_max * setup.refinement, h_min / setup.refinement as f64)?;
    for (hi, &h) in hs.iter().enumerate() {
        let model = family.with_h(h)?;
        for &p in probes {
            let f = build_probe(p, &fine, h, setup.seed);
            let kf = discretize_kh(pair, &f, h)?;
            let vh = sample_potential(v, kf.lattice())?;
            let (u, _) = perturbed_resolvent_with(&model, &vh, z, &kf, &setup.solver)?;
            snapshot::save(&u, &field_name(dir, "solution", hi, p.as_str()))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- verify

#[derive(Serialize)]
struct VerifyDoc {
    schema_version: &'static str,
    command: &'static str,
    criteria: Vec<CriterionReport>,
    pass: bool,
}

pub fn cmd_verify(a: &VerifyArgs) -> CliResult<(String, bool)> {
    let ids: Vec<u8> = match a.criterion.trim() {
        "all" => CRITERIA.iter().map(|c| c.0).collect(),
        one => match one.parse::<u8>() {
            Ok(id) if (1..=10).contains(&id) => vec![id],
            _ => return usage(format!("--criterion takes 1..=10 or 'all', got '{one}'")),
        },
    };
    let mut criteria = Vec::with_capacity(ids.len());
    for id in ids {
        let report = run_criterion(id)?;
        eprintln!(
            "[{}] {} {} ({:.2} s)",
            if report.pass { "PASS" } else { "FAIL" },
            report.id,
            report.title,
            report.elapsed_s
        );
        criteria.push(report);
    }
    let pass = criteria.iter().all(|r| r.pass);
    let doc = VerifyDoc {
        schema_version: SCHEMA_VERSION,
        command: "verify",
        criteria,
        pass,
    };
    Ok((json_doc(&doc)?, pass))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h_lists() {
        assert_eq!(parse_h_list("1/16..1/256").unwrap(), vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0]);
        assert_eq!(parse_h_list("1..1/4").unwrap(), vec![1.0, 0.5, 0.25]);
        assert_eq!(parse_h_list("1/2^3..1/2^4").unwrap(), vec![0.125, 0.0625]);
        assert_eq!(parse_h_list("1/8,1/16,0.03125").unwrap(), vec![0.125, 0.0625, 0.03125]);
        assert_eq!(parse_h_list("1/3").unwrap(), vec![1.0 / 3.0]);
        for bad in ["", "1/256..1/16", "1/3..1/9", "1/8,1/4", "2", "0", "x", "1/8,,"] {
            assert!(matches!(parse_h_list(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn shifts() {
        let c = Complex64::new;
        let cases = [
            ("i", c(0.0, 1.0)),
            ("2i", c(0.0, 2.0)),
            ("-i", c(0.0, -1.0)),
            ("1+i", c(1.0, 1.0)),
            ("1-0.5i", c(1.0, -0.5)),
            ("0.5", c(0.5, 0.0)),
            ("-2.5i", c(0.0, -2.5)),
            ("1e-1+2e+0i", c(0.1, 2.0)),
            (" -1 - i ", c(-1.0, -1.0)),
        ];
        for (s, want) in cases {
            assert_eq!(parse_z(s).unwrap(), want, "{s}");
        }
        for bad in ["", "j", "1+", "ii", "nan"] {
            assert!(parse_z(bad).is_err(), "{bad}");
        }
        assert_eq!(parse_z_list("i,2i,1+i").unwrap().len(), 3);
    }

    #[test]
    fn probe_lists_and_ranges() {
        assert_eq!(
            parse_probes("gaussian,doubler").unwrap(),
            vec![ProbeChoice::Library(Probe::Gaussian), ProbeChoice::Doubler]
        );
        assert!(parse_probes("nope").is_err());
        assert_eq!(parse_range("0.9, 1.1").unwrap(), (0.9, 1.1));
        assert!(parse_range("1.1,0.9").is_err());
    }

    #[test]
    fn spectrum_shifts_rejected() {
        assert!(check_shifts(&[Complex64::new(0.5, 0.0)], 1.0).is_ok());
        assert!(check_shifts(&[Complex64::new(1.5, 0.0)], 1.0).is_err());
        assert!(check_shifts(&[Complex64::new(0.0, 0.0)], 0.0).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
