//! Command-line front end: argument parsing, file ingestion, dispatch and
//! artifact emission.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::channel::{validate, ChannelDescription, ChannelModel};
use crate::code_space::{
    CodeEnsemble, CodeIndexVector, CodeOption, OperationConfig, System, UserSet, WeightAssignment, MAX_USERS,
};
use crate::exponents::{CacheEntry, ExponentCache, ExponentKind, ExponentQuery, MaximizeOptions};
use crate::gep::{gep_bound_d, gep_bound_single_user, PartitionStrategy};
use crate::infotheory::{gaussian_region_check, RegionEvaluator, RegionVerdict};
use crate::simulator::{
    default_offset_grid, exact_oracle, generate_codebooks, oracle_over_seeds, run_monte_carlo, tune_policy,
    Calibration, Decoder, EnumerationLimit, ErrorMode, MonteCarloSpec, ThresholdPolicy, DEFAULT_SYMBOL_CAP,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable naming a directory for persisted exponent caches.
pub const CACHE_DIR_ENV: &str = "DMAC_CACHE_DIR";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Domain(_) => EXIT_DOMAIN,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "dmac",
    version,
    about = "Distributed capacity regions, GEP bounds, error exponents and decoder simulation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Write the primary result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Units of rates given on the command line or as plain `rate` in ensemble files.
    #[arg(long, global = true, value_enum, default_value_t = Units::Nats)]
    pub units: Units,
    /// Write a run manifest (command, resolved inputs, seeds, output digests) here.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Nats,
    Bits,
}

impl Units {
    fn to_nats(self, r: f64) -> f64 {
        match self {
            Units::Nats => r,
            Units::Bits => r * std::f64::consts::LN_2,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a channel description (and optionally an ensemble against it).
    Validate(ValidateArgs),
    /// Distributed-capacity membership.
    #[command(subcommand)]
    Region(RegionCommand),
    /// Maximize one error exponent.
    Exponent(ExponentArgs),
    /// Analytic GEP upper bound.
    Gep(GepArgs),
    /// Monte Carlo simulation of the threshold decoder.
    Simulate(SimulateArgs),
    /// Exact error probabilities by full enumeration (small instances only).
    Oracle(OracleArgs),
    /// Tune per-constraint threshold offsets on calibration runs.
    Tune(TuneArgs),
    /// Gaussian multiple-access region with fixed Gaussian inputs.
    Gaussian(GaussianArgs),
    /// Re-run the command recorded in a manifest and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub channel: PathBuf,
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum RegionCommand {
    /// Membership verdicts with witnesses for one code index vector or rate tuple.
    Check(RegionCheckArgs),
    /// CSV of membership along one rate axis.
    Sweep(RegionSweepArgs),
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    /// Channel JSON file.
    #[arg(long)]
    pub channel: PathBuf,
    /// Ensemble JSON file.
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RateSource {
    /// Code index vector: option indices (0-based) separated by commas,
    /// optionally followed by `;` and the interferer option index.
    #[arg(long, conflicts_with = "r")]
    pub g: Option<String>,
    /// Rates per user with uniform input distributions (no ensemble needed).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub r: Option<Vec<f64>>,
    /// Interferer option label used with `--r`.
    #[arg(long)]
    pub interferer: Option<String>,
}

#[derive(Debug, Args)]
pub struct RegionCheckArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub point: RateSource,
    /// Require every inequality to hold with this margin.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub slack: f64,
    /// Also check the subset region for these users (1-based, comma separated).
    #[arg(long)]
    pub subset: Option<String>,
}

#[derive(Debug, Args)]
pub struct RegionSweepArgs {
    #[arg(long)]
    pub channel: PathBuf,
    /// Base rates per user; the swept user's entry is replaced.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub r: Vec<f64>,
    #[arg(long)]
    pub interferer: Option<String>,
    /// Swept user (1-based).
    #[arg(long)]
    pub axis: usize,
    #[arg(long)]
    pub start: f64,
    #[arg(long)]
    pub stop: f64,
    /// Number of grid points.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: u64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub slack: f64,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    /// Blocklength.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// `uniform` or a weight-assignment JSON file.
    #[arg(long, default_value = "uniform")]
    pub weights: String,
}

#[derive(Debug, Args)]
pub struct ExponentArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// mD, iD_S or iD_D.
    #[arg(long)]
    pub kind: String,
    /// Decode set (1-based users, comma separated).
    #[arg(long)]
    pub decode_set: String,
    /// Matched subset S (1-based users; empty for the empty set).
    #[arg(long, default_value = "")]
    pub s: String,
    #[arg(long)]
    pub g: String,
    #[arg(long)]
    pub g_tilde: String,
    /// Explicit `alpha_g,alpha_g~`; otherwise taken from the weights.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    #[command(flatten)]
    pub weights: WeightArgs,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// JSON list of code index vectors in the operation region.
    #[arg(long)]
    pub region: PathBuf,
    /// JSON list of code index vectors in the operation margin.
    #[arg(long)]
    pub margin: Option<PathBuf>,
    #[command(flatten)]
    pub weights: WeightArgs,
}

#[derive(Debug, Args)]
pub struct GepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Bound a single decoder with this decode set instead of partitioning user 1's region.
    #[arg(long)]
    pub decode_set: Option<String>,
    #[arg(long, value_enum, default_value_t = StrategyArg::Exhaustive)]
    pub strategy: StrategyArg,
    /// Emit CSV of the bound against N over `start:stop:step` (uniform weights).
    #[arg(long)]
    pub n_sweep: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Exhaustive,
    Greedy,
}

impl From<StrategyArg> for PartitionStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Exhaustive => PartitionStrategy::Exhaustive,
            StrategyArg::Greedy => PartitionStrategy::Greedy,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    #[value(alias = "eq1")]
    WrongDecode,
    #[value(alias = "eq6")]
    MissedCollision,
    #[value(alias = "eq10")]
    JointMargin,
    #[value(alias = "eq12")]
    UserMargin,
}

impl From<ModeArg> for ErrorMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::WrongDecode => ErrorMode::WrongDecode,
            ModeArg::MissedCollision => ErrorMode::MissedCollision,
            ModeArg::JointMargin => ErrorMode::JointMargin,
            ModeArg::UserMargin => ErrorMode::UserMargin,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TuneArg {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Args)]
pub struct DecoderArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Decode set (1-based users); all users by default.
    #[arg(long)]
    pub decode_set: Option<String>,
    /// Codebook seed; defaults to `--seed`.
    #[arg(long)]
    pub codebook_seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Threshold policy JSON (a policy or a tuning report).
    #[arg(long, conflicts_with_all = ["offset", "tune"])]
    pub policy: Option<PathBuf>,
    /// Constant threshold offset for every constraint.
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<f64>,
    /// Tune offsets before running.
    #[arg(long, value_enum)]
    pub tune: Option<TuneArg>,
    /// Calibration trials per vector for `--tune monte-carlo`.
    #[arg(long, default_value_t = 2000)]
    pub tune_trials: usize,
    /// Error definitions to evaluate (repeatable); all applicable by default.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub mode: Vec<ModeArg>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub decoder: DecoderArgs,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// Per-vector CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Skip the analytic bound.
    #[arg(long)]
    pub no_bound: bool,
    /// Also run the exact oracle on the same codebooks.
    #[arg(long)]
    pub with_oracle: bool,
    /// Keep per-trial records in the report.
    #[arg(long)]
    pub record: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub decoder: DecoderArgs,
    /// Cap on enumerated (output sequence, message vector) pairs.
    #[arg(long, default_value_t = EnumerationLimit::default().max_terms)]
    pub max_terms: u64,
    /// Average over these codebook seeds instead of a single draw; the policy
    /// is resolved on the first seed's codebooks and then held fixed.
    #[arg(long, value_delimiter = ',', conflicts_with = "codebook_seed")]
    pub codebook_seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub decoder: DecoderArgs,
}

#[derive(Debug, Args)]
pub struct GaussianArgs {
    #[arg(long = "K")]
    pub k: usize,
    /// Transmit powers.
    #[arg(long = "P", value_delimiter = ',')]
    pub p: Vec<f64>,
    /// Noise variance.
    #[arg(long = "N0")]
    pub n0: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub r: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// One emitted file; `path == None` is the primary result (`--out` or stdout).
struct Artifact {
    path: Option<PathBuf>,
    bytes: Vec<u8>,
}

/// Inputs and seeds gathered while running, for the manifest.
#[derive(Default)]
struct Provenance {
    inputs: BTreeMap<String, Value>,
    seeds: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: BTreeMap<String, Value>,
    pub seeds: BTreeMap<String, u64>,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, args: &[String]) -> CliResult<i32> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    if let Command::Replay(r) = &cli.command {
        return replay(&r.manifest);
    }
    let started = Instant::now();
    let mut prov = Provenance::default();
    let (artifacts, status) = dispatch(cli, &mut prov)?;
    let digests = emit(&artifacts, cli.global.out.as_deref())?;
    if let Some(path) = &cli.global.manifest {
        let manifest = RunManifest {
            command: args.to_vec(),
            config: prov.inputs,
            seeds: prov.seeds,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            outputs: digests,
        };
        write_file(path, &to_json(&manifest)?)?;
    }
    Ok(status)
}

fn emit(artifacts: &[Artifact], out: Option<&Path>) -> CliResult<Vec<OutputDigest>> {
    let mut digests = Vec::new();
    for a in artifacts {
        let target = a.path.as_deref().or(out);
        match target {
            Some(p) => write_file(p, &a.bytes)?,
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout
                    .write_all(&a.bytes)
                    .and_then(|_| stdout.flush())
                    .map_err(|e| CliError::Usage(format!("writing stdout: {e}")))?;
            }
        }
        digests.push(OutputDigest {
            path: target.map(|p| p.display().to_string()).unwrap_or_else(|| "-".into()),
            sha256: sha256_hex(&a.bytes),
        });
    }
    Ok(digests)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn replay(manifest: &Path) -> CliResult<i32> {
    let m: RunManifest = read_json(manifest)?;
    let mut argv = Vec::new();
    let mut iter = m.command.iter();
    while let Some(a) = iter.next() {
        if a == "--manifest" {
            iter.next();
        } else if !a.starts_with("--manifest=") {
            argv.push(a.clone());
        }
    }
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Usage(format!("manifest command: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a manifest cannot replay a replay".into()));
    }
    let mut prov = Provenance::default();
    let (artifacts, _) = dispatch(&cli, &mut prov)?;
    let out = cli.global.out.as_deref();
    let mut checks = Vec::new();
    for (a, expected) in artifacts.iter().zip(&m.outputs) {
        let actual = sha256_hex(&a.bytes);
        checks.push(serde_json::json!({
            "path": a.path.as_deref().or(out).map(|p| p.display().to_string()).unwrap_or_else(|| "-".into()),
            "expected": expected.sha256,
            "actual": actual,
            "match": actual == expected.sha256,
        }));
    }
    let reproduced = artifacts.len() == m.outputs.len() && checks.iter().all(|c| c["match"] == true);
    let report = serde_json::json!({ "reproduced": reproduced, "outputs": checks });
    emit(
        &[Artifact {
            path: None,
            bytes: to_json(&report)?,
        }],
        None,
    )?;
    Ok(if reproduced { EXIT_OK } else { EXIT_DOMAIN })
}

fn dispatch(cli: &Cli, prov: &mut Provenance) -> CliResult<(Vec<Artifact>, i32)> {
    let units = cli.global.units;
    let primary = |bytes| vec![Artifact { path: None, bytes }];
    Ok(match &cli.command {
        Command::Validate(a) => {
            let desc: ChannelDescription = read_json_recorded(&a.channel, "channel", prov)?;
            let report = validate(&desc);
            let mut status = if report.valid { EXIT_OK } else { EXIT_DOMAIN };
            let mut out = serde_json::to_value(&report).map_err(json_out)?;
            if let (true, Some(e)) = (report.valid, &a.ensemble) {
                let model = ChannelModel::try_from(desc)?;
                let ensemble = read_ensemble(e, units, prov)?;
                let check = System::new(model, ensemble);
                out["ensemble_valid"] = Value::Bool(check.is_ok());
                if let Err(err) = check {
                    out["ensemble_error"] = Value::String(err.to_string());
                    status = EXIT_DOMAIN;
                }
            }
            (primary(to_json(&out)?), status)
        }
        Command::Region(RegionCommand::Check(a)) => (primary(to_json(&region_check(a, units, prov)?)?), EXIT_OK),
        Command::Region(RegionCommand::Sweep(a)) => (primary(region_sweep(a, units, prov)?), EXIT_OK),
        Command::Exponent(a) => (primary(to_json(&exponent(a, units, prov)?)?), EXIT_OK),
        Command::Gep(a) => (primary(gep(a, units, prov)?), EXIT_OK),
        Command::Simulate(a) => (simulate(a, units, prov)?, EXIT_OK),
        Command::Oracle(a) => (primary(oracle(a, units, prov)?), EXIT_OK),
        Command::Tune(a) => {
            let setup = DecoderSetup::load(&a.decoder, units, prov)?;
            let kind = a.decoder.tune.unwrap_or(TuneArg::Exact);
            let cal = calibration(kind, &a.decoder);
            let report = setup.with_codebooks(|system, config, weights, cb| {
                let dec = Decoder::new(system, config, weights, &ThresholdPolicy::constant(0.0), cb)?;
                Ok(tune_policy(&dec, cal, &default_offset_grid())?)
            })?;
            (primary(to_json(&report)?), EXIT_OK)
        }
        Command::Gaussian(a) => {
            if a.p.len() != a.k || a.r.len() != a.k {
                return Err(CliError::Usage(format!(
                    "--K {} needs {} powers and {} rates",
                    a.k, a.k, a.k
                )));
            }
            let rates: Vec<f64> = a.r.iter().map(|&r| units.to_nats(r)).collect();
            let verdict = gaussian_region_check(&a.p, a.n0, &rates)?;
            (primary(to_json(&verdict)?), EXIT_OK)
        }
        Command::Replay(_) => unreachable!("handled before dispatch"),
    })
}

fn to_json<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(json_out)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn json_out(e: serde_json::Error) -> CliError {
    CliError::Domain(format!("serializing result: {e}"))
}

/// Maps a parse failure to an error naming the file, line and column.
/// Syntax errors are usage errors; well-formed but invalid content is a domain error.
fn json_error(path: &Path, e: serde_json::Error) -> CliError {
    let msg = format!("{}:{}:{}: {e}", path.display(), e.line(), e.column());
    match e.classify() {
        serde_json::error::Category::Data => CliError::Domain(msg),
        _ => CliError::Usage(msg),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| json_error(path, e))
}

fn read_value(path: &Path) -> CliResult<Value> {
    read_json(path)
}

fn read_json_recorded<T: for<'de> Deserialize<'de>>(path: &Path, name: &str, prov: &mut Provenance) -> CliResult<T> {
    let value = read_value(path)?;
    prov.inputs.insert(name.into(), value);
    serde_json::from_str(&read_text(path)?).map_err(|e| json_error(path, e))
}

fn read_channel(path: &Path, prov: &mut Provenance) -> CliResult<ChannelModel> {
    read_json_recorded(path, "channel", prov)
}

/// Ensemble options may give `rate_nats`, `rate_bits`, or a plain `rate` in `--units`.
fn read_ensemble(path: &Path, units: Units, prov: &mut Provenance) -> CliResult<CodeEnsemble> {
    let mut value = read_value(path)?;
    if let Some(users) = value.get_mut("users").and_then(Value::as_array_mut) {
        for opt in users.iter_mut().filter_map(Value::as_array_mut).flatten() {
            if let Some(obj) = opt.as_object_mut() {
                if let Some(r) = obj.remove("rate") {
                    let key = match units {
                        Units::Nats => "rate_nats",
                        Units::Bits => "rate_bits",
                    };
                    obj.insert(key.into(), r);
                }
            }
        }
    }
    prov.inputs.insert("ensemble".into(), value.clone());
    // re-serialize so that data errors still carry a position
    let text = serde_json::to_string_pretty(&value).map_err(json_out)?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e))
}

fn load_system(a: &SystemArgs, units: Units, prov: &mut Provenance) -> CliResult<System> {
    let channel = read_channel(&a.channel, prov)?;
    let ensemble = match &a.ensemble {
        Some(e) => read_ensemble(e, units, prov)?,
        None => return Err(CliError::Usage("--ensemble is required".into())),
    };
    Ok(System::new(channel, ensemble)?)
}

pub fn parse_vector(s: &str) -> CliResult<CodeIndexVector> {
    let (opts, interferer) = match s.split_once(';') {
        Some((o, i)) => (
            o,
            i.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad interferer index in {s:?}")))?,
        ),
        None => (s, 0),
    };
    let options = opts
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| CliError::Usage(format!("bad code index vector {s:?}")))?;
    Ok(CodeIndexVector::new(options, interferer))
}

pub fn parse_user_set(s: &str) -> CliResult<UserSet> {
    let users = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse::<usize>)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| CliError::Usage(format!("bad user set {s:?}")))?;
    UserSet::from_one_based(&users, MAX_USERS).map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Serialize)]
struct RegionCheckReport {
    g: Option<CodeIndexVector>,
    rates: Vec<f64>,
    slack: f64,
    /// Membership in the all-users distributed capacity region.
    member: bool,
    in_cd_all: RegionVerdict,
    in_cd_user: Vec<RegionVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_cd_subset: Option<RegionVerdict>,
    /// Membership in the closure of the Shannon capacity region.
    closure: RegionVerdict,
}

/// A single-option-per-user system at the given rates with uniform inputs.
fn rate_system(channel: ChannelModel, rates: &[f64], interferer: Option<&str>) -> CliResult<(System, CodeIndexVector)> {
    if rates.len() != channel.num_users() {
        return Err(CliError::Usage(format!(
            "{} rates for {} users",
            rates.len(),
            channel.num_users()
        )));
    }
    let users = rates
        .iter()
        .zip(channel.input_alphabets())
        .map(|(&r, &a)| CodeOption::new(r, vec![1.0 / a as f64; a]).map(|o| vec![o]))
        .collect::<crate::Result<Vec<_>>>()?;
    let mut ensemble = CodeEnsemble::new(users);
    if let Some(label) = interferer {
        ensemble = ensemble.with_interferer(vec![label.to_string()]);
    } else if channel.num_interferer_options() > 1 {
        return Err(CliError::Usage(
            "the channel has several interferer options; pass --interferer".into(),
        ));
    }
    let g = CodeIndexVector::new(vec![0; rates.len()], 0);
    Ok((System::new(channel, ensemble)?, g))
}

fn region_check(a: &RegionCheckArgs, units: Units, prov: &mut Provenance) -> CliResult<RegionCheckReport> {
    let (system, g, explicit) = match (&a.point.g, &a.point.r) {
        (Some(g), None) => {
            let system = load_system(&a.system, units, prov)?;
            let g = parse_vector(g)?;
            system.check_vector(&g)?;
            (system, g, true)
        }
        (None, Some(r)) => {
            let channel = read_channel(&a.system.channel, prov)?;
            let rates: Vec<f64> = r.iter().map(|&x| units.to_nats(x)).collect();
            let (s, g) = rate_system(channel, &rates, a.point.interferer.as_deref())?;
            (s, g, false)
        }
        _ => return Err(CliError::Usage("give exactly one of --g or --r".into())),
    };
    let eval = RegionEvaluator::for_vector(&system, &g)?;
    let k = system.num_users();
    let in_cd_user = (0..k)
        .map(|u| eval.in_cd_user(u, a.slack))
        .collect::<crate::Result<Vec<_>>>()?;
    let in_cd_subset = a
        .subset
        .as_deref()
        .map(|s| parse_user_set(s).and_then(|s| Ok(eval.in_cd_subset(s, a.slack)?)))
        .transpose()?;
    let in_cd_all = eval.in_cd_all(a.slack);
    Ok(RegionCheckReport {
        rates: (0..k).map(|u| system.rate(u, &g)).collect(),
        g: explicit.then_some(g),
        slack: a.slack,
        member: in_cd_all.member,
        in_cd_all,
        in_cd_user,
        in_cd_subset,
        closure: eval.shannon_polymatroid(),
    })
}

/// Locale-independent decimal with 12 significant digits.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{exp}")
    }
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Domain(format!("writing CSV: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Domain(format!("writing CSV: {e}")))
}

/// Evenly spaced grid of `steps` points from `start` to `stop`.
fn grid(start: f64, stop: f64, steps: u64) -> Vec<f64> {
    if steps == 1 {
        return vec![start];
    }
    (0..steps)
        .map(|i| start + (stop - start) * i as f64 / (steps - 1) as f64)
        .collect()
}

fn region_sweep(a: &RegionSweepArgs, units: Units, prov: &mut Provenance) -> CliResult<Vec<u8>> {
    let channel = read_channel(&a.channel, prov)?;
    let k = channel.num_users();
    if a.axis == 0 || a.axis > k {
        return Err(CliError::Usage(format!("--axis must be a user in 1..={k}")));
    }
    let base: Vec<f64> = a.r.iter().map(|&x| units.to_nats(x)).collect();
    let mut header = vec!["rate".to_string()];
    header.extend((1..=k).map(|u| format!("r{u}")));
    header.push("in_cd_all".into());
    header.extend((1..=k).map(|u| format!("in_cd_user{u}")));
    header.push("closure".into());
    let mut rows = Vec::new();
    for x in grid(a.start, a.stop, a.steps) {
        let mut rates = base.clone();
        rates[a.axis - 1] = units.to_nats(x);
        let (system, g) = rate_system(channel.clone(), &rates, a.interferer.as_deref())?;
        let eval = RegionEvaluator::for_vector(&system, &g)?;
        let mut row = vec![format_sig(x)];
        row.extend(rates.iter().map(|&r| format_sig(r)));
        row.push(eval.in_cd_all(a.slack).member.to_string());
        for u in 0..k {
            row.push(eval.in_cd_user(u, a.slack)?.member.to_string());
        }
        row.push(eval.shannon_polymatroid().member.to_string());
        rows.push(row);
    }
    csv_bytes(&header, &rows)
}

fn load_weights(w: &WeightArgs, vectors: &[CodeIndexVector], prov: &mut Provenance) -> CliResult<WeightAssignment> {
    if w.weights == "uniform" {
        let n =
            w.n.ok_or_else(|| CliError::Usage("--N is required with uniform weights".into()))?;
        return Ok(WeightAssignment::uniform(vectors, n)?);
    }
    let weights: WeightAssignment = read_json_recorded(Path::new(&w.weights), "weights", prov)?;
    if let Some(n) = w.n {
        if n != weights.n() {
            return Err(CliError::Usage(format!(
                "--N {n} disagrees with the weight file's N = {}",
                weights.n()
            )));
        }
    }
    weights.require_all(vectors)?;
    Ok(weights)
}

/// Exponent cache for one system, persisted under `DMAC_CACHE_DIR` when set.
struct PersistentCache {
    cache: ExponentCache,
    file: Option<PathBuf>,
}

impl PersistentCache {
    fn open(system: &System, options: MaximizeOptions) -> CliResult<Self> {
        let cache = ExponentCache::new(options);
        let file = match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => {
                let identity = serde_json::json!({
                    "channel": system.channel(),
                    "ensemble": system.ensemble(),
                    "options": options,
                });
                let digest = sha256_hex(identity.to_string().as_bytes());
                Some(PathBuf::from(dir).join(format!("exponents-{digest}.json")))
            }
            _ => None,
        };
        if let Some(f) = file.as_ref().filter(|f| f.exists()) {
            let entries: Vec<CacheEntry> = read_json(f)?;
            cache.extend(entries);
        }
        Ok(Self { cache, file })
    }

    fn save(&self) -> CliResult<()> {
        if let Some(f) = &self.file {
            if let Some(dir) = f.parent() {
                std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
            }
            write_file(f, &to_json(&self.cache.entries())?)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ExponentOutput {
    query: ExponentQuery,
    report: crate::exponents::ExponentReport,
}

fn exponent(a: &ExponentArgs, units: Units, prov: &mut Provenance) -> CliResult<ExponentOutput> {
    let system = load_system(&a.system, units, prov)?;
    let kind: ExponentKind = a
        .kind
        .parse()
        .map_err(|e: crate::Error| CliError::Usage(e.to_string()))?;
    let g = parse_vector(&a.g)?;
    let g_tilde = parse_vector(&a.g_tilde)?;
    let (alpha_g, alpha_g_tilde) = match &a.alpha {
        Some(v) if v.len() == 2 => (v[0], v[1]),
        Some(_) => return Err(CliError::Usage("--alpha takes two values".into())),
        None => {
            let w = load_weights(&a.weights, system.vectors(), prov)?;
            (w.alpha(&g)?, w.alpha(&g_tilde)?)
        }
    };
    let query = ExponentQuery {
        kind,
        decode_set: parse_user_set(&a.decode_set)?,
        s: parse_user_set(&a.s)?,
        g,
        g_tilde,
        alpha_g,
        alpha_g_tilde,
    };
    let cache = PersistentCache::open(&system, MaximizeOptions::default())?;
    let report = cache.cache.get_or_compute(&system, &query)?;
    cache.save()?;
    Ok(ExponentOutput { query, report })
}

fn read_vectors(
    path: &Path,
    name: &str,
    system: &System,
    prov: &mut Provenance,
) -> CliResult<BTreeSet<CodeIndexVector>> {
    let list: Vec<CodeIndexVector> = read_json_recorded(path, name, prov)?;
    for g in &list {
        system.check_vector(g)?;
    }
    Ok(list.into_iter().collect())
}

struct LoadedConfig {
    system: System,
    region: BTreeSet<CodeIndexVector>,
    margin: BTreeSet<CodeIndexVector>,
}

fn load_config(a: &ConfigArgs, units: Units, prov: &mut Provenance) -> CliResult<LoadedConfig> {
    let system = load_system(&a.system, units, prov)?;
    let region = read_vectors(&a.region, "region", &system, prov)?;
    let margin = match &a.margin {
        Some(m) => read_vectors(m, "margin", &system, prov)?,
        None => BTreeSet::new(),
    };
    Ok(LoadedConfig { system, region, margin })
}

fn gep_value(
    lc: &LoadedConfig,
    a: &GepArgs,
    weights: &WeightAssignment,
    cache: &ExponentCache,
) -> CliResult<(f64, Vec<u8>)> {
    Ok(match &a.decode_set {
        Some(d) => {
            let config =
                OperationConfig::for_system(&lc.system, parse_user_set(d)?, lc.region.clone(), lc.margin.clone())?;
            let r = gep_bound_d(&lc.system, &config, weights, cache)?;
            (r.total, to_json(&r)?)
        }
        None => {
            let r = gep_bound_single_user(&lc.system, &lc.region, &lc.margin, weights, a.strategy.into(), cache)?;
            (r.total, to_json(&r)?)
        }
    })
}

fn parse_n_sweep(s: &str) -> CliResult<Vec<usize>> {
    let parts: Vec<&str> = s.split(':').collect();
    let parsed: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match parsed.as_deref() {
        Some(&[start, stop, step]) if step > 0 && start > 0 && start <= stop => {
            Ok((start..=stop).step_by(step).collect())
        }
        _ => Err(CliError::Usage(format!(
            "--n-sweep expects start:stop:step with 0 < start <= stop and step > 0, got {s:?}"
        ))),
    }
}

fn gep(a: &GepArgs, units: Units, prov: &mut Provenance) -> CliResult<Vec<u8>> {
    let lc = load_config(&a.config, units, prov)?;
    let cache = PersistentCache::open(&lc.system, MaximizeOptions::default())?;
    let out = match &a.n_sweep {
        Some(spec) => {
            if a.config.weights.weights != "uniform" {
                return Err(CliError::Usage("--n-sweep needs uniform weights".into()));
            }
            let mut rows = Vec::new();
            for n in parse_n_sweep(spec)? {
                let weights = WeightAssignment::uniform(lc.system.vectors(), n)?;
                let (total, _) = gep_value(&lc, a, &weights, &cache.cache)?;
                rows.push(vec![n.to_string(), format_sig(total)]);
            }
            csv_bytes(&["N".into(), "bound".into()], &rows)?
        }
        None => {
            let weights = load_weights(&a.config.weights, lc.system.vectors(), prov)?;
            gep_value(&lc, a, &weights, &cache.cache)?.1
        }
    };
    cache.save()?;
    Ok(out)
}

struct DecoderSetup {
    lc: LoadedConfig,
    config: OperationConfig,
    weights: WeightAssignment,
    codebook_seed: u64,
    modes: Vec<ErrorMode>,
    policy: Option<ThresholdPolicy>,
}

impl DecoderSetup {
    fn load(a: &DecoderArgs, units: Units, prov: &mut Provenance) -> CliResult<Self> {
        let lc = load_config(&a.config, units, prov)?;
        let d = match &a.decode_set {
            Some(s) => parse_user_set(s)?,
            None => lc.system.all_users(),
        };
        let config = OperationConfig::for_system(&lc.system, d, lc.region.clone(), lc.margin.clone())?;
        let weights = load_weights(&a.config.weights, lc.system.vectors(), prov)?;
        let codebook_seed = a.codebook_seed.unwrap_or(a.seed);
        prov.seeds.insert("seed".into(), a.seed);
        prov.seeds.insert("codebook_seed".into(), codebook_seed);
        let modes: Vec<ErrorMode> = if a.mode.is_empty() {
            ErrorMode::ALL
                .into_iter()
                .filter(|m| crate::simulator::check_mode(*m, &config).is_ok())
                .collect()
        } else {
            a.mode.iter().map(|&m| m.into()).collect()
        };
        let policy = match (&a.policy, a.offset) {
            (Some(p), _) => {
                let v: Value = read_json_recorded(p, "policy", prov)?;
                let inner = v.get("policy").cloned().unwrap_or(v);
                Some(serde_json::from_value(inner).map_err(|e| CliError::Domain(format!("{}: {e}", p.display())))?)
            }
            (None, Some(t)) => Some(ThresholdPolicy::constant(t)),
            (None, None) => None,
        };
        Ok(Self {
            lc,
            config,
            weights,
            codebook_seed,
            modes,
            policy,
        })
    }

    fn with_codebooks<T>(
        &self,
        f: impl FnOnce(&System, &OperationConfig, &WeightAssignment, &crate::simulator::CodebookSet) -> CliResult<T>,
    ) -> CliResult<T> {
        let cb = generate_codebooks(
            &self.lc.system,
            self.weights.n(),
            self.codebook_seed,
            DEFAULT_SYMBOL_CAP,
        )?;
        f(&self.lc.system, &self.config, &self.weights, &cb)
    }

    /// The explicit policy, a tuned one, or offset zero.
    fn resolve_policy(&self, a: &DecoderArgs, cb: &crate::simulator::CodebookSet) -> CliResult<ThresholdPolicy> {
        if let Some(p) = &self.policy {
            return Ok(p.clone());
        }
        let zero = ThresholdPolicy::constant(0.0);
        match a.tune {
            None => Ok(zero),
            Some(kind) => {
                let dec = Decoder::new(&self.lc.system, &self.config, &self.weights, &zero, cb)?;
                Ok(tune_policy(&dec, calibration(kind, a), &default_offset_grid())?.policy)
            }
        }
    }
}

fn calibration(kind: TuneArg, a: &DecoderArgs) -> Calibration {
    match kind {
        TuneArg::Exact => Calibration::Exact,
        TuneArg::MonteCarlo => Calibration::MonteCarlo {
            trials: a.tune_trials,
            seed: a.seed.wrapping_add(1),
        },
    }
}

fn simulate(a: &SimulateArgs, units: Units, prov: &mut Provenance) -> CliResult<Vec<Artifact>> {
    let setup = DecoderSetup::load(&a.decoder, units, prov)?;
    let (report, bound, exact) = setup.with_codebooks(|system, config, weights, cb| {
        let policy = setup.resolve_policy(&a.decoder, cb)?;
        let dec = Decoder::new(system, config, weights, &policy, cb)?;
        let spec = MonteCarloSpec {
            trials: a.trials,
            seed: a.decoder.seed,
            modes: setup.modes.clone(),
            vectors: None,
            record: a.record,
        };
        let mut report = run_monte_carlo(&dec, &spec)?;
        let bound = if a.no_bound {
            None
        } else {
            let cache = PersistentCache::open(system, MaximizeOptions::default())?;
            let b = gep_bound_d(system, config, weights, &cache.cache)?;
            cache.save()?;
            Some(b)
        };
        report.analytic_bound = bound.as_ref().map(|b| b.total);
        let exact = if a.with_oracle {
            Some(exact_oracle(&dec, &setup.modes, EnumerationLimit::default())?)
        } else {
            None
        };
        if let (Some(o), Some(m)) = (&exact, setup.modes.first()) {
            report.oracle_gep = o.gep(*m).map(|g| g.worst_case);
        }
        Ok((report, bound, exact))
    })?;
    let mut artifacts = vec![Artifact {
        path: None,
        bytes: to_json(&report)?,
    }];
    if let Some(path) = &a.csv {
        let header: Vec<String> = [
            "g",
            "zone",
            "mode",
            "errors",
            "trials",
            "p_hat",
            "ci_low",
            "ci_high",
            "analytic_bound",
            "oracle",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut rows = Vec::new();
        for summary in &report.modes {
            for est in &summary.per_g {
                let bound_g = bound
                    .as_ref()
                    .and_then(|b| b.per_g.iter().find(|v| v.g == est.g))
                    .map(|v| format_sig(v.total))
                    .unwrap_or_default();
                let oracle_g = exact
                    .as_ref()
                    .and_then(|o| o.vectors.iter().find(|v| v.g == est.g))
                    .and_then(|v| v.mode(summary.mode))
                    .map(|m| format_sig(m.average))
                    .unwrap_or_default();
                rows.push(vec![
                    est.g.to_string(),
                    serde_json::to_value(est.zone)
                        .map_err(json_out)?
                        .as_str()
                        .unwrap_or_default()
                        .to_string(),
                    summary.mode.name().to_string(),
                    est.errors.to_string(),
                    est.trials.to_string(),
                    format_sig(est.p_hat),
                    format_sig(est.ci_low),
                    format_sig(est.ci_high),
                    bound_g,
                    oracle_g,
                ]);
            }
        }
        artifacts.push(Artifact {
            path: Some(path.clone()),
            bytes: csv_bytes(&header, &rows)?,
        });
    }
    Ok(artifacts)
}

fn oracle(a: &OracleArgs, units: Units, prov: &mut Provenance) -> CliResult<Vec<u8>> {
    let mut setup = DecoderSetup::load(&a.decoder, units, prov)?;
    let limit = EnumerationLimit { max_terms: a.max_terms };
    if let Some(&first) = a.codebook_seeds.first() {
        setup.codebook_seed = first;
        prov.seeds.remove("codebook_seed");
        for (i, &seed) in a.codebook_seeds.iter().enumerate() {
            prov.seeds.insert(format!("codebook_seed_{i}"), seed);
        }
        let report = setup.with_codebooks(|system, config, weights, cb| {
            let policy = setup.resolve_policy(&a.decoder, cb)?;
            Ok(oracle_over_seeds(
                system,
                config,
                weights,
                &policy,
                &a.codebook_seeds,
                &setup.modes,
                limit,
            )?)
        })?;
        return to_json(&report);
    }
    let report = setup.with_codebooks(|system, config, weights, cb| {
        let policy = setup.resolve_policy(&a.decoder, cb)?;
        let dec = Decoder::new(system, config, weights, &policy, cb)?;
        Ok(exact_oracle(&dec, &setup.modes, limit)?)
    })?;
    to_json(&report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(0.3), "0.3");
        assert_eq!(format_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_sig(2.0f64.ln()), "0.69314718056");
        assert_eq!(format_sig(-1234.5), "-1234.5");
        assert_eq!(format_sig(1e-7), "1e-7");
        assert_eq!(format_sig(6.02214076e23), "6.02214076e23");
        assert_eq!(format_sig(100.0), "100");
    }

    #[test]
    fn vector_and_set_parsing() {
        assert_eq!(parse_vector("0,1").unwrap(), CodeIndexVector::new(vec![0, 1], 0));
        assert_eq!(parse_vector("1, 0;1").unwrap(), CodeIndexVector::new(vec![1, 0], 1));
        assert!(parse_vector("a").is_err());
        assert_eq!(parse_user_set("").unwrap(), UserSet::of(&[]));
        assert_eq!(parse_user_set("1,3").unwrap(), UserSet::of(&[0, 2]));
        assert!(parse_user_set("0").is_err());
    }

    #[test]
    fn grids_and_sweeps() {
        assert_eq!(grid(0.1, 0.9, 1), vec![0.1]);
        assert_eq!(grid(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_n_sweep("10:30:10").unwrap(), vec![10, 20, 30]);
        assert!(parse_n_sweep("10:5:1").is_err());
        assert!(parse_n_sweep("1:5:0").is_err());
    }
}
