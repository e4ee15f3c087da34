//! `selcov` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.
//!
//! `--config FILE` reads a TOML file whose keys are the long flag names
//! (`min_samples` or `min-samples`). Top-level keys apply to any
//! subcommand; a table such as `[shift]` applies only to that subcommand.
//! Flags given on the command line take precedence over the file, which
//! takes precedence over `SELCOV_OUT_DIR` and built-in defaults.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Serialize, Serializer};

use crate::phenology::{Characteristic, EventTask};

#[derive(Debug, Parser)]
#[command(name = "selcov", version, about = "Confidence thresholding and phenology analyses for classifier outputs")]
pub struct Cli {
    /// TOML file with default flag values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Accuracy/coverage curve of labeled predictions (curve.csv, curve.svg)
    #[command(args_override_self = true)]
    Curve(CurveArgs),
    /// Pick a threshold from a curve (policy.json)
    #[command(args_override_self = true)]
    Select(SelectArgs),
    /// Accept or reject every prediction (annotations.jsonl)
    #[command(args_override_self = true)]
    Annotate(AnnotateArgs),
    /// Compare species mean DoY against a reference table (replication.json)
    #[command(args_override_self = true)]
    Replicate(ReplicateArgs),
    /// Per-species flowering shifts (shifts.csv, shift_summary.json, species_traits.csv)
    #[command(args_override_self = true)]
    Shift(ShiftArgs),
    /// Welch comparisons of shifts between trait categories (subsets.json)
    #[command(args_override_self = true)]
    Subsets(SubsetsArgs),
    /// Generate synthetic datasets from a TOML spec
    #[command(args_override_self = true)]
    Synth(SynthArgs),
}

/// Comma-separated list flag.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|part| part.trim().parse::<T>().map_err(|e| format!("{part:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: Serialize> Serialize for List<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(serializer)
    }
}

fn parse_characteristic(s: &str) -> Result<List<Characteristic>, String> {
    s.parse()
}

fn parse_thresholds(s: &str) -> Result<List<f64>, String> {
    let list: List<f64> = s.parse()?;
    match list.0.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        Some(t) => Err(format!("threshold {t} outside [0, 1]")),
        None => Ok(list),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TaskArg {
    Fruiting,
    Flowering,
}

impl From<TaskArg> for EventTask {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Fruiting => EventTask::FruitingReplication,
            TaskArg::Flowering => EventTask::Flowering,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct CurveArgs {
    /// Labeled predictions (.jsonl or .csv)
    #[arg(long = "in", value_name = "PATH")]
    #[serde(rename = "in")]
    input: PathBuf,
    /// Threshold grid; defaults to 1/K:1:0.001
    #[arg(long, value_name = "START:STOP:STEP")]
    grid: Option<String>,
    #[arg(long, value_name = "TEXT", default_value = "Accuracy and rejection rate vs confidence threshold")]
    title: String,
    /// Output directory
    #[arg(long, value_name = "DIR", env = "SELCOV_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[group(required = true, multiple = false)]
struct ObjectiveArgs {
    /// Smallest threshold reaching this accuracy
    #[arg(long, value_name = "ACC")]
    target_accuracy: Option<f64>,
    /// Most accurate threshold keeping at least this coverage
    #[arg(long, value_name = "COV")]
    min_coverage: Option<f64>,
    /// Use this threshold as is
    #[arg(long, value_name = "T")]
    threshold: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct SelectArgs {
    /// Curve CSV written by `selcov curve`
    #[arg(long, value_name = "PATH")]
    curve: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    objective: ObjectiveArgs,
    #[arg(long, value_name = "DIR", env = "SELCOV_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[group(id = "annotate_policy", required = true, multiple = false)]
struct AnnotatePolicy {
    /// Policy JSON written by `selcov select`
    #[arg(long, value_name = "PATH")]
    policy: Option<PathBuf>,
    #[arg(long, value_name = "T")]
    threshold: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct AnnotateArgs {
    #[arg(long = "in", value_name = "PATH")]
    #[serde(rename = "in")]
    input: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    policy: AnnotatePolicy,
    #[arg(long, value_name = "DIR", env = "SELCOV_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ReplicateArgs {
    /// Model annotations with specimen metadata
    #[arg(long = "in", value_name = "PATH")]
    #[serde(rename = "in")]
    input: PathBuf,
    /// Reference CSV: species,mean_doy,std_doy,n,group
    #[arg(long, value_name = "PATH")]
    reference: PathBuf,
    #[arg(long, value_name = "T,T,..", default_value = "0.5,0.99", value_parser = parse_thresholds)]
    thresholds: List<f64>,
    #[arg(long, value_enum, default_value_t = TaskArg::Fruiting)]
    task: TaskArg,
    /// Class index meaning "phenophase present"
    #[arg(long, value_name = "K", default_value_t = crate::phenology::EVENT_PRESENT_CLASS)]
    event_class: usize,
    #[arg(long, value_name = "DIR", env = "SELCOV_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ShiftArgs {
    /// Flowering annotations with specimen metadata
    #[arg(long = "in", value_name = "PATH")]
    #[serde(rename = "in")]
    input: PathBuf,
    /// Acceptance threshold [default: 0.5]
    #[arg(long, value_name = "T", conflicts_with = "policy")]
    threshold: Option<f64>,
    /// Take the threshold from a policy JSON
    #[arg(long, value_name = "PATH")]
    policy: Option<PathBuf>,
    #[arg(long, value_name = "N", default_value_t = 75)]
    min_samples: usize,
    /// Required before and after the era boundary
    #[arg(long, value_name = "N", default_value_t = 37)]
    min_per_era: usize,
    /// Era boundary year; earlier years are "pre"
    #[arg(long, value_name = "YEAR", default_value_t = 1950)]
    era: i32,
    #[arg(long, value_name = "A", default_value_t = 0.05)]
    alpha: f64,
    /// Average shifts over significant species only
    #[arg(long)]
    significant_only: bool,
    #[arg(long, value_name = "K", default_value_t = crate::phenology::EVENT_PRESENT_CLASS)]
    event_class: usize,
    #[arg(long, value_name = "DIR", env = "SELCOV_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SubsetsArgs {
    /// Shift table written by `selcov shift`
    #[arg(long, value_name = "PATH")]
    shifts: PathBuf,
    /// Species traits table written by `selcov shift`
    #[arg(long, value_name = "PATH")]
    traits: PathBuf,
    #[arg(
        long,
        value_name = "NAME,..",
        default_value = "growth_form,nativity,wetland,seasonal_timing,flowering_duration",
        value_parser = parse_characteristic
    )]
    characteristics: List<Characteristic>,
    #[arg(long, value_name = "DIR", env = "SELCOV_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// TOML spec with [calibration] and/or [phenology] tables
    #[arg(long, value_name = "PATH")]
    spec: PathBuf,
    /// Overrides every seed in the spec
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR", env = "SELCOV_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

fn data_err(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Flags derived from a config file for `subcommand`.
fn config_flags(path: &Path, subcommand: &str) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
    let mut flags = Vec::new();
    let mut push = |key: &str, value: &toml::Value| -> Result<(), CliError> {
        let flag = format!("--{}", key.replace('_', "-"));
        let rendered = match value {
            toml::Value::Boolean(true) => {
                flags.push(flag.into());
                return Ok(());
            }
            toml::Value::Boolean(false) => return Ok(()),
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(x) => x.to_string(),
            toml::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => Ok(s.clone()),
                    toml::Value::Integer(i) => Ok(i.to_string()),
                    toml::Value::Float(x) => Ok(x.to_string()),
                    _ => Err(CliError::Usage(format!("--config: unsupported list item in `{key}`"))),
                })
                .collect::<Result<Vec<_>, _>>()?
                .join(","),
            _ => return Err(CliError::Usage(format!("--config: unsupported value for `{key}`"))),
        };
        flags.push(flag.into());
        flags.push(rendered.into());
        Ok(())
    };
    for (key, value) in &table {
        match value {
            toml::Value::Table(section) if key == subcommand => {
                for (k, v) in section {
                    push(k, v)?;
                }
            }
            toml::Value::Table(_) => {}
            v => push(key, v)?,
        }
    }
    Ok(flags)
}

const SUBCOMMANDS: [&str; 7] = ["curve", "select", "annotate", "replicate", "shift", "subsets", "synth"];

/// The `--config` path and the position and name of the subcommand token,
/// found without a full parse so that required flags may come from the file.
fn prescan(argv: &[OsString]) -> (Option<PathBuf>, Option<(usize, &'static str)>) {
    let mut config = None;
    let mut subcommand = None;
    let mut i = 1;
    while i < argv.len() {
        let arg = argv[i].to_string_lossy();
        if arg == "--" {
            break;
        }
        if arg == "--config" {
            config = argv.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(path) = arg.strip_prefix("--config=") {
            config = Some(PathBuf::from(path));
        } else if subcommand.is_none() {
            if let Some(name) = SUBCOMMANDS.iter().find(|n| **n == arg) {
                subcommand = Some((i, *name));
            }
        }
        i += 1;
    }
    (config, subcommand)
}

fn parse_cli(argv: &[OsString]) -> Result<Cli, clap::Error> {
    let matches = Cli::command().try_get_matches_from(argv)?;
    Cli::from_arg_matches(&matches)
}

fn shell_quote(s: &str) -> String {
    let plain = !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_./:,=+@%".contains(c));
    if plain {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

/// `selcov <subcommand> --flag value ...` rebuilt from effective arguments.
fn reproduction_command<A: Serialize>(subcommand: &str, args: &A) -> String {
    let mut parts = vec!["selcov".to_string(), subcommand.to_string()];
    if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(args) {
        for (key, value) in map {
            let flag = format!("--{}", key.replace('_', "-"));
            let rendered = match value {
                serde_json::Value::Null | serde_json::Value::Bool(false) => continue,
                serde_json::Value::Bool(true) => {
                    parts.push(flag);
                    continue;
                }
                serde_json::Value::String(s) => s,
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|v| match v {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            parts.push(flag);
            parts.push(shell_quote(&rendered));
        }
    }
    parts.join(" ")
}

/// Runs one command; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let mut argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if let (Some(config), Some((pos, name))) = prescan(&argv) {
        match config_flags(&config, name) {
            Ok(flags) => {
                argv.splice(pos + 1..pos + 1, flags);
            }
            Err(e) => {
                let _ = writeln!(stderr, "{e}");
                return e.exit_code();
            }
        }
    }
    let cli = match parse_cli(&argv) {
        Ok(cli) => cli,
        Err(e) => return report_clap_error(e, stdout, stderr),
    };

    let outcome = match cli.command {
        Command::Curve(a) => commands::curve(a),
        Command::Select(a) => commands::select(a),
        Command::Annotate(a) => commands::annotate(a),
        Command::Replicate(a) => commands::replicate(a),
        Command::Shift(a) => commands::shift(a),
        Command::Subsets(a) => commands::subsets(a),
        Command::Synth(a) => commands::synth(a),
    };
    match outcome {
        Ok(out) => {
            for line in &out.summary {
                let _ = writeln!(stdout, "{line}");
            }
            for path in &out.written {
                let _ = writeln!(stdout, "wrote {}", path.display());
            }
            let _ = writeln!(stdout, "reproduce: {}", out.command);
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            e.exit_code()
        }
    }
}

fn report_clap_error(e: clap::Error, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    use clap::error::ErrorKind;
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = write!(stdout, "{}", e.render());
            0
        }
        _ => {
            let _ = write!(stderr, "{}", e.render());
            1
        }
    }
}
