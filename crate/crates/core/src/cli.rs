//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 2 for usage, configuration or data errors, 3 when training
//! diverges.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::image_io::{
    decode_pgm, encode_pgm, load_image_folder, synth_thermal, LabeledDataset, OnInvalid,
    SynthSpec,
};
use crate::kalman::{denoise_image, psnr, KalmanConfig, MeasurementNoise};
use crate::model::{decode_weights, load_weights, save_weights, summarize, Architecture, Model};
use crate::train::{evaluate, train, write_history_csv, OptimizerKind, TrainConfig, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FreezePolicy {
    On,
    Off,
    /// Frozen exactly when starting from imported weights.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InvalidFiles {
    Fail,
    Skip,
}

#[derive(Debug, Parser)]
#[command(name = "thermal-face", version, about = "Thermal face denoising and classification")]
#[command(args_override_self = true)]
pub struct Cli {
    /// File of `key = value` lines supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Kalman-denoise a PGM image.
    Denoise(DenoiseArgs),
    /// Print a model's layer table and parameter counts.
    Summary(SummaryArgs),
    /// Train a model and report test metrics.
    Train(TrainArgs),
    /// Evaluate saved weights on a test set.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, clap::Args)]
pub struct DenoiseArgs {
    #[arg(long = "in", value_name = "PGM")]
    pub input: Option<PathBuf>,
    #[arg(long = "out", value_name = "PGM")]
    pub output: Option<PathBuf>,
    /// Process-noise variance.
    #[arg(long, default_value_t = 1e-4)]
    pub q: f64,
    /// Measurement-noise variance, or `auto` to estimate it per image.
    #[arg(long, default_value = "auto", value_parser = parse_noise)]
    pub r: MeasurementNoise,
    /// Odd side length of the measurement window.
    #[arg(long, default_value_t = 3)]
    pub window: usize,
    #[arg(long, default_value_t = 1.0)]
    pub init_p: f64,
    /// Reference image; PSNR before and after is printed.
    #[arg(long, value_name = "PGM")]
    pub clean: Option<PathBuf>,
    /// Print PSNR against --clean (implied by --clean).
    #[arg(long)]
    pub report_psnr: bool,
}

#[derive(Debug, clap::Args)]
pub struct SummaryArgs {
    #[arg(long, default_value = "vgg19")]
    pub model: Architecture,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub num_outputs: usize,
}

#[derive(Debug, clap::Args)]
pub struct DataArgs {
    /// Directory with one subdirectory of PGM files per class.
    #[arg(long, value_name = "DIR")]
    pub test_dir: Option<PathBuf>,
    /// Synthetic data `CLASSESxPER_CLASSxSIDE` instead of directories.
    #[arg(long, value_name = "SPEC")]
    pub synth: Option<SynthSpec>,
    /// Pixel noise standard deviation for --synth.
    #[arg(long, default_value_t = 0.05)]
    pub synth_noise: f64,
    #[arg(long, value_enum, default_value = "fail")]
    pub on_invalid: InvalidFiles,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Kalman-denoise images before use.
    #[arg(long, value_enum, default_value = "off")]
    pub denoise: Switch,
    /// Write the metrics report as JSON.
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "small")]
    pub model: Architecture,
    #[arg(long, value_name = "DIR")]
    pub train_dir: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value = "sgd")]
    pub optimizer: OptimizerKind,
    #[arg(long, value_enum, default_value = "auto")]
    pub freeze_base: FreezePolicy,
    /// Initial weights.
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
    /// Where to write the trained weights.
    #[arg(long, value_name = "PATH")]
    pub save: Option<PathBuf>,
    /// Where to write the per-epoch history CSV.
    #[arg(long, value_name = "PATH")]
    pub history: Option<PathBuf>,
    /// Output units; defaults to the number of training classes.
    #[arg(long)]
    pub num_outputs: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "small")]
    pub model: Architecture,
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

fn parse_noise(s: &str) -> Result<MeasurementNoise, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(MeasurementNoise::Auto);
    }
    s.parse::<f64>()
        .map(MeasurementNoise::Fixed)
        .map_err(|_| format!("expected a number or `auto`, got {s:?}"))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {key} expects true or false, got {value:?}")]
    Boolean {
        line: usize,
        key: String,
        value: String,
    },
    #[error("line {line}: {key} is set twice")]
    Duplicate { line: usize, key: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored;
/// values may be wrapped in double quotes.
pub fn parse_config(text: &str) -> Result<Vec<ConfigEntry>, ConfigError> {
    let mut entries: Vec<ConfigEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let key = key.trim();
        let mut value = value.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_')
        {
            return Err(ConfigError::Syntax { line });
        }
        let key = key.replace('_', "-");
        if entries.iter().any(|e| e.key == key) {
            return Err(ConfigError::Duplicate { line, key });
        }
        entries.push(ConfigEntry {
            line,
            key,
            value: value.to_string(),
        });
    }
    Ok(entries)
}

/// Turns config entries into flags for `subcommand`, rejecting keys that
/// are not long flags of that subcommand.
pub fn config_to_args(entries: &[ConfigEntry], subcommand: &str) -> Result<Vec<String>, ConfigError> {
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(subcommand);
    let mut args = Vec::new();
    for e in entries {
        let arg = sub.and_then(|s| {
            s.get_arguments()
                .find(|a| a.get_long() == Some(e.key.as_str()) && a.get_long() != Some("config"))
        });
        let Some(arg) = arg else {
            return Err(ConfigError::UnknownKey {
                line: e.line,
                key: e.key.clone(),
            });
        };
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match e.value.as_str() {
                "true" => args.push(format!("--{}", e.key)),
                "false" => {}
                _ => {
                    return Err(ConfigError::Boolean {
                        line: e.line,
                        key: e.key.clone(),
                        value: e.value.clone(),
                    })
                }
            }
        } else {
            args.push(format!("--{}={}", e.key, e.value));
        }
    }
    Ok(args)
}

/// Error carrying the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::Divergence { .. } => EXIT_DIVERGED,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

macro_rules! usage_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::usage(e)
            }
        }
    )*};
}
usage_from!(
    crate::image_io::ImageError,
    crate::image_io::PgmError,
    crate::kalman::KalmanError,
    crate::model::ModelError,
    crate::model::WeightError,
    crate::train::HistoryError,
    ConfigError
);

/// Index of the subcommand name and the `--config` value, if present.
fn scan_args(args: &[OsString]) -> (Option<usize>, Option<PathBuf>) {
    let names: Vec<String> = Cli::command()
        .get_subcommands()
        .map(|s| s.get_name().to_string())
        .collect();
    let mut sub = None;
    let mut config = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--" {
            break;
        } else if a == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
            i += 1;
        } else if let Some(v) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if sub.is_none() && names.iter().any(|n| *n == a) {
            sub = Some(i);
        }
        i += 1;
    }
    (sub, config)
}

fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let (sub, config) = scan_args(&args);
    let (Some(sub), Some(path)) = (sub, config) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let entries = parse_config(&text)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let name = args[sub].to_string_lossy().into_owned();
    let extra = config_to_args(&entries, &name)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let mut out = args[..=sub].to_vec();
    out.extend(extra.into_iter().map(OsString::from));
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}

/// Runs the CLI with the given arguments (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let result = expand_config(args).and_then(|args| match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli, out, err),
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                Ok(())
            } else {
                Err(Failure::usage(e.render().to_string().trim_end()))
            }
        }
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message.trim_start_matches("error: "));
            f.code
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Denoise(a) => cmd_denoise(a, out),
        Command::Summary(a) => cmd_summary(a, out),
        Command::Train(a) => cmd_train(a, out, err),
        Command::Evaluate(a) => cmd_evaluate(a, out, err),
    }
}

fn read_pgm(path: &Path) -> Result<crate::image_io::Image, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    decode_pgm(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn cmd_denoise(a: DenoiseArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let input = a.input.ok_or_else(|| Failure::usage("denoise needs --in"))?;
    let output = a.output.ok_or_else(|| Failure::usage("denoise needs --out"))?;
    if a.report_psnr && a.clean.is_none() {
        return Err(Failure::usage("--report-psnr needs --clean"));
    }
    let cfg = KalmanConfig {
        q: a.q,
        r: a.r,
        init_p: a.init_p,
        window: a.window,
    };
    cfg.validate()?;
    let noisy = read_pgm(&input)?;
    let denoised = denoise_image(&noisy, &cfg)?;
    write_file(&output, &encode_pgm(&denoised))?;
    if let Some(clean) = a.clean {
        let clean = read_pgm(&clean)?;
        let before = psnr(&clean, &noisy)?;
        let after = psnr(&clean, &denoised)?;
        let _ = writeln!(out, "PSNR before: {before:.4} dB");
        let _ = writeln!(out, "PSNR after: {after:.4} dB");
    }
    Ok(())
}

fn build(arch: Architecture, input_size: Option<usize>, outputs: usize) -> Result<Model, Failure> {
    let size = input_size.unwrap_or(arch.default_input_size());
    Ok(arch.build(size, outputs, 256, 0.5)?)
}

fn cmd_summary(a: SummaryArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let model = build(a.model, a.input_size, a.num_outputs)?;
    let _ = write!(out, "{}", summarize(&model)?);
    Ok(())
}

fn kalman_for(data: &DataArgs) -> Option<KalmanConfig> {
    (data.denoise == Switch::On).then(KalmanConfig::default)
}

fn load_dir(dir: &Path, size: usize, data: &DataArgs, err: &mut dyn Write) -> Result<LabeledDataset, Failure> {
    let policy = match data.on_invalid {
        InvalidFiles::Fail => OnInvalid::Fail,
        InvalidFiles::Skip => OnInvalid::Skip,
    };
    let load = load_image_folder(dir, size, policy)?;
    for s in &load.skipped {
        let _ = writeln!(err, "warning: skipped {}: {}", s.path.display(), s.error);
    }
    Ok(load.dataset)
}

fn synth(spec: SynthSpec, noise: f64, seed: u64) -> Result<LabeledDataset, Failure> {
    Ok(synth_thermal(spec.classes, spec.per_class, spec.side, noise, seed)?)
}

fn classes_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".classes.txt");
    PathBuf::from(s)
}

fn read_classes(weights: &Path) -> Result<Vec<String>, Failure> {
    let path = classes_path(weights);
    match fs::read_to_string(&path) {
        Ok(text) => Ok(text.lines().map(str::to_string).filter(|l| !l.is_empty()).collect()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Failure::usage(format!("{}: {e}", path.display()))),
    }
}

fn write_report(report: &crate::train::MetricsReport, json: Option<&Path>, out: &mut dyn Write) -> Result<(), Failure> {
    let _ = write!(out, "{}", report.to_text());
    if let Some(path) = json {
        write_file(path, report.to_json().as_bytes())?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let size = a.data.input_size.unwrap_or(a.model.default_input_size());
    let (train_set, test_set) = match (&a.data.synth, &a.train_dir, &a.data.test_dir) {
        (Some(spec), None, None) => (
            synth(*spec, a.data.synth_noise, a.data.seed)?,
            synth(*spec, a.data.synth_noise, a.data.seed.wrapping_add(1))?,
        ),
        (None, Some(train_dir), Some(test_dir)) => (
            load_dir(train_dir, size, &a.data, err)?,
            load_dir(test_dir, size, &a.data, err)?,
        ),
        (Some(_), _, _) => return Err(Failure::usage("--synth cannot be combined with --train-dir/--test-dir")),
        _ => return Err(Failure::usage("train needs --train-dir and --test-dir, or --synth")),
    };
    let outputs = a.num_outputs.unwrap_or(train_set.num_classes());
    let mut model = build(a.model, Some(size), outputs)?;
    model.initialize(a.data.seed);
    if let Some(path) = &a.weights {
        let report = load_weights(&mut model, path)?;
        let _ = writeln!(
            err,
            "loaded {} tensors from {}; {} head tensors kept fresh",
            report.loaded.len(),
            path.display(),
            report.skipped.len() + report.untouched.len()
        );
    }
    let freeze_base = match a.freeze_base {
        FreezePolicy::On => true,
        FreezePolicy::Off => false,
        FreezePolicy::Auto => a.weights.is_some(),
    };
    let kalman = kalman_for(&a.data);
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        optimizer: a.optimizer,
        learning_rate: a.lr,
        momentum: a.momentum,
        seed: a.data.seed,
        denoise: kalman.is_some(),
        kalman: kalman.unwrap_or_default(),
        freeze_base,
    };
    let (mut model, history) = train(model, &train_set, &test_set, &cfg)?;
    if let Some(path) = &a.history {
        write_history_csv(&history, path)?;
    }
    if let Some(path) = &a.save {
        save_weights(&model, path)?;
        write_file(&classes_path(path), (model.class_names.join("\n") + "\n").as_bytes())?;
    }
    if let Some(last) = history.last() {
        let _ = writeln!(
            out,
            "final epoch: train_loss {:.6} train_acc {:.6} test_loss {:.6} test_acc {:.6}",
            last.train_loss, last.train_accuracy, last.test_loss, last.test_accuracy
        );
    }
    let report = evaluate(&mut model, &test_set, kalman.as_ref())?;
    write_report(&report, a.data.json.as_deref(), out)
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let weights = a.weights.ok_or_else(|| Failure::usage("evaluate needs --weights"))?;
    let size = a.data.input_size.unwrap_or(a.model.default_input_size());
    let test_set = match (&a.data.synth, &a.data.test_dir) {
        (Some(spec), None) => synth(*spec, a.data.synth_noise, a.data.seed)?,
        (None, Some(dir)) => load_dir(dir, size, &a.data, err)?,
        (Some(_), Some(_)) => return Err(Failure::usage("--synth cannot be combined with --test-dir")),
        (None, None) => return Err(Failure::usage("evaluate needs --test-dir or --synth")),
    };
    let bytes = fs::read(&weights).map_err(|e| Failure::usage(format!("{}: {e}", weights.display())))?;
    let tensors = decode_weights(&bytes)?;
    let outputs = tensors
        .iter()
        .find(|t| t.name == "dense_1/bias")
        .map(|t| t.tensor.len())
        .ok_or_else(|| Failure::usage(format!("{}: no output layer (dense_1) in file", weights.display())))?;
    let mut model = build(a.model, Some(size), outputs)?;
    crate::model::apply_weights(&mut model, tensors)?;
    model.class_names = read_classes(&weights)?;
    let report = evaluate(&mut model, &test_set, kalman_for(&a.data).as_ref())?;
    write_report(&report, a.data.json.as_deref(), out)
}
