//! Command-line front end.
//!
//! Flags mirror the config keys in kebab-case (`--batch-size` sets
//! `batch_size`). A `--config` TOML file uses the snake_case keys; flags
//! given on the command line override the file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::ablate::{ablate, ablation_table, Axis};
use super::evaluate::evaluate;
use super::gradcheck::run_suite;
use super::metrics::TABLE_MIN_SUPPORT;
use super::train::{run, write_run, TrainConfig};
use crate::data::{load_dataset, synth_generate, SynthSpec};
use crate::error::{Error, Result};
use crate::model::checkpoint;

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Bad flags, config, input files or data.
pub const EXIT_INVALID: i32 = 1;
/// Training diverged or a check failed.
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mmdfn", version, about = "Multimodal dynamic fusion network for emotion recognition in conversations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a dataset, train, and test the best-validation checkpoint.
    Train {
        /// Dataset file (JSON lines).
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the machine-readable report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Hide classes with fewer utterances from the printed table.
        #[arg(long, default_value_t = TABLE_MIN_SUPPORT)]
        min_support: usize,
    },
    /// Finite-difference check of the full model, both losses.
    Gradcheck {
        #[command(flatten)]
        settings: Settings,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with synthetic dataset keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        synth: SynthFlags,
    },
    /// Train and test a matrix of ablated variants.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated axes: components, edges, modalities, gdf,
        /// speaker, context, intra, inter. Empty runs the base config.
        #[arg(long, value_delimiter = ',', default_value = "")]
        axes: Vec<String>,
        #[command(flatten)]
        settings: Settings,
    },
}

/// Every model and training key as an optional flag.
#[derive(Debug, Clone, Default, Args, Serialize)]
struct Settings {
    /// TOML file with the same keys (snake_case).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma_a: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma_v: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma_t: Option<f64>,
    /// Active modalities, e.g. `avt`, `at`, `t`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    modalities: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    intra: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    inter: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    use_gdf: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    concat_fallback: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    use_speaker: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    use_context: Option<bool>,
    /// `cross_entropy` or `focal`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    focal_gamma: Option<f64>,
    /// `uniform` or `inverse_frequency`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    class_weighting: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    l2_squared: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    forget_bias: Option<f64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    /// `adam` or `sgd`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    optimizer: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    clip: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patience: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    val_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
struct SynthFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    conversations: Option<usize>,
    #[arg(long)]
    min_utterances: Option<usize>,
    #[arg(long)]
    max_utterances: Option<usize>,
    #[arg(long)]
    min_speakers: Option<usize>,
    #[arg(long)]
    max_speakers: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim_a: Option<usize>,
    #[arg(long)]
    dim_v: Option<usize>,
    #[arg(long)]
    dim_t: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_table(path: &Path) -> Result<toml::Table> {
    read_text(path)?
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl Settings {
    /// Defaults, then `base`, then the config file, then flags.
    fn resolve(&self, base: toml::Table) -> Result<TrainConfig> {
        let mut table = base;
        if let Some(path) = &self.config {
            table.extend(read_table(path)?);
        }
        let flags = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        table.extend(flags);
        TrainConfig::from_table(table)
    }
}

impl SynthFlags {
    fn apply(&self, spec: &mut SynthSpec) {
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut spec.conversations, self.conversations);
        set(&mut spec.min_utterances, self.min_utterances);
        set(&mut spec.max_utterances, self.max_utterances);
        set(&mut spec.min_speakers, self.min_speakers);
        set(&mut spec.max_speakers, self.max_speakers);
        set(&mut spec.classes, self.classes);
        set(&mut spec.feature_dims.a, self.dim_a);
        set(&mut spec.feature_dims.v, self.dim_v);
        set(&mut spec.feature_dims.t, self.dim_t);
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(s) = self.separation {
            spec.separation = s;
        }
        if let Some(n) = self.noise {
            spec.noise = n;
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// A check that ran but did not pass.
struct Failed(String);

enum Outcome {
    Done,
    Failed(Failed),
}

fn execute(command: Command, out: &mut dyn Write) -> Result<Outcome> {
    let print = |out: &mut dyn Write, text: &str| out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e));
    match command {
        Command::Train { data, settings } => {
            let config = settings.resolve(toml::Table::new())?;
            let dataset = load_dataset(&data)?;
            let outcome = run(&config, &dataset)?;
            write_run(&config.out, &config, &outcome)?;
            print(
                out,
                &format!(
                    "best epoch {} of {} (val w-f1 {:.4}); test split:\n{}wrote {}\n",
                    outcome.training.best_epoch,
                    outcome.training.log.len(),
                    outcome.training.best_val.weighted_f1,
                    outcome.test.table(TABLE_MIN_SUPPORT),
                    config.out.display()
                ),
            )?;
        }
        Command::Eval {
            checkpoint: dir,
            data,
            report,
            min_support,
        } => {
            let model = checkpoint::load(&dir)?;
            let dataset = load_dataset(&data)?;
            let metrics = evaluate(&model, &dataset)?;
            if let Some(path) = report {
                write_file(&path, &metrics.to_json())?;
            }
            print(out, &metrics.table(min_support))?;
        }
        Command::Gradcheck { settings, tolerance } => {
            let mut base = toml::Table::new();
            base.insert("d".into(), 8.into());
            base.insert("k".into(), 2.into());
            let config = settings.resolve(base)?;
            let report = run_suite(&config.model, config.seed)?;
            let max = report.max_relative_error();
            print(out, &format!("{}max relative error {max:.3e} (tolerance {tolerance:e})\n", report.render()))?;
            if !report.passes(tolerance) {
                return Ok(Outcome::Failed(Failed(format!(
                    "gradient check failed: {max:e} exceeds {tolerance:e}"
                ))));
            }
        }
        Command::Synth { out: path, spec, synth } => {
            let mut s = match spec {
                Some(p) => toml::from_str(&read_text(&p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                None => SynthSpec::default(),
            };
            synth.apply(&mut s);
            let dataset = synth_generate(&s)?;
            dataset.save(&path)?;
            print(
                out,
                &format!(
                    "wrote {} conversations, {} utterances to {}\n",
                    dataset.len(),
                    dataset.utterance_count(),
                    path.display()
                ),
            )?;
        }
        Command::Ablate { data, axes, settings } => {
            let config = settings.resolve(toml::Table::new())?;
            let axes = axes
                .iter()
                .map(|a| a.trim())
                .filter(|a| !a.is_empty())
                .map(str::parse)
                .collect::<Result<Vec<Axis>>>()?;
            let dataset = load_dataset(&data)?;
            let rows = ablate(&config, &dataset, &axes)?;
            fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
            let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
            write_file(&config.out.join("ablation.json"), &json)?;
            print(out, &ablation_table(&rows))?;
        }
    }
    Ok(Outcome::Done)
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
                EXIT_INVALID
            } else {
                let _ = out.write_all(text.as_bytes());
                EXIT_OK
            };
        }
    };
    match execute(cli.command, out) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::Failed(Failed(message))) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_FAILURE
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Divergence is a runtime failure; every other error traces back to the
/// flags, config, files or data supplied.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_FAILURE,
        Error::Within { source, .. } | Error::Variant { source, .. } => exit_code(source),
        _ => EXIT_INVALID,
    }
}

/// Runs on the process arguments with standard streams.
pub fn main_exit_code() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
