//! The `dwvit` command line.
//!
//! Results go to standard output and diagnostics to standard error. Exit
//! codes: 0 on success, 1 when a verification fails, 2 on usage, config or
//! input errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analyzer::Analysis;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::oracle::OracleReport;
use crate::tensor::io::{self, DynTensor};
use crate::tensor::{Element, Tensor};
use crate::verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dwvit", version, about = "Dynamic multi-scale window vision transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print every layer's input and output shape and effective windows.
    Trace {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = TraceFormat::Text)]
        format: TraceFormat,
    },
    /// Run a forward pass on a tensor file and write the logits.
    Forward {
        #[command(flatten)]
        model: ModelArgs,
        /// Checkpoint directory written by `Model::save_checkpoint`.
        #[arg(long, conflicts_with = "seed", required_unless_present = "seed")]
        weights: Option<PathBuf>,
        /// Generate parameters deterministically from this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// `[H, W, C]` image tensor; its precision selects the arithmetic.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Parameter and FLOP report with the closed-form comparison.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
    /// Compare analytic and finite-difference gradients on the toy model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Run every invariant and oracle suite.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    DwT,
    DwB,
    /// The tiny layout with one window of 7 and no dynamic weighting.
    SwinT,
    Toy,
}

impl Preset {
    pub fn config(self) -> ModelConfig {
        match self {
            Preset::DwT => ModelConfig::dw_t(),
            Preset::DwB => ModelConfig::dw_b(),
            Preset::SwinT => ModelConfig::single_window_t(7),
            Preset::Toy => ModelConfig::toy(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model configuration file (JSON).
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration instead of a file.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Override the configured input size.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub image_size: Option<Vec<usize>>,
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => ModelConfig::load(path)?,
            (None, Some(p)) => p.config(),
            (None, None) => return Err(Error::Config("either --config or --preset is required".into())),
        };
        if let Some(size) = &self.image_size {
            cfg.image_size = [size[0], size[1]];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Table,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(rendered.as_bytes()) } else { out.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match execute(&cli.command, out, err) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_VERIFY,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Runs a parsed command. `Ok(false)` means a verification failed.
pub fn execute(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<bool> {
    match command {
        Command::Trace { model, format } => {
            let cfg = model.resolve()?;
            let trace = Model::<f32>::skeleton(&cfg)?.trace();
            match format {
                TraceFormat::Text => {
                    for e in &trace {
                        writeln!(out, "{e}").map_err(io_err)?;
                    }
                }
                TraceFormat::Json => {
                    writeln!(out, "{}", serde_json::to_string_pretty(&trace)?).map_err(io_err)?;
                }
            }
            Ok(true)
        }
        Command::Forward {
            model,
            weights,
            seed,
            input,
            output,
        } => {
            let cfg = model.resolve()?;
            match io::read(input)? {
                DynTensor::F32(image) => forward::<f32>(&cfg, weights.as_ref(), *seed, &image, output)?,
                DynTensor::F64(image) => forward::<f64>(&cfg, weights.as_ref(), *seed, &image, output)?,
            }
            Ok(true)
        }
        Command::Analyze { model, format } => {
            let cfg = model.resolve()?;
            let analysis = Analysis::of(&Model::<f32>::skeleton(&cfg)?)?;
            let text = match format {
                ReportFormat::Json => analysis.to_json(),
                ReportFormat::Table => analysis.to_table(),
            };
            writeln!(out, "{}", text.trim_end()).map_err(io_err)?;
            Ok(true)
        }
        Command::Gradcheck { seed, samples } => {
            if *samples == 0 {
                writeln!(err, "warning: --samples 0 checks nothing; passing vacuously").map_err(io_err)?;
            }
            let reports = verify::gradcheck(*seed, *samples)?;
            print_reports(out, "gradient check", &reports)
        }
        Command::Selftest { seed } => {
            let mut ok = true;
            for suite in verify::selftest(*seed)? {
                ok &= print_reports(out, suite.name, &suite.reports)?;
            }
            writeln!(out, "selftest: {}", if ok { "PASS" } else { "FAIL" }).map_err(io_err)?;
            Ok(ok)
        }
    }
}

fn forward<T: Element>(
    cfg: &ModelConfig,
    weights: Option<&PathBuf>,
    seed: Option<u64>,
    image: &Tensor<T>,
    output: &PathBuf,
) -> Result<()> {
    let model = match (weights, seed) {
        (Some(dir), _) => Model::<T>::load_checkpoint(cfg, dir)?,
        (None, Some(seed)) => Model::<T>::build(cfg, seed)?,
        (None, None) => return Err(Error::Config("either --weights or --seed is required".into())),
    };
    io::write(output, &model.forward(image)?)
}

fn print_reports(out: &mut dyn Write, title: &str, reports: &[OracleReport]) -> Result<bool> {
    writeln!(out, "== {title}").map_err(io_err)?;
    for r in reports {
        writeln!(out, "{r}").map_err(io_err)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.case.as_str()).collect();
    if failed.is_empty() {
        writeln!(out, "{title}: {} cases passed", reports.len()).map_err(io_err)?;
    } else {
        writeln!(out, "{title}: {} of {} cases FAILED: {}", failed.len(), reports.len(), failed.join("; ")).map_err(io_err)?;
    }
    Ok(failed.is_empty())
}
