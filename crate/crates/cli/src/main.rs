//! `uses` command-line front end.

mod config;
mod eval;
mod infer;
mod simulate;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use uses_core::dsp::WavFormat;
use uses_core::model::MemoryMode;
use uses_core::{ErrorClass, Result, UsesError};

#[derive(Parser)]
#[command(name = "uses", version, about = "Universal speech enhancement and separation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset: WAV files plus a JSON-lines manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Seed of the random mixture generator (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a manifest.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Validation manifest; the training manifest is reused when absent.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the last state saved in `--out`.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enhance a WAV file; the output is aligned to the reference channel.
    Enhance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Dereverb)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Format::Float32)]
        format: Format,
    },
    /// Separate a WAV file into one output channel per source.
    Separate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Float32)]
        format: Format,
    },
    /// Score estimates listed in a manifest (or produced by a checkpoint).
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "si_snr,sdr,si_snri")]
        metrics: Vec<String>,
        /// Report path; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Remove noise only (second memory group).
    Denoise,
    /// Remove noise and reverberation (first memory group).
    Dereverb,
}

impl From<Mode> for MemoryMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Denoise => MemoryMode::Denoise,
            Mode::Dereverb => MemoryMode::DenoiseDereverb,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Pcm16,
    Float32,
}

impl From<Format> for WavFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Pcm16 => WavFormat::Pcm16,
            Format::Float32 => WavFormat::Float32,
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("USES_NUM_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsesError::Config(format!("USES_NUM_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| UsesError::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Simulate { config, out_dir, seed } => simulate::run(&config, &out_dir, seed),
        Command::Train { config, data, val, out, resume, seed } => train::run(train::Args {
            config: config.as_deref(),
            data: &data,
            val: val.as_deref(),
            out: &out,
            resume,
            seed,
        }),
        Command::Enhance { input, output, checkpoint, mode, format } => {
            infer::enhance(&input, &output, &checkpoint, mode.into(), format.into())
        }
        Command::Separate { input, output, checkpoint, format } => {
            infer::separate(&input, &output, &checkpoint, format.into())
        }
        Command::Eval { manifest, checkpoint, metrics, output } => {
            eval::run(&manifest, checkpoint.as_deref(), &metrics, output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Io => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}
