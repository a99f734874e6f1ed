//! Command-line front end for the `sonofed` library.

pub mod commands;
pub mod config;
pub mod dataset;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use sonofed::Error;

pub use commands::Global;
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "sonofed", version, about = "Federated masked-image pre-training on ultrasound phantoms")]
pub struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic phantom dataset.
    Generate,
    /// Federated pre-training; writes a checkpoint and loss_trace.csv.
    Pretrain {
        /// Dataset directory from `generate`; generated in memory if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint manifest to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train a linear probe on frozen encoder features.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labeled dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Optional held-out dataset to score instead of the validation split.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Compute metrics for masks, probe scores, or an AoP pair.
    Eval {
        /// Predicted mask file or directory.
        #[arg(long, requires = "gt")]
        pred: Option<PathBuf>,
        /// Ground-truth mask file or directory.
        #[arg(long, requires = "pred")]
        gt: Option<PathBuf>,
        /// scores.csv written by `finetune`.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Pubic symphysis mask.
        #[arg(long, requires = "fh")]
        ps: Option<PathBuf>,
        /// Fetal head mask.
        #[arg(long, requires = "ps")]
        fh: Option<PathBuf>,
    },
    /// Convert between linear and convex scan geometry.
    Transform {
        input: PathBuf,
        #[arg(long, value_enum)]
        direction: commands::Direction,
    },
    /// Apply mixed corruption to an image.
    Corrupt {
        input: PathBuf,
        /// Overrides the corruption probability.
        #[arg(long)]
        p: Option<f64>,
    },
    /// Show which patches texture-guided masking hides.
    MaskPreview { input: PathBuf },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::MalformedFile(_) | Error::ChecksumMismatch { .. } => EXIT_IO,
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn global(cli: &Cli) -> Result<Global, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.threads == 0 {
        return Err(Error::InvalidConfig {
            field: "threads".into(),
            reason: "must be >= 1".into(),
        });
    }
    Ok(Global {
        config,
        out: cli.out.clone(),
        threads: cli.threads,
    })
}

fn execute(cli: &Cli) -> Result<(), Error> {
    let g = global(cli)?;
    match &cli.command {
        Command::Generate => {
            let n = commands::cmd_generate(&g)?;
            println!("generated {n} samples in {}", g.out.display());
        }
        Command::Pretrain { data, resume } => {
            let s = commands::cmd_pretrain(&g, data.as_deref(), resume.as_deref())?;
            println!(
                "pretrained {} rounds: loss {:.6} -> {:.6}; checkpoint {}",
                s.rounds,
                s.initial_loss,
                s.final_loss,
                s.checkpoint.display()
            );
        }
        Command::Finetune { checkpoint, data, test } => {
            let r = commands::cmd_finetune(&g, checkpoint, data, test.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&r).expect("plain struct"));
        }
        Command::Eval { pred, gt, scores, ps, fh } => {
            let inputs = commands::EvalInputs {
                pred: pred.as_deref(),
                gt: gt.as_deref(),
                scores: scores.as_deref(),
                ps: ps.as_deref(),
                fh: fh.as_deref(),
            };
            let report = commands::cmd_eval(&g, &inputs)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("json value"));
        }
        Command::Transform { input, direction } => {
            println!("{}", commands::cmd_transform(&g, input, *direction)?.display());
        }
        Command::Corrupt { input, p } => {
            println!("{}", commands::cmd_corrupt(&g, input, *p)?.display());
        }
        Command::MaskPreview { input } => {
            let (path, masked) = commands::cmd_mask_preview(&g, input)?;
            println!("{} ({} patches masked)", path.display(), masked.len());
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
