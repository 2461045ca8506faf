//! `arpoison`: search for AR processes, generate perturbations, audit their
//! separability, and poison image datasets reproducibly.
//!
//! Every command is a pure function of its flags and input files; re-running
//! with identical inputs rewrites identical bytes, whatever `--threads` says.

mod commands;
mod common;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use arpoison::Error;

/// Exit codes: 0 success, 2 validation, 3 i/o, 4 search exhausted.
const EXIT_VALIDATION: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_SEARCH_EXHAUSTED: u8 = 4;

#[derive(Parser)]
#[command(name = "arpoison", version, about, max_term_width = 100)]
struct Cli {
    /// Worker threads for sample-level parallelism (0 = all cores).
    #[arg(long, global = true, env = "ARPOISON_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetKind {
    /// CIFAR-10 binary batches (3073-byte records).
    Cifar10,
    /// One subdirectory per class holding 8-bit RGB images.
    ImageDir,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L2,
    Linf,
}

impl From<NormArg> for arpoison::NormKind {
    fn from(value: NormArg) -> Self {
        match value {
            NormArg::L2 => arpoison::NormKind::L2,
            NormArg::Linf => arpoison::NormKind::Linf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    /// Grid of uniform Gaussian-colored patches.
    Regions,
    /// Dense Gaussian noise per class.
    Random,
}

#[derive(Args)]
struct PoisonCommonArgs {
    /// Container format of the input dataset.
    #[arg(long, value_enum)]
    dataset_kind: DatasetKind,
    /// Input dataset path (file or directory, per --dataset-kind).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output container directory.
    #[arg(long)]
    out: PathBuf,
    /// Perturbation size on the `[0,1]` pixel scale.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Norm the perturbation is sized in.
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    norm: NormArg,
    /// Fraction of samples to poison, chosen uniformly at random (seeded).
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    /// Master seed; every per-sample seed derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also export lossy 8-bit PNG images to this directory.
    #[arg(long)]
    export_8bit: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Random-search a set of diverse, stable AR processes.
    Search {
        /// Number of classes the set will poison.
        #[arg(long)]
        classes: usize,
        /// Processes per class (one per image channel).
        #[arg(long, default_value_t = 3)]
        channels: usize,
        /// Sliding-window side length V.
        #[arg(long, default_value_t = 3)]
        window: usize,
        /// Minimum pairwise response T required for acceptance.
        #[arg(long)]
        threshold: f64,
        /// Master seed; the whole search is a function of it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Candidate budget before giving up.
        #[arg(long, default_value_t = 1_000_000)]
        max_attempts: u64,
        /// Probe plane side length for stability/diversity checks.
        #[arg(long, default_value_t = 36)]
        probe_size: usize,
        /// Gaussian start signals per stability check.
        #[arg(long, default_value_t = 3)]
        stability_trials: usize,
        /// Probe planes with l2 norm above this are rejected as diverging.
        #[arg(long, default_value_t = 1e4)]
        stability_bound: f64,
        /// Where to write the coefficient-set file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate bare AR perturbation tensors for one class.
    Generate {
        /// Coefficient-set file, or the literal `published`.
        #[arg(long)]
        coeffs: String,
        /// Class whose processes drive the noise.
        #[arg(long)]
        class: usize,
        /// Number of perturbations to generate.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = NormArg::L2)]
        norm: NormArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Extra rows/columns cropped beyond the start signal.
        #[arg(long, default_value_t = 2)]
        extra_crop: usize,
        /// Output container directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit separability with the hand-specified CNN (no training).
    Verify {
        /// Coefficient-set file, or the literal `published` (default).
        #[arg(long, default_value = "published")]
        coeffs: String,
        /// Fresh perturbations generated per class.
        #[arg(long, default_value_t = 1000)]
        per_class: usize,
        /// Side length of the cropped audit planes.
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Audit a single channel (default: all channels).
        #[arg(long)]
        channel: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        extra_crop: usize,
        /// Write the full audit report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Poison a dataset sample-wise with AR noise.
    Poison {
        #[command(flatten)]
        common: PoisonCommonArgs,
        /// Coefficient-set file, or the literal `published`.
        #[arg(long)]
        coeffs: String,
        /// Extra rows/columns cropped beyond the start signal.
        #[arg(long, default_value_t = 2)]
        extra_crop: usize,
    },
    /// Poison a dataset with a class-wise baseline noise.
    Baseline {
        #[command(flatten)]
        common: PoisonCommonArgs,
        /// Which baseline noise to use.
        #[arg(long, value_enum)]
        kind: BaselineArg,
        /// Patch count for regions noise (perfect square dividing the side).
        #[arg(long, default_value_t = 16)]
        p: usize,
        /// Number of classes (default: highest label + 1).
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Rebuild a container byte-identically from its manifest.
    Replay {
        /// The manifest to replay.
        #[arg(long)]
        manifest: PathBuf,
        /// Source dataset (required unless the manifest holds bare
        /// perturbations).
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        dataset_kind: Option<DatasetKind>,
        /// Coefficient-set file, or the literal `published`.
        #[arg(long)]
        coeffs: Option<String>,
        /// Output container directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a poison container; optionally dump perturbation images.
    Inspect {
        /// Container directory to inspect.
        #[arg(long)]
        container: PathBuf,
        /// Write normalized per-sample perturbation PNGs here (needs --in).
        #[arg(long)]
        dump_perturbations: Option<PathBuf>,
        /// Clean source dataset, for perturbation dumps.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        dataset_kind: Option<DatasetKind>,
        /// Maximum number of perturbation images to dump.
        #[arg(long, default_value_t = 16)]
        limit: usize,
    },
}

fn error_category(err: &Error) -> (&'static str, u8) {
    match err {
        Error::Io(_) | Error::Image(_) => ("io", EXIT_IO),
        Error::SearchExhausted(_) => ("search-exhausted", EXIT_SEARCH_EXHAUSTED),
        _ => ("validation", EXIT_VALIDATION),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let threads = if cli.threads == 0 { num_threads_default() } else { cli.threads };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Search {
            classes,
            channels,
            window,
            threshold,
            seed,
            max_attempts,
            probe_size,
            stability_trials,
            stability_bound,
            out,
        } => commands::search(commands::SearchArgs {
            classes,
            channels,
            window,
            threshold,
            seed,
            max_attempts,
            probe_size,
            stability_trials,
            stability_bound,
            out,
        }),
        Command::Generate {
            coeffs,
            class,
            count,
            height,
            width,
            epsilon,
            norm,
            seed,
            extra_crop,
            out,
        } => commands::generate(commands::GenerateArgs {
            coeffs,
            class,
            count,
            height,
            width,
            epsilon,
            norm: norm.into(),
            seed,
            extra_crop,
            out,
        }),
        Command::Verify { coeffs, per_class, size, channel, seed, extra_crop, report } => {
            commands::verify(commands::VerifyArgs {
                coeffs,
                per_class,
                size,
                channel,
                seed,
                extra_crop,
                report,
            })
        }
        Command::Poison { common, coeffs, extra_crop } => commands::poison(
            commands::PoisonArgs {
                dataset_kind: common.dataset_kind,
                input: common.input,
                out: common.out,
                epsilon: common.epsilon,
                norm: common.norm.into(),
                fraction: common.fraction,
                seed: common.seed,
                export_8bit: common.export_8bit,
            },
            coeffs,
            extra_crop,
        ),
        Command::Baseline { common, kind, p, classes } => commands::baseline(
            commands::PoisonArgs {
                dataset_kind: common.dataset_kind,
                input: common.input,
                out: common.out,
                epsilon: common.epsilon,
                norm: common.norm.into(),
                fraction: common.fraction,
                seed: common.seed,
                export_8bit: common.export_8bit,
            },
            kind,
            p,
            classes,
        ),
        Command::Replay { manifest, input, dataset_kind, coeffs, out } => {
            commands::replay(manifest, input, dataset_kind, coeffs, out)
        }
        Command::Inspect { container, dump_perturbations, input, dataset_kind, limit } => {
            commands::inspect(container, dump_perturbations, input, dataset_kind, limit)
        }
    }
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = error_category(&err);
            // One machine-parseable line on stderr.
            let msg = err.to_string().replace('\n', " ");
            eprintln!("error: {kind}: {msg}");
            ExitCode::from(code)
        }
    }
}
