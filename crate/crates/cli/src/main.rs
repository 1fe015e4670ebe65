//! `scnet`: synthetic data, training, evaluation and verification tools.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error, 3 gradient check failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scnet::data::dataset::{make_dataset, DatasetSpec, Manifest};
use scnet::data::sparsify::patterns;
use scnet::data::{gen_sample, DepthSample};
use scnet::network::load_checkpoint;
use scnet::{gradcheck, pipeline, Error};

const USAGE: u8 = 1;
const RUNTIME: u8 = 2;
const GRADCHECK_FAILED: u8 = 3;

const DEFAULT_HEIGHT: usize = 32;
const DEFAULT_WIDTH: usize = 96;
const DEFAULT_KEEP_RATE: f64 = 0.05;
const DEFAULT_PATTERN: &str = "uniform";
const DEFAULT_SEED: u64 = 0;

#[derive(Parser)]
#[command(
    name = "scnet",
    version,
    about = "Depth completion with a spatial and channel attention enhancer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Gen(GenArgs),
    /// Train a network; writes a checkpoint and a step log.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// key=value file with network and training settings.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Step log CSV (default: <out>.log.csv).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint's refined output on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// Check a single unit; all units when omitted.
        #[arg(long)]
        unit: Option<String>,
        /// List unit names and exit.
        #[arg(long)]
        list: bool,
    },
    /// Train and evaluate every row of a grid file.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-channel activations of one layer as 16-bit PGM files.
    Dump {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sample: usize,
        #[arg(long)]
        layer: String,
        #[arg(long)]
        out: PathBuf,
        /// Dataset manifest to take the sample from; without it the sample
        /// is regenerated with the `gen` defaults.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_HEIGHT)]
    height: usize,
    #[arg(long, default_value_t = DEFAULT_WIDTH)]
    width: usize,
    #[arg(long, default_value_t = DEFAULT_KEEP_RATE)]
    keep_rate: f64,
    #[arg(long, default_value = DEFAULT_PATTERN)]
    pattern: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

impl GenArgs {
    fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            n: self.n,
            height: self.height,
            width: self.width,
            keep_rate: self.keep_rate,
            pattern: self.pattern.clone(),
            seed: self.seed,
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
    Gradcheck,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            // lookups always resolve a user-supplied name
            Error::Lookup { .. } => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(RUNTIME)
        }
        Err(Failure::Gradcheck) => ExitCode::from(GRADCHECK_FAILED),
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Gen(args) => gen(&args),
        Command::Train { data, config, out, log } => {
            let log = log.unwrap_or_else(|| pipeline::default_log_path(&out));
            let logs = pipeline::train_files(&data, &config, &out, &log)?;
            let (first, last) = (logs[0], logs[logs.len() - 1]);
            println!(
                "trained {} steps: loss {} -> {}; checkpoint {}, log {}",
                logs.len(),
                first.loss,
                last.loss,
                out.display(),
                log.display()
            );
            Ok(())
        }
        Command::Eval { data, ckpt, report } => {
            let r = pipeline::eval_files(&data, &ckpt, &report)?;
            if r.degenerate {
                eprintln!("warning: no valid ground-truth pixels");
            }
            let t = r.total;
            println!(
                "samples={} valid_pixels={} rmse_mm={} mae_mm={} irmse_1perkm={} imae_1perkm={} excluded_inverse_pixels={}",
                r.samples, t.valid_pixels, t.rmse_mm, t.mae_mm, t.irmse_1perkm, t.imae_1perkm, t.excluded_inverse_pixels
            );
            Ok(())
        }
        Command::Gradcheck { unit, list } => {
            if list {
                for n in gradcheck::units().names() {
                    println!("{n}");
                }
                return Ok(());
            }
            let reports = gradcheck::run(unit.as_deref())?;
            let mut ok = true;
            for r in &reports {
                print!("{r}");
                ok &= r.passed();
            }
            if ok {
                Ok(())
            } else {
                Err(Failure::Gradcheck)
            }
        }
        Command::Ablate { data, grid, out } => {
            println!("{}", pipeline::ABLATION_HEADER);
            pipeline::ablate_files(&data, &grid, &out, |r| println!("{}", r.csv_row()))?;
            Ok(())
        }
        Command::Dump {
            ckpt,
            sample,
            layer,
            out,
            data,
        } => {
            let net = load_checkpoint(&ckpt)?;
            let s = dump_sample(data.as_deref(), sample)?;
            let maps = net.dump_activations(&s, &layer, &out)?;
            println!("wrote {} images for `{layer}` to {}", maps.len(), out.display());
            Ok(())
        }
    }
}

fn gen(args: &GenArgs) -> Result<(), Failure> {
    let spec = args.spec();
    if spec.n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    spec.scene(0).validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if !(spec.keep_rate > 0.0 && spec.keep_rate <= 1.0) {
        return Err(Failure::Usage(format!(
            "--keep-rate {} must lie in (0, 1]",
            spec.keep_rate
        )));
    }
    patterns().get(&spec.pattern)?;
    let manifest = make_dataset(&spec, &args.out)?;
    println!("wrote {} samples; manifest {}", spec.n, manifest.display());
    Ok(())
}

fn dump_sample(data: Option<&Path>, index: usize) -> Result<DepthSample, Failure> {
    match data {
        Some(path) => Ok(Manifest::load(path)?.sample(index)?),
        None => {
            let spec = DatasetSpec {
                n: index + 1,
                height: DEFAULT_HEIGHT,
                width: DEFAULT_WIDTH,
                keep_rate: DEFAULT_KEEP_RATE,
                pattern: DEFAULT_PATTERN.into(),
                seed: DEFAULT_SEED,
            };
            Ok(gen_sample(&spec.scene(index), &spec.sparsify())?)
        }
    }
}
