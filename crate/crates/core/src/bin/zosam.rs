use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zosam::harness::{
    compare_runs, run_experiment, run_slices, selftest, ExperimentConfig, RunArtifacts,
};
use zosam::Error;

const EXIT_RUN_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "zosam",
    version,
    about = "Sparse training with SGD, SAM and zero-order SAM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunFlags {
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Output directory.
    #[arg(long, env = "ZOSAM_OUT_DIR", default_value = "zosam-out")]
    out_dir: PathBuf,
    /// Worker threads for independent runs (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every optimizer and seed in a config; writes metrics.csv.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Summarize one or more metrics files.
    Compare {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Accuracy threshold; defaults to the one echoed in the first file.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train with the first seed and write loss slices at the final point.
    Slice {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run internal consistency checks.
    Selftest,
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Schema { .. } | Error::InvalidArgument(_) => EXIT_CONFIG,
        _ => EXIT_RUN_FAILURE,
    }
}

fn load(path: &PathBuf, flags: &RunFlags) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        line: 0,
        key: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = flags.seed_override {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Error>
where
    T: Send,
{
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidArgument("--jobs must be at least 1".into())),
        Some(n) => {
            #[cfg(feature = "parallel")]
            {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok(pool.install(f))
            }
            #[cfg(not(feature = "parallel"))]
            {
                let _ = n;
                Ok(f())
            }
        }
    }
}

fn report(artifacts: &RunArtifacts) -> ExitCode {
    for (variant, seed, err) in &artifacts.failures {
        eprintln!("run {} seed {seed} failed: {err}", variant.label());
    }
    if artifacts.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_RUN_FAILURE)
    }
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_for(&err))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run { config, flags } => {
            let result = load(&config, &flags)
                .and_then(|cfg| with_jobs(flags.jobs, || run_experiment(&cfg, &flags.out_dir)))
                .and_then(|r| r);
            match result {
                Ok(a) => {
                    println!("{}", a.metrics.display());
                    report(&a)
                }
                Err(e) => fail(e),
            }
        }
        Command::Slice { config, flags } => {
            let result = load(&config, &flags)
                .and_then(|cfg| with_jobs(flags.jobs, || run_slices(&cfg, &flags.out_dir)))
                .and_then(|r| r);
            match result {
                Ok(a) => {
                    for p in &a.slices {
                        println!("{}", p.display());
                    }
                    report(&a)
                }
                Err(e) => fail(e),
            }
        }
        Command::Compare { files, threshold } => match compare_runs(&files, threshold) {
            Ok(c) => {
                print!("{}", c.to_table());
                ExitCode::SUCCESS
            }
            Err(Error::Io(e)) => fail(Error::Config {
                line: 0,
                key: "files".into(),
                message: e.to_string(),
            }),
            Err(e) => fail(e),
        },
        Command::Selftest => {
            let checks = selftest();
            for c in &checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("{tag} {} {}", c.name, c.detail);
            }
            if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_RUN_FAILURE)
            }
        }
    }
}
