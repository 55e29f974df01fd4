use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use banditlab::environment::ActionSpaceSpec;
use banditlab::harness::{self, ExperimentConfig};
use banditlab::instances::{self, DatasetConfig, NoiseChoice};
use banditlab::Error;

#[derive(Parser)]
#[command(name = "banditlab", version, about = "Protected linear bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file.
    Instance {
        #[command(subcommand)]
        kind: InstanceCmd,
    },
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute summary.csv from a directory's traces.csv.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Ball,
    Resampled,
}

#[derive(Subcommand)]
enum InstanceCmd {
    /// Random instance with a rank-s protected subspace.
    Synth {
        #[arg(long)]
        d: usize,
        #[arg(long = "L")]
        l: usize,
        #[arg(long)]
        s: usize,
        #[arg(long = "M", default_value_t = 1.0)]
        m: f64,
        #[arg(long = "R")]
        r: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "ball")]
        space: Space,
        /// Arms per round for the resampled space.
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// One of the two lower-bound instances for horizon T.
    Lowerbound {
        #[arg(long)]
        horizon: u64,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        which: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Fit an instance from a dosing CSV.
    Dataset {
        #[arg(long)]
        csv: PathBuf,
        /// Comma-separated dose column names.
        #[arg(long, value_delimiter = ',', required = true)]
        dose_columns: Vec<String>,
        #[arg(long)]
        inr_column: String,
        #[arg(long)]
        stability_column: String,
        #[arg(long, default_value_t = 2.5)]
        inr_target: f64,
        #[arg(long)]
        ridge: Option<f64>,
        /// Fixed noise scale; defaults to the INR residual estimate.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long = "M", default_value_t = 1.0)]
        m: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// The two-arm optimism counterexample.
    Example1 {
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Args)]
struct OutArg {
    #[arg(long)]
    out: PathBuf,
}

fn instance(cmd: InstanceCmd) -> banditlab::Result<()> {
    let (inst, out) = match cmd {
        InstanceCmd::Synth {
            d,
            l,
            s,
            m,
            r,
            seed,
            space,
            count,
            out,
        } => {
            let spec = match space {
                Space::Ball => ActionSpaceSpec::UnitBall,
                Space::Resampled => ActionSpaceSpec::FiniteResampled { count, seed },
            };
            (instances::gen_synthetic(d, l, s, m, r, seed, spec)?, out.out)
        }
        InstanceCmd::Lowerbound {
            horizon,
            which,
            seed,
            out,
        } => {
            let pair = instances::gen_lower_bound(horizon, seed)?;
            (if which == 1 { pair.instance1 } else { pair.instance2 }, out.out)
        }
        InstanceCmd::Dataset {
            csv,
            dose_columns,
            inr_column,
            stability_column,
            inr_target,
            ridge,
            noise,
            m,
            out,
        } => {
            let mut cfg = DatasetConfig::new(dose_columns, &inr_column, &stability_column);
            cfg.inr_target = inr_target;
            cfg.ridge = ridge;
            cfg.norm_bound = m;
            if let Some(v) = noise {
                cfg.noise = NoiseChoice::Fixed(v);
            }
            let (inst, report) = instances::ingest_dataset(&csv, &cfg)?;
            eprintln!(
                "fitted {} arms from {} rows ({} dropped), R = {:.6}",
                report.arms, report.rows_read, report.rows_dropped, report.noise
            );
            (inst, out.out)
        }
        InstanceCmd::Example1 { out } => (instances::gen_example1(), out.out),
    };
    inst.write(&out)
}

/// Exit 1 for bad input, 2 for failures while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) | Error::Json(_) | Error::Parse { .. } => 1,
        _ => 2,
    }
}

fn run(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), (u8, String)> {
    let fail = |e: Error| (exit_code(&e), e.to_string());
    let mut cfg = ExperimentConfig::load(&config).map_err(|e| (1, e.to_string()))?;
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    cfg.validate().map_err(|e| (1, e.to_string()))?;
    let instance = cfg.build_instance().map_err(|e| match e {
        Error::Io(io) => (1, format!("instance file: {io}")),
        other => fail(other),
    })?;
    let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("banditlab-out"));
    let traces = harness::run_experiment_on(&cfg, &instance).map_err(fail)?;
    harness::write_outputs(&dir, &traces).map_err(fail)?;
    let failed = traces.iter().filter(|t| t.error.is_some()).count();
    eprintln!("{} runs written to {} ({failed} failed)", traces.len(), dir.display());
    if failed > 0 {
        return Err((2, format!("{failed} of {} runs failed; see runs.json", traces.len())));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Instance { kind } => instance(kind).map_err(|e| (exit_code(&e), e.to_string())),
        Command::Run { config, out, seed } => run(config, out, seed),
        Command::Aggregate { input } => harness::aggregate_dir(&input)
            .map(|_| ())
            .map_err(|e| (exit_code(&e), e.to_string())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
