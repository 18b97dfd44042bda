use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uvdro::config::ExperimentConfig;
use uvdro::harness::{self, build_splits, grid, DEFAULT_SHUFFLE_FRACTIONS};
use uvdro::io::write_dataset_csv;
use uvdro::report::{self, format_of, Format};
use uvdro::{Error, Outcome};

/// Robust training over unmeasured variables: experiment runner.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train, validation and test splits to CSV.
    Generate(Common),
    /// Train every objective on the first grid point for one seed.
    Train(Common),
    /// Run the full grid.
    Sweep(Common),
    /// Shuffle ablation: rerun UV-DRO with degraded annotations.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated shuffle fractions.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SHUFFLE_FRACTIONS)]
        fractions: Vec<f64>,
    },
    /// Aggregate an existing records file across seeds.
    Report {
        /// Records file written by `sweep`, `train` or `ablate`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this seed only, replacing the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf), Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        Ok((cfg, out))
    }
}

fn exit_code(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn finish(outcome: &Outcome, out: &Path, format: Format) -> Result<ExitCode, Error> {
    let paths = report::write_report(out, &outcome.records, format)?;
    println!(
        "wrote {} records to {}",
        outcome.records.len(),
        paths.records.display()
    );
    println!("wrote aggregate to {}", paths.aggregate.display());
    if outcome.is_complete() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} records failed", outcome.failures.len());
        Ok(ExitCode::from(1))
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Generate(common) => {
            let (cfg, out) = common.load()?;
            cfg.check_paths()?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            for point in grid(&cfg) {
                for &seed in &cfg.seeds {
                    let s = build_splits(&cfg, point, seed)?;
                    let tag = match (point.alpha_star, point.q) {
                        (Some(a), _) => format!("alpha{a}"),
                        (None, Some(q)) => format!("q{q}"),
                        (None, None) => "default".into(),
                    };
                    for (name, data) in [
                        ("train", &s.train),
                        ("validation", &s.validation),
                        ("test", &s.test),
                    ] {
                        let path = out.join(format!("{}_{tag}_seed{seed}_{name}.csv", cfg.task.name()));
                        write_dataset_csv(&path, data)?;
                        println!("wrote {}", path.display());
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(common) => {
            let (mut cfg, out) = common.load()?;
            cfg.seeds.truncate(1);
            cfg.q_train.truncate(1);
            cfg.alpha_star.truncate(1);
            finish(&harness::run_experiment(&cfg)?, &out, common.format)
        }
        Command::Sweep(common) => {
            let (cfg, out) = common.load()?;
            finish(&harness::run_experiment(&cfg)?, &out, common.format)
        }
        Command::Ablate { common, fractions } => {
            let (cfg, out) = common.load()?;
            let ablation = harness::run_shuffle_ablation(&cfg, &fractions)?;
            for (point, rho) in &ablation.correlations {
                println!(
                    "alpha_star={:?} q={:?}: spearman(fraction, accuracy) = {rho:.3}",
                    point.alpha_star, point.q
                );
            }
            finish(&ablation.outcome, &out, common.format)
        }
        Command::Report { input, out, format } => {
            let records = report::read_records(&input, format_of(&input))?;
            if records.is_empty() {
                return Err(Error::Config(format!("{} holds no records", input.display())));
            }
            let format = format.unwrap_or(format_of(&input));
            let paths = report::write_report(&out, &records, format)?;
            println!("wrote aggregate to {}", paths.aggregate.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
