use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roundtrip_core::grpo::StepLog;
use roundtrip_core::harness::{self, HarnessError, RunConfig, ScoreBlock};
use roundtrip_core::metrics::fixtures;
use roundtrip_core::roundtrip::{CurveRow, RoundtripError};
use roundtrip_core::synthdata::{Benchmark, BenchmarkSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_CONFORMANCE: u8 = 4;

#[derive(Parser)]
#[command(name = "roundtrip", version = harness::VERSION, about = "Round-trip GRPO translation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warm-start, train and evaluate one run.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. `--set grpo.learning_rate=1e-4`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on a held-out split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train once per reward mode and write the gain table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print a run's curves as CSV.
    Curves {
        #[arg(long)]
        run: PathBuf,
        /// Emit one row per optimizer step from the step log instead.
        #[arg(long)]
        per_step: bool,
    },
    /// Write a synthetic benchmark as plain-text corpora.
    GenData {
        /// TOML benchmark description; defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Check the metric implementations against the golden fixtures.
    FixturesCheck {
        #[arg(long, default_value = "fixtures/metrics.json")]
        fixtures: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
    Conformance(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Roundtrip(RoundtripError::Config(_)) => {
                Failure::Config(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Conformance(m)) => {
            eprintln!("conformance failure: {m}");
            ExitCode::from(EXIT_CONFORMANCE)
        }
    }
}

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, Failure> {
    RunConfig::load(path, overrides).map_err(|e| Failure::Config(e.to_string()))
}

fn print_block(label: &str, b: &ScoreBlock) {
    println!("{label:<8} forward chrF++ {:>7.2}   fluency {:>8.4}", b.forward_chrf, b.fluency);
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let s = harness::run_train(&cfg)?;
            print_block("before", &s.before);
            print_block("after", &s.after);
            println!(
                "delta    forward chrF++ {:>+7.2}   fluency {:>+8.4}",
                s.after.forward_chrf - s.before.forward_chrf,
                s.after.fluency - s.before.fluency
            );
            println!("{} steps, {} reference syncs, run dir {}", s.steps, s.ref_syncs, cfg.output_dir.display());
        }
        Command::Eval { checkpoint, split } => {
            if !checkpoint.exists() {
                return Err(Failure::Runtime(format!("checkpoint {} not found", checkpoint.display())));
            }
            let r = harness::run_eval(&checkpoint, &split)?;
            println!("split {} at step {}", r.split, r.step);
            if let Some(b) = &r.baseline {
                print_block("before", b);
            }
            print_block("after", &r.scores);
        }
        Command::Ablate { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let rows = harness::run_ablate(&cfg)?;
            println!("{:<10} {:>8} {:>8} {:>8}", "mode", "before", "after", "gain");
            for r in rows {
                println!("{:<10} {:>8.2} {:>8.2} {:>+8.2}", r.mode.name(), r.before, r.after, r.gain);
            }
        }
        Command::Curves { run, per_step } => {
            if per_step {
                let path = run.join("steps.jsonl");
                let records = StepLog::read(&path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
                println!("step,mean_reward,mean_abs_adv,kl_mean,loss");
                for r in records {
                    println!("{},{:.6},{:.6},{:.6},{:.6}", r.step, r.mean_reward, r.mean_abs_adv, r.kl_mean, r.loss);
                }
            } else {
                println!("{}", CurveRow::CSV_HEADER);
                for row in harness::read_curves(&run)? {
                    println!("{}", row.to_csv());
                }
            }
        }
        Command::GenData { spec, out } => {
            let spec: BenchmarkSpec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                    toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
                }
                None => BenchmarkSpec::default(),
            };
            spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let bench = Benchmark::build(&spec).map_err(|e| Failure::Runtime(e.to_string()))?;
            bench.write_dir(&out).map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("wrote benchmark to {}", out.display());
        }
        Command::FixturesCheck { fixtures: path, tolerance } => {
            let records = fixtures::load(&path).map_err(|e| Failure::Runtime(e.to_string()))?;
            let report = fixtures::check(&records, tolerance);
            println!(
                "{} records, max |Δ chrF++| {:.2e}, max |Δ BLEU| {:.2e}",
                report.checked, report.max_chrf_error, report.max_bleu_error
            );
            if !report.passed() {
                for m in report.mismatches.iter().take(10) {
                    println!("  record {} {}: expected {:.6}, got {:.6}", m.index, m.metric, m.expected, m.actual);
                }
                return Err(Failure::Conformance(format!("{} mismatches", report.mismatches.len())));
            }
            if records.is_empty() {
                return Err(Failure::Conformance("fixture file is empty".into()));
            }
        }
    }
    Ok(())
}
