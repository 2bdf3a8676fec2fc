use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use s4st_core::analysis::{default_exclusions, pcc_matrix, select_complementary, PccMatrix, STTable};
use s4st_harness::error::{invalid, Result};
use s4st_harness::experiment::{self, artifact_root, EstimatorConfig, Workspace};
use s4st_harness::rig::{self, RigSpec};
use s4st_harness::tune::{self, TuneConfig};

#[derive(Parser)]
#[command(name = "s4st", version, about = "Data-free transferable targeted attacks at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment configuration (attack, evaluation, estimators, plots).
    Attack {
        config: PathBuf,
    },
    /// Re-evaluate persisted adversarial examples of an experiment.
    Evaluate {
        experiment: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Fail unless the result equals the stored eval_report.json.
        #[arg(long)]
        check: bool,
    },
    /// Compute one estimator on persisted adversarial examples.
    Estimate {
        #[arg(value_enum)]
        metric: Metric,
        experiment: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Intensity samples per kind (self-transfer).
        #[arg(long, default_value_t = 5)]
        grid_points: usize,
    },
    /// Correlation analysis of self-transferability tables.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Blind search for S4ST parameters on the surrogate.
    Tune {
        config: PathBuf,
    },
    /// Desk rig management.
    Rig {
        #[command(subcommand)]
        what: RigCommand,
    },
    /// Regenerate report.md of an experiment.
    Report {
        experiment: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Alignment,
    SelfTransfer,
    Blackbox,
    Consensus,
}

#[derive(Subcommand)]
enum Analyze {
    /// PCC matrix of an ST table (JSON).
    Pcc {
        table: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Least-correlated kinds for an anchor column of a PCC matrix (JSON).
    SelectAug {
        pcc: PathBuf,
        #[arg(long, default_value = "scaling")]
        anchor: String,
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Extra columns to exclude besides the anchor, translate and crop.
        #[arg(long)]
        exclude: Vec<String>,
    },
}

#[derive(Subcommand)]
enum RigCommand {
    /// Train the surrogate and victims; reuse an existing matching rig.
    Build {
        /// RigSpec JSON; defaults are used when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory; defaults to <artifact root>/rig.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn first_seed(experiment: &Path, seed: Option<u64>) -> Result<u64> {
    match seed {
        Some(s) => Ok(s),
        None => {
            let cfg: experiment::ExperimentConfig = read_json(&experiment.join("config.json"))?;
            Ok(cfg.seeds()[0])
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Attack { config } => {
            let dir = experiment::run_experiment(&config)?;
            println!("{}", dir.display());
        }
        Command::Evaluate { experiment: dir, seed, check } => {
            let seed = first_seed(&dir, seed)?;
            let report = experiment::reevaluate(&dir, seed)?;
            if check {
                let stored: s4st_harness::eval::EvalReport = read_json(&dir.join("runs").join(format!("seed-{seed}")).join("eval_report.json"))?;
                if stored != report {
                    return Err(invalid("re-evaluation differs from the stored report"));
                }
            }
            print_json(&report)?;
        }
        Command::Estimate { metric, experiment: dir, seed, grid_points } => {
            let seed = first_seed(&dir, seed)?;
            let (mut cfg, rig, clean) = experiment::open_experiment(&dir)?;
            let ws = Workspace::new(&rig, &cfg, clean)?;
            let adv = experiment::load_run(&dir, seed, &ws.clean)?;
            cfg.estimators = EstimatorConfig {
                self_transfer: matches!(metric, Metric::SelfTransfer),
                blackbox: matches!(metric, Metric::Blackbox),
                alignment: matches!(metric, Metric::Alignment),
                consensus: matches!(metric, Metric::Consensus),
                grid_points,
            };
            let out = experiment::estimate(&ws, &cfg, &adv.images, None, seed)?;
            print_json(&out)?;
        }
        Command::Analyze { what: Analyze::Pcc { table, out } } => {
            let table: STTable = read_json(&table)?;
            let m = pcc_matrix(&table)?;
            match out {
                Some(path) => fs::write(path, serde_json::to_string_pretty(&m)?)?,
                None => print_json(&m)?,
            }
        }
        Command::Analyze { what: Analyze::SelectAug { pcc, anchor, n, exclude } } => {
            let m: PccMatrix = read_json(&pcc)?;
            let row = m.row(&anchor).ok_or_else(|| invalid(format!("no column `{anchor}` in the matrix")))?;
            let mut excluded: BTreeSet<String> = default_exclusions().iter().map(|k| k.name().to_string()).collect();
            excluded.insert(anchor.clone());
            excluded.insert("blackbox".into());
            excluded.extend(exclude);
            print_json(&select_complementary(&row, n, &excluded)?)?;
        }
        Command::Tune { config } => {
            let cfg: TuneConfig = read_json(&config)?;
            let (dir, _, summary) = tune::run_tune(&cfg, &artifact_root())?;
            print_json(&summary)?;
            eprintln!("{}", dir.display());
        }
        Command::Rig { what: RigCommand::Build { spec, dir } } => {
            let spec: RigSpec = match spec {
                Some(p) => read_json(&p)?,
                None => RigSpec::default(),
            };
            let dir = dir.unwrap_or_else(|| artifact_root().join("rig"));
            let rig = rig::load_or_build(&spec, &dir)?;
            for m in &rig.manifest.models {
                println!("{}\t{:?}\t{:.3}", m.model_id, m.role, m.test_accuracy);
            }
            println!("hash {}", rig.manifest.hash);
        }
        Command::Report { experiment: dir } => {
            print!("{}", experiment::report(&dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
