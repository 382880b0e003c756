use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use quadgp_cli::commands::{self, DatasetKind};
use quadgp_cli::compare::{self, CompareInputs, TestSet, Variant};
use quadgp_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "quadgp", version, about = "Partitioned gradient GP surrogate for quadrotor wrench and noise")]
struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed relevant to the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for offline phases.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Gradient,
    ValueOnly,
    Test,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample cases and evaluate the synthetic oracle.
    Generate {
        #[arg(long, value_enum, default_value = "gradient")]
        kind: Kind,
        /// Overrides dataset.n_samples (or n_test for the test kind).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Residualize, normalize, partition and precompute.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Answer a JSON-lines file of world queries.
    Predict {
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
    },
    /// Time random in-bounds queries against an artifact.
    Bench {
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long)]
        n_queries: Option<usize>,
    },
    /// Train and score the variant matrix on a held-out set.
    Compare {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        value_only: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Skip the enlarged value-only set even if present.
        #[arg(long)]
        no_value_only: bool,
        /// Comma-separated subset of variants, e.g. GP-G,GP-S-1X.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.cmd {
        Cmd::Generate { kind, n } => {
            let kind = match kind {
                Kind::Gradient => DatasetKind::Gradient,
                Kind::ValueOnly => DatasetKind::ValueOnly,
                Kind::Test => DatasetKind::Test,
            };
            if let Some(s) = cli.seed {
                cfg.dataset.seed = s;
            }
            if let Some(n) = n {
                match kind {
                    DatasetKind::Test => cfg.dataset.n_test = n,
                    _ => cfg.dataset.n_samples = n,
                }
            }
            cfg.validate()?;
            let default_out = match kind {
                DatasetKind::Gradient => cfg.paths.dataset.clone(),
                DatasetKind::ValueOnly => cfg.paths.value_only.clone(),
                DatasetKind::Test => cfg.paths.test.clone(),
            };
            commands::cmd_generate(&cfg, kind, &cli.out.unwrap_or(default_out))
        }
        Cmd::Train { dataset } => {
            if let Some(s) = cli.seed {
                cfg.partition.seed = s;
            }
            cfg.validate()?;
            let dataset = dataset.unwrap_or(cfg.paths.dataset.clone());
            commands::cmd_train(&cfg, &dataset, &cli.out.unwrap_or(cfg.paths.artifact.clone()))
        }
        Cmd::Predict { artifact, queries } => {
            let out = cli.out.ok_or_else(|| CliError::Validation("predict needs --out".into()))?;
            commands::cmd_predict(&artifact.unwrap_or(cfg.paths.artifact.clone()), &queries, &out)
        }
        Cmd::Bench { artifact, n_queries } => {
            let seed = cli.seed.unwrap_or(cfg.bench.seed);
            let n = n_queries.unwrap_or(cfg.bench.n_queries);
            commands::cmd_bench(&artifact.unwrap_or(cfg.paths.artifact.clone()), n, cfg.bench.warmup, seed).map(|_| ())
        }
        Cmd::Compare { dataset, value_only, test, no_value_only, only } => {
            if let Some(s) = cli.seed {
                cfg.compare.seed = s;
            }
            cfg.validate()?;
            let (header, cases) = commands::load_dataset(&dataset.unwrap_or(cfg.paths.dataset.clone()))?;
            let vo_path = value_only.unwrap_or(cfg.paths.value_only.clone());
            let vo = if no_value_only || !vo_path.exists() { None } else { Some(commands::load_dataset(&vo_path)?.1) };
            let (_, test_cases) = commands::load_dataset(&test.unwrap_or(cfg.paths.test.clone()))?;
            let test = TestSet::from_cases(&test_cases);
            let quad = cfg.quad_params()?;
            let train = cfg.train_config();
            let inputs = CompareInputs {
                gradient_cases: &cases,
                value_only_cases: vo.as_deref(),
                test: &test,
                quad: &quad,
                bounds: &header.bounds,
                train: &train,
                memory_budget: cfg.memory_budget(),
            };
            let which: Vec<Variant> = if only.is_empty() {
                Variant::ALL.to_vec()
            } else {
                only.iter()
                    .map(|n| {
                        Variant::from_name(n).ok_or_else(|| CliError::Validation(format!("unknown variant {n:?}")))
                    })
                    .collect::<Result<_, _>>()?
            };
            let results = compare::run_variants(&inputs, &which)?;
            compare::print_summary(&results);
            if only.is_empty() {
                match compare::equivalence_gap(&inputs)? {
                    Some(g) => println!("dense vs single-bin partitioned: max normalized mean gap {g:.3e}"),
                    None => println!("dense vs single-bin partitioned: not evaluated (memory budget)"),
                }
            }
            let out = cli.out.unwrap_or(cfg.paths.report.clone());
            std::fs::write(&out, compare::report_csv(&results))
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", out.display())))?;
            println!("report -> {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
