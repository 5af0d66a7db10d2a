use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auv_sysid::config::{AppConfig, Preset};
use auv_sysid::evaluate::summary_text;
use auv_sysid::io::{read_dataset, read_truth_params, TRUTH_FILE};
use auv_sysid::pipeline::{self, ReportFormat};
use auv_sysid::{Error, ModelVariant, Result};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "auv-sysid", version, about = "Neural ODE system identification for an AUV")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Named preset applied on top of the config (`small`).
    #[arg(long, global = true)]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the curriculum dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated batch horizons, each double the previous.
        #[arg(long, value_delimiter = ',')]
        schedule: Option<Vec<usize>>,
        #[arg(long)]
        delta: Option<f64>,
        /// Truth parameter TOML file.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Train seed instances of one or more variants.
    Train {
        /// blackbox | cblackbox | graybox | hybrid:<e>; repeat or comma-separate.
        #[arg(long = "variant", value_delimiter = ',', required = true)]
        variants: Vec<ModelVariant>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate trained runs on the test set (built if absent).
    Eval {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the summary table of an evaluation.
    Report {
        #[arg(long)]
        eval: PathBuf,
        #[arg(long, default_value = "txt")]
        format: ReportFormat,
    },
    /// Run every stage into one run directory, resuming where it stopped.
    Full {
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<ModelVariant>>,
    },
}

fn load_config(cli: &Cli) -> Result<AppConfig> {
    let mut cfg = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(p) = &cli.preset {
        cfg.apply_preset(p.parse::<Preset>()?);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn require_file(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::config(p.display().to_string(), "file not found"))
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::config("jobs", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::config("jobs", e.to_string()))?;
    }
    if let Some(p) = &cli.config {
        require_file(p)?;
    }
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData {
            out,
            schedule,
            delta,
            params,
        } => {
            if let Some(s) = schedule {
                cfg.dataset.schedule = s;
            }
            if let Some(d) = delta {
                cfg.dataset.delta = d;
            }
            let truth = match &params {
                Some(p) => {
                    require_file(p)?;
                    read_truth_params(p)?
                }
                None => cfg.resolve_truth()?,
            };
            cfg.validate()?;
            pipeline::gen_data(&cfg.dataset_config(), &truth, &out)?;
        }
        Command::Train {
            variants,
            dataset,
            seeds,
            out,
        } => {
            if let Some(s) = seeds {
                cfg.train.seeds = s;
            }
            cfg.validate()?;
            let ds = read_dataset(&dataset)?;
            let truth = read_truth_params(&dataset.join(TRUTH_FILE))?;
            let runs = pipeline::train_stage(&variants, &ds, &truth, &cfg.train, cfg.seed, &out)?;
            let done = runs.iter().filter(|r| r.is_completed()).count();
            println!("{done}/{} runs completed", runs.len());
        }
        Command::Eval {
            runs,
            test,
            dataset,
            out,
        } => {
            cfg.validate()?;
            let report = pipeline::eval_stage(&runs, &test, &dataset, &cfg.test, &out)?;
            print!("{}", summary_text(&report));
        }
        Command::Report { eval, format } => {
            print!("{}", pipeline::report(&eval, format)?);
        }
        Command::Full { out, variants } => {
            let report = pipeline::run_full(&cfg, &out, variants.as_deref())?;
            print!("{}", summary_text(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
