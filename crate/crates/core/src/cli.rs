//! Command-line front end. The `rsbnet` binary only forwards to [`main`].

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{convert, split_for_realization, DataFormat, DatasetBundle, ExternalLayout};
use crate::error::{Error, Result};
use crate::experiment::{
    aggregate_records, compare_runs, evaluate_realization, read_jsonl, realization_seeds, run_experiment,
    AggregateDocument, Dataset, DatasetSpec, ExperimentConfig, RealizationRange, RealizationRecord, AGGREGATE_FILE,
    REALIZATIONS_FILE,
};
use crate::synthetic::{generate_population, generate_realization};
use crate::trainer::{fit_realization, FittedModel, Predictor};

#[derive(Debug, Parser)]
#[command(name = "rsbnet", version, about = "Treatment-effect estimation with decorrelated representations")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "RSBNET_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for independent training runs.
    #[arg(long, global = true, env = "RSBNET_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Half-open realization range, e.g. `0..50`.
    #[arg(long, global = true, value_parser = parse_range)]
    pub realizations: Option<RealizationRange>,
}

fn parse_range(s: &str) -> std::result::Result<RealizationRange, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Canonical,
    Ihdp,
}

impl From<FormatArg> for DataFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Canonical => DataFormat::Canonical,
            FormatArg::Ihdp => DataFormat::Ihdp,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LayoutArg {
    IhdpCsv,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Realization file or directory; overrides the configured dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "canonical")]
    pub format: FormatArg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic realization files.
    Generate {
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        n_realizations: Option<usize>,
    },
    /// Convert external files into canonical realization files.
    Convert {
        #[arg(long, value_enum, default_value = "ihdp-csv")]
        layout: LayoutArg,
        /// Input files, one realization each, written in the given order.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Train and evaluate a single realization with the base configuration.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Realization index (defaults to the start of --realizations, else 0).
        #[arg(long)]
        realization: Option<usize>,
    },
    /// Evaluate a saved model without training.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        realization: Option<usize>,
    },
    /// Hyperparameter sweep followed by the full evaluation.
    Sweep {
        /// Earlier run directory to compare against.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Aggregate a finished run and optionally compare it to a baseline.
    Report {
        /// Run directory holding realizations.jsonl.
        run: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

fn resolve_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(w) = global.workers {
        cfg.workers = w;
    }
    if let Some(r) = global.realizations {
        cfg.realizations = Some(r);
    }
    Ok(cfg)
}

fn out_dir(global: &GlobalArgs) -> Result<PathBuf> {
    global
        .out
        .clone()
        .ok_or_else(|| Error::config("an output directory is required (--out or RSBNET_OUT)"))
}

fn dataset(cfg: &ExperimentConfig, data: &DataArgs) -> Result<Dataset> {
    match &data.data {
        Some(path) => Dataset::resolve(&DatasetSpec::Files {
            path: path.clone(),
            format: data.format.into(),
        }),
        None => Dataset::resolve(&cfg.dataset),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::Generate {
            n_samples,
            n_realizations,
        } => {
            let DatasetSpec::Synthetic(mut syn) = cfg.dataset.clone() else {
                return Err(Error::config("generate needs a synthetic dataset in the configuration"));
            };
            syn.seed = cli.global.seed.unwrap_or(syn.seed);
            syn.n_samples = n_samples.unwrap_or(syn.n_samples);
            syn.n_realizations = n_realizations.unwrap_or(syn.n_realizations);
            syn.validate()?;
            let range = cfg.realization_range(syn.n_realizations);
            if range.end > syn.n_realizations {
                return Err(Error::config(format!(
                    "realization range {}..{} exceeds {} realizations",
                    range.start, range.end, syn.n_realizations
                )));
            }
            let out = out_dir(&cli.global)?;
            std::fs::create_dir_all(&out)?;
            let population = generate_population(&syn)?;
            for index in range.clone() {
                let r = generate_realization(&syn, &population, index);
                r.write_csv(&out.join(crate::data::realization_file_name(index)))?;
            }
            eprintln!("wrote {} realizations to {}", range.len(), out.display());
        }
        Command::Convert { layout, inputs } => {
            let out = out_dir(&cli.global)?;
            let realizations = inputs
                .iter()
                .map(|p| match layout {
                    LayoutArg::IhdpCsv => convert(p, ExternalLayout::IhdpCsv),
                })
                .collect::<Result<Vec<_>>>()?;
            let bundle = DatasetBundle::new("converted".into(), realizations)?;
            bundle.write_dir(&out)?;
            print_json(&bundle.summary())?;
        }
        Command::Train { data, realization } => {
            let ds = dataset(&cfg, &data)?;
            let index = realization.or(cfg.realizations.map(|r| r.start)).unwrap_or(0);
            let r = ds.get(index)?;
            let point = cfg.sweep.points(&cfg.network, &cfg.train)[0];
            let (network, mut train) = point.apply(&cfg.network, &cfg.train);
            network.resolve(r.x.cols()).validate()?;
            train.validate()?;
            let (_, train_seed) = realization_seeds(cfg.seed, index);
            train.seed = train_seed;
            let split = split_for_realization(r.n_samples(), cfg.seed, index)?;
            let (model, outcome) = fit_realization(&r, &split, index, &network.resolve(r.x.cols()), &train)?;
            let eval = evaluate_realization(&Predictor::from_fitted(&model)?, &r, &split, index)?;
            let out = out_dir(&cli.global)?;
            std::fs::create_dir_all(&out)?;
            model.save(&out.join("model.json"))?;
            outcome.write_history(&out.join("history.jsonl"))?;
            write_json(&out.join("eval.json"), &eval)?;
            print_json(&eval)?;
        }
        Command::Evaluate {
            model,
            data,
            realization,
        } => {
            let fitted = FittedModel::load(&model)?;
            let ds = dataset(&cfg, &data)?;
            let index = realization.unwrap_or(fitted.provenance.realization);
            let r = ds.get(index)?;
            let split = split_for_realization(r.n_samples(), cfg.seed, index)?;
            if split.seed != fitted.provenance.split_seed {
                eprintln!("warning: split seed differs from the one the model was trained with");
            }
            let eval = evaluate_realization(&Predictor::from_fitted(&fitted)?, &r, &split, index)?;
            if let Some(out) = &cli.global.out {
                std::fs::create_dir_all(out)?;
                write_json(&out.join("eval.json"), &eval)?;
            }
            print_json(&eval)?;
        }
        Command::Sweep { baseline } => {
            let mut cfg = cfg;
            if baseline.is_some() {
                cfg.baseline = baseline;
            }
            let out = out_dir(&cli.global)?;
            let result = run_experiment(&cfg, &out)?;
            print_json(&result.aggregate)?;
            if let Some(c) = &result.comparison {
                print_json(c)?;
            }
        }
        Command::Report { run, baseline, alpha } => {
            let records: Vec<RealizationRecord> = read_jsonl(&run.join(REALIZATIONS_FILE))?;
            let (within, out) = aggregate_records(&records)?;
            print_json(&serde_json::json!({ "within_sample": within, "out_of_sample": out }))?;
            if run.join(AGGREGATE_FILE).is_file() {
                let doc: AggregateDocument = serde_json::from_slice(&std::fs::read(run.join(AGGREGATE_FILE))?)?;
                if doc.out_of_sample != out || doc.within_sample != within {
                    eprintln!("warning: {AGGREGATE_FILE} disagrees with {REALIZATIONS_FILE}");
                }
            }
            if let Some(base) = baseline {
                print_json(&compare_runs(&run, &base, alpha)?)?;
            }
        }
    }
    Ok(())
}

/// Exit code 0 on success, 2 on configuration or input errors, 1 otherwise.
pub fn exit_code(result: &Result<()>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_config_error() => ExitCode::from(2),
        Err(_) => ExitCode::from(1),
    }
}

pub fn main() -> ExitCode {
    let result = run(Cli::parse());
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}
