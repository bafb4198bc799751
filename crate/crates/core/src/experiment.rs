//! Experiment driver: dataset resolution, hyperparameter sweep scored by
//! validation nearest-neighbor PEHE, final per-realization runs, and report files.
//!
//! Files written to the output directory:
//!
//! | file                   | content                                              |
//! |------------------------|------------------------------------------------------|
//! | `resolved_config.toml` | the configuration with every default filled in        |
//! | `sweep.jsonl`          | one [`SweepRecord`] per grid point                   |
//! | `realizations.jsonl`   | one [`RealizationRecord`] per realization            |
//! | `aggregate.json`       | [`AggregateDocument`] for both scopes                |
//! | `comparison.json`      | [`Comparison`] against `baseline`, when configured   |

use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, split_for_realization, DataFormat, DatasetBundle, Realization, SplitSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate, ate_error, pehe, pehe_nn_pooled, welch_t_test, AggregateReport, EvalReport, FactualRows, Scope,
    WelchResult,
};
use crate::model::NetworkConfig;
use crate::rng::derive_seed;
use crate::synthetic::{generate_population, generate_realization, Population, SyntheticConfig};
use crate::tensor::{Activation, InitScheme, Matrix};
use crate::trainer::{fit_realization, FittedModel, Predictor, TrainConfig};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const SWEEP_FILE: &str = "sweep.jsonl";
pub const REALIZATIONS_FILE: &str = "realizations.jsonl";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const COMPARISON_FILE: &str = "comparison.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticConfig),
    Files {
        path: PathBuf,
        #[serde(default)]
        format: DataFormat,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::Synthetic(SyntheticConfig::default())
    }
}

/// Network shape without the input width, which comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub encoder_layers: Vec<usize>,
    pub rep_dim_a: usize,
    pub rep_dim_bc: usize,
    pub decoder_layers: Vec<usize>,
    pub head_layers: Vec<usize>,
    pub activation: Activation,
    pub init: InitScheme,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        let c = NetworkConfig::new(1);
        Self {
            encoder_layers: c.encoder_layers,
            rep_dim_a: c.rep_dim_a,
            rep_dim_bc: c.rep_dim_bc,
            decoder_layers: c.decoder_layers,
            head_layers: c.head_layers,
            activation: c.activation,
            init: c.init,
        }
    }
}

impl NetworkSpec {
    pub fn resolve(&self, input_dim: usize) -> NetworkConfig {
        NetworkConfig {
            input_dim,
            encoder_layers: self.encoder_layers.clone(),
            rep_dim_a: self.rep_dim_a,
            rep_dim_bc: self.rep_dim_bc,
            decoder_layers: self.decoder_layers.clone(),
            head_layers: self.head_layers.clone(),
            activation: self.activation,
            init: self.init,
        }
    }
}

/// Candidate values per hyperparameter. An empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub rep_dim_a: Vec<usize>,
    pub rep_dim_bc: Vec<usize>,
}

/// One fully specified hyperparameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rep_dim_a: usize,
    pub rep_dim_bc: usize,
}

impl GridPoint {
    pub fn apply(&self, network: &NetworkSpec, train: &TrainConfig) -> (NetworkSpec, TrainConfig) {
        let mut network = network.clone();
        network.rep_dim_a = self.rep_dim_a;
        network.rep_dim_bc = self.rep_dim_bc;
        let mut train = train.clone();
        train.loss_weights.alpha = self.alpha;
        train.loss_weights.beta = self.beta;
        train.loss_weights.gamma = self.gamma;
        train.loss_weights.lambda = self.lambda;
        train.adam.learning_rate = self.learning_rate;
        train.batch_size = self.batch_size;
        (network, train)
    }
}

impl SweepGrid {
    /// Cartesian product in field order, last field varying fastest.
    pub fn points(&self, network: &NetworkSpec, train: &TrainConfig) -> Vec<GridPoint> {
        fn or<T: Copy>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let lw = train.loss_weights;
        let mut out = Vec::new();
        for &alpha in &or(&self.alpha, lw.alpha) {
            for &beta in &or(&self.beta, lw.beta) {
                for &gamma in &or(&self.gamma, lw.gamma) {
                    for &lambda in &or(&self.lambda, lw.lambda) {
                        for &learning_rate in &or(&self.learning_rate, train.adam.learning_rate) {
                            for &batch_size in &or(&self.batch_size, train.batch_size) {
                                for &rep_dim_a in &or(&self.rep_dim_a, network.rep_dim_a) {
                                    for &rep_dim_bc in &or(&self.rep_dim_bc, network.rep_dim_bc) {
                                        out.push(GridPoint {
                                            index: out.len(),
                                            alpha,
                                            beta,
                                            gamma,
                                            lambda,
                                            learning_rate,
                                            batch_size,
                                            rep_dim_a,
                                            rep_dim_bc,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Half-open realization index range written `A..B` on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RealizationRange {
    pub start: usize,
    pub end: usize,
}

impl RealizationRange {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

impl std::str::FromStr for RealizationRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| Error::config(format!("realization range must look like A..B, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad realization range bound {v:?}")))
        };
        let (start, end) = (parse(a)?, parse(b)?);
        if start >= end {
            return Err(Error::config(format!("realization range {s} is empty")));
        }
        Ok(Self { start, end })
    }
}

impl std::fmt::Display for RealizationRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl Serialize for RealizationRange {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RealizationRange {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workers: usize,
    /// Defaults to every realization in the dataset.
    pub realizations: Option<RealizationRange>,
    /// Leading realizations of the range used to score grid points.
    pub tuning_realizations: usize,
    /// Earlier run directory to compare against.
    pub baseline: Option<PathBuf>,
    /// Also write each final model to `models/`.
    pub save_models: bool,
    pub dataset: DatasetSpec,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub sweep: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            realizations: None,
            tuning_realizations: 10,
            baseline: None,
            save_models: false,
            dataset: DatasetSpec::default(),
            network: NetworkSpec::default(),
            train: TrainConfig::default(),
            sweep: SweepGrid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Checks everything that can be checked without training.
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        if self.tuning_realizations == 0 {
            return Err(Error::config("tuning_realizations must be at least 1"));
        }
        let range = self.realization_range(dataset_len);
        if range.end > dataset_len || range.is_empty() {
            return Err(Error::config(format!(
                "realization range {}..{} is outside the dataset's {dataset_len} realizations",
                range.start, range.end
            )));
        }
        let points = self.sweep.points(&self.network, &self.train);
        for p in &points {
            let (net, train) = p.apply(&self.network, &self.train);
            net.resolve(1).validate()?;
            train.validate()?;
        }
        Ok(())
    }

    pub fn realization_range(&self, dataset_len: usize) -> Range<usize> {
        self.realizations.map_or(0..dataset_len, |r| r.range())
    }
}

/// A dataset that is either held in memory or generated on demand.
pub enum Dataset {
    Synthetic {
        config: SyntheticConfig,
        population: Population,
    },
    Loaded(DatasetBundle),
}

impl Dataset {
    pub fn resolve(spec: &DatasetSpec) -> Result<Self> {
        match spec {
            DatasetSpec::Synthetic(config) => {
                config.validate()?;
                Ok(Self::Synthetic {
                    config: config.clone(),
                    population: generate_population(config)?,
                })
            }
            DatasetSpec::Files { path, format } => Ok(Self::Loaded(data::load(path, *format)?)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Synthetic { config, .. } => config.n_realizations,
            Self::Loaded(b) => b.realizations.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_samples(&self) -> usize {
        match self {
            Self::Synthetic { config, .. } => config.n_samples,
            Self::Loaded(b) => b.realizations[0].n_samples(),
        }
    }

    pub fn get(&self, index: usize) -> Result<Realization> {
        if index >= self.len() {
            return Err(Error::config(format!(
                "realization {index} is outside the dataset's {} realizations",
                self.len()
            )));
        }
        Ok(match self {
            Self::Synthetic { config, population } => generate_realization(config, population, index),
            Self::Loaded(b) => b.realizations[index].clone(),
        })
    }
}

/// Metrics of one fitted model on its realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizationEval {
    pub within_sample: EvalReport,
    pub out_of_sample: EvalReport,
    /// Nearest-neighbor PEHE of the validation rows, the sweep's selection score.
    pub selection_pehe_nn: f64,
}

/// Scores a model on train+valid rows, on test rows, and on validation rows for selection.
///
/// Nearest neighbors are searched in normalized covariate space. Within-sample
/// and selection scores draw neighbors from train+valid; out-of-sample scores
/// draw them from every row.
pub fn evaluate_realization(
    predictor: &Predictor,
    r: &Realization,
    split: &SplitSpec,
    realization: usize,
) -> Result<RealizationEval> {
    let x_norm = predictor.normalizer.apply(&r.x)?;
    let tau_hat = predictor.predict_ite(&r.x)?;
    let within = split.within_sample();
    let all: Vec<usize> = (0..r.n_samples()).collect();

    struct Rows {
        x: Matrix,
        t: Vec<u8>,
        y: Vec<f64>,
    }
    impl Rows {
        fn view(&self) -> FactualRows<'_> {
            FactualRows {
                x: &self.x,
                t: &self.t,
                y_f: &self.y,
            }
        }
    }
    let rows = |idx: &[usize]| Rows {
        x: x_norm.select_rows(idx),
        t: idx.iter().map(|&i| r.t[i]).collect(),
        y: idx.iter().map(|&i| r.y_f[i]).collect(),
    };
    let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();

    let nn = |query: &[usize], pool: &[usize]| -> Result<f64> {
        let (q, p) = (rows(query), rows(pool));
        pehe_nn_pooled(&q.view(), &pick(&tau_hat, query), &p.view())
    };
    let truth = |idx: &[usize]| -> Result<(Option<f64>, Option<f64>)> {
        match (&r.mu0, &r.mu1) {
            (Some(mu0), Some(mu1)) => {
                let (th, m1, m0) = (pick(&tau_hat, idx), pick(mu1, idx), pick(mu0, idx));
                Ok((Some(pehe(&th, &m1, &m0)?), Some(ate_error(&th, &m1, &m0)?)))
            }
            _ => Ok((None, None)),
        }
    };

    let (pw, aw) = truth(&within)?;
    let (po, ao) = truth(&split.test)?;
    Ok(RealizationEval {
        within_sample: EvalReport {
            realization,
            scope: Scope::WithinSample,
            sqrt_pehe: pw,
            ate_error: aw,
            sqrt_pehe_nn: nn(&within, &within)?,
        },
        out_of_sample: EvalReport {
            realization,
            scope: Scope::OutOfSample,
            sqrt_pehe: po,
            ate_error: ao,
            sqrt_pehe_nn: nn(&split.test, &all)?,
        },
        selection_pehe_nn: nn(&split.valid, &within)?,
    })
}

/// One trained-and-scored realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub realization: usize,
    pub grid_point: usize,
    pub seed: u64,
    pub split_seed: u64,
    pub train_seed: u64,
    pub best_iteration: usize,
    pub iterations_done: usize,
    pub stopped_early: bool,
    pub best_valid_objective: f64,
    pub eval: RealizationEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub point: GridPoint,
    pub tuning_realizations: Vec<usize>,
    /// Mean validation nearest-neighbor PEHE; absent when the grid has one point.
    pub score: Option<f64>,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateDocument {
    pub seed: u64,
    pub selected: GridPoint,
    pub realizations: RealizationRange,
    pub within_sample: AggregateReport,
    pub out_of_sample: AggregateReport,
}

/// Welch tests of this run against a baseline run, per out-of-sample metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub run: PathBuf,
    pub baseline: PathBuf,
    pub alpha: f64,
    pub sqrt_pehe: Option<MetricComparison>,
    pub ate_error: Option<MetricComparison>,
    pub sqrt_pehe_nn: MetricComparison,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub run_mean: f64,
    pub baseline_mean: f64,
    pub welch: WelchResult,
}

/// Results of [`run_experiment`], mirroring the files it writes.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub sweep: Vec<SweepRecord>,
    pub realizations: Vec<RealizationRecord>,
    pub aggregate: AggregateDocument,
    pub comparison: Option<Comparison>,
}

/// Seeds for realization `index`: `(split_seed, train_seed)`.
pub fn realization_seeds(seed: u64, index: usize) -> (u64, u64) {
    let split_seed = derive_seed(seed, index as u64);
    (split_seed, derive_seed(split_seed, 1))
}

/// Splits, trains and evaluates one realization under one grid point.
pub fn run_realization(
    dataset: &Dataset,
    index: usize,
    point: &GridPoint,
    cfg: &ExperimentConfig,
) -> Result<(RealizationRecord, FittedModel)> {
    let r = dataset.get(index)?;
    let split = split_for_realization(r.n_samples(), cfg.seed, index)?;
    let (split_seed, train_seed) = realization_seeds(cfg.seed, index);
    let (network, mut train) = point.apply(&cfg.network, &cfg.train);
    train.seed = train_seed;
    let (model, outcome) = fit_realization(&r, &split, index, &network.resolve(r.x.cols()), &train)?;
    let eval = evaluate_realization(&Predictor::from_fitted(&model)?, &r, &split, index)?;
    let record = RealizationRecord {
        realization: index,
        grid_point: point.index,
        seed: cfg.seed,
        split_seed,
        train_seed,
        best_iteration: outcome.best_iteration,
        iterations_done: outcome.iterations_done,
        stopped_early: outcome.stopped_early,
        best_valid_objective: outcome.best_valid_objective,
        eval,
    };
    Ok((record, model))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                row: Some(i as u64 + 1),
                byte: None,
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Aggregates per-realization records of a finished run.
pub fn aggregate_records(records: &[RealizationRecord]) -> Result<(AggregateReport, AggregateReport)> {
    let within: Vec<EvalReport> = records.iter().map(|r| r.eval.within_sample).collect();
    let out: Vec<EvalReport> = records.iter().map(|r| r.eval.out_of_sample).collect();
    Ok((aggregate(&within)?, aggregate(&out)?))
}

/// Welch comparison of out-of-sample metrics between two runs' records.
pub fn compare_records(
    run: &[RealizationRecord],
    baseline: &[RealizationRecord],
    alpha: f64,
    run_dir: &Path,
    baseline_dir: &Path,
) -> Result<Comparison> {
    fn metric(
        run: &[RealizationRecord],
        base: &[RealizationRecord],
        alpha: f64,
        f: fn(&EvalReport) -> Option<f64>,
    ) -> Result<Option<MetricComparison>> {
        let a: Option<Vec<f64>> = run.iter().map(|r| f(&r.eval.out_of_sample)).collect();
        let b: Option<Vec<f64>> = base.iter().map(|r| f(&r.eval.out_of_sample)).collect();
        let (Some(a), Some(b)) = (a, b) else { return Ok(None) };
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(Some(MetricComparison {
            run_mean: mean(&a),
            baseline_mean: mean(&b),
            welch: welch_t_test(&a, &b, alpha)?,
        }))
    }
    Ok(Comparison {
        run: run_dir.to_path_buf(),
        baseline: baseline_dir.to_path_buf(),
        alpha,
        sqrt_pehe: metric(run, baseline, alpha, |r| r.sqrt_pehe)?,
        ate_error: metric(run, baseline, alpha, |r| r.ate_error)?,
        sqrt_pehe_nn: metric(run, baseline, alpha, |r| Some(r.sqrt_pehe_nn))?
            .expect("nearest-neighbor PEHE is always present"),
    })
}

/// Writes `comparison.json` into `run_dir` comparing it against `baseline_dir`.
pub fn compare_runs(run_dir: &Path, baseline_dir: &Path, alpha: f64) -> Result<Comparison> {
    let run: Vec<RealizationRecord> = read_jsonl(&run_dir.join(REALIZATIONS_FILE))?;
    let base: Vec<RealizationRecord> = read_jsonl(&baseline_dir.join(REALIZATIONS_FILE)).map_err(|e| {
        Error::config(format!("baseline run {} is unreadable: {e}", baseline_dir.display()))
    })?;
    let comparison = compare_records(&run, &base, alpha, run_dir, baseline_dir)?;
    write_json(&run_dir.join(COMPARISON_FILE), &comparison)?;
    Ok(comparison)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Setup(e.to_string()))
}

/// Runs the sweep and the final evaluation, writing every report into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    let dataset = Dataset::resolve(&cfg.dataset)?;
    cfg.validate(dataset.len())?;
    if let Some(base) = &cfg.baseline {
        if !base.join(REALIZATIONS_FILE).is_file() {
            return Err(Error::config(format!(
                "baseline {} has no {REALIZATIONS_FILE}",
                base.display()
            )));
        }
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(RESOLVED_CONFIG_FILE), cfg.to_toml()?)?;

    let range = cfg.realization_range(dataset.len());
    let points = cfg.sweep.points(&cfg.network, &cfg.train);
    let tuning: Vec<usize> = range.clone().take(cfg.tuning_realizations).collect();
    let pool = pool(cfg.workers)?;

    let (selected, sweep) = if points.len() == 1 {
        (
            points[0],
            vec![SweepRecord {
                point: points[0],
                tuning_realizations: Vec::new(),
                score: None,
                selected: true,
            }],
        )
    } else {
        let jobs: Vec<(usize, usize)> = (0..points.len())
            .flat_map(|p| tuning.iter().map(move |&r| (p, r)))
            .collect();
        let scores: Vec<f64> = pool.install(|| {
            jobs.par_iter()
                .map(|&(p, r)| run_realization(&dataset, r, &points[p], cfg).map(|(rec, _)| rec.eval.selection_pehe_nn))
                .collect::<Result<Vec<f64>>>()
        })?;
        let per_point: Vec<f64> = scores
            .chunks(tuning.len())
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        let best = per_point
            .iter()
            .enumerate()
            .fold(0, |best, (i, &s)| if s < per_point[best] { i } else { best });
        let sweep = points
            .iter()
            .zip(&per_point)
            .map(|(p, &s)| SweepRecord {
                point: *p,
                tuning_realizations: tuning.clone(),
                score: Some(s),
                selected: p.index == best,
            })
            .collect();
        (points[best], sweep)
    };
    write_jsonl(&out.join(SWEEP_FILE), &sweep)?;

    let indices: Vec<usize> = range.clone().collect();
    let results: Vec<(RealizationRecord, FittedModel)> = pool.install(|| {
        indices
            .par_iter()
            .map(|&r| run_realization(&dataset, r, &selected, cfg))
            .collect::<Result<Vec<_>>>()
    })?;
    if cfg.save_models {
        let dir = out.join("models");
        std::fs::create_dir_all(&dir)?;
        for (rec, model) in &results {
            model.save(&dir.join(format!("realization_{:04}.json", rec.realization)))?;
        }
    }
    let records: Vec<RealizationRecord> = results.into_iter().map(|(r, _)| r).collect();
    write_jsonl(&out.join(REALIZATIONS_FILE), &records)?;

    let (within_sample, out_of_sample) = aggregate_records(&records)?;
    let aggregate = AggregateDocument {
        seed: cfg.seed,
        selected,
        realizations: RealizationRange {
            start: range.start,
            end: range.end,
        },
        within_sample,
        out_of_sample,
    };
    write_json(&out.join(AGGREGATE_FILE), &aggregate)?;

    let comparison = match &cfg.baseline {
        Some(base) => Some(compare_runs(out, base, 0.05)?),
        None => None,
    };
    Ok(ExperimentOutput {
        sweep,
        realizations: records,
        aggregate,
        comparison,
    })
}
