//! Minibatch training with early stopping on the validation objective, and the
//! fitted-model bundle used for prediction in original units.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{NormalizationKind, Normalizer, OutcomeScaler, Realization, SplitSpec};
use crate::error::{Error, Result};
use crate::losses::{total_loss, IpmKind, LossComponents, LossWeights, SampleWeights};
use crate::model::{Checkpoint, NetworkConfig, RsbNet};
use crate::objective::{accumulate_gradients, evaluate, Batch, ObjectiveConfig};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::{Adam, AdamConfig, Matrix};

/// Redraws allowed when a minibatch misses one treatment arm.
pub const MAX_BATCH_REDRAWS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_weights: LossWeights,
    pub ipm: IpmKind,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub eval_interval: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    pub normalization: NormalizationKind,
    pub standardize_outcome: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_weights: LossWeights::default(),
            ipm: IpmKind::default(),
            batch_size: 100,
            max_iterations: 5000,
            eval_interval: 100,
            patience: 10,
            adam: AdamConfig::default(),
            normalization: NormalizationKind::MinMax,
            standardize_outcome: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            weights: self.loss_weights,
            ipm: self.ipm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights.validate()?;
        if self.batch_size < 4 {
            return Err(Error::config(format!("batch_size must be at least 4, got {}", self.batch_size)));
        }
        if self.eval_interval == 0 || self.max_iterations < self.eval_interval {
            return Err(Error::config(format!(
                "need 0 < eval_interval <= max_iterations, got {} and {}",
                self.eval_interval, self.max_iterations
            )));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        let a = &self.adam;
        let ok = a.learning_rate > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.epsilon > 0.0;
        if !ok {
            return Err(Error::config(format!("invalid Adam settings {a:?}")));
        }
        if let IpmKind::Wasserstein { regularization, iterations } = self.ipm {
            if regularization <= 0.0 || iterations == 0 {
                return Err(Error::config("Sinkhorn needs positive regularization and iterations"));
            }
        }
        Ok(())
    }
}

/// Preprocessed rows of one split.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub x: Matrix,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// One line of training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    /// Terms on the minibatch of this iteration.
    pub batch: LossComponents,
    pub batch_objective: f64,
    /// Full objective on the validation split, present every `eval_interval` iterations.
    pub valid_objective: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network restored to the best validation checkpoint.
    pub net: RsbNet,
    pub history: Vec<HistoryRecord>,
    pub u: f64,
    pub best_valid_objective: f64,
    pub best_iteration: usize,
    pub iterations_done: usize,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn write_history(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for rec in &self.history {
            text.push_str(&serde_json::to_string(rec)?);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Uniform draw without replacement that contains both arms.
pub fn sample_minibatch(t: &[u8], batch_size: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    let n = t.len();
    if batch_size > n {
        return Err(Error::config(format!("batch_size {batch_size} exceeds {n} training rows")));
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for _ in 0..=MAX_BATCH_REDRAWS {
        // partial Fisher-Yates
        for i in 0..batch_size {
            let j = i + rng.below(n - i);
            pool.swap(i, j);
        }
        let batch = &pool[..batch_size];
        let treated = batch.iter().filter(|&&i| t[i] == 1).count();
        if treated > 0 && treated < batch_size {
            return Ok(batch.to_vec());
        }
    }
    Err(Error::Setup(format!(
        "{MAX_BATCH_REDRAWS} redraws of a {batch_size}-row minibatch all missed a treatment arm; use a larger batch_size"
    )))
}

/// Full objective on a split, with weights built from the training `u`.
pub fn validation_objective(net: &RsbNet, data: &SplitData, u: f64, cfg: &ObjectiveConfig) -> Result<f64> {
    Ok(total_loss(&validation_components(net, data, u, cfg)?, &cfg.weights))
}

fn validation_components(net: &RsbNet, data: &SplitData, u: f64, cfg: &ObjectiveConfig) -> Result<LossComponents> {
    if data.is_empty() {
        return Err(Error::Setup("validation split is empty".into()));
    }
    let w = SampleWeights::weights_for(&data.t, u);
    evaluate(
        net,
        &Batch {
            x: &data.x,
            t: &data.t,
            y: &data.y,
            w: &w,
        },
        cfg,
    )
}

/// Trains a fresh network on `train`, early-stopping on `valid`.
pub fn train(train: &SplitData, valid: &SplitData, net_cfg: &NetworkConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let weights = SampleWeights::fit(&train.t)
        .map_err(|_| Error::Setup("training split needs both treatment arms".into()))?;
    let u = weights.u;
    if valid.t.iter().all(|&v| v == 1) || valid.t.iter().all(|&v| v == 0) {
        return Err(Error::Setup("validation split needs both treatment arms".into()));
    }
    let objective = cfg.objective();
    let mut net = RsbNet::new(net_cfg.clone(), derive_seed(cfg.seed, 0))?;
    let mut rng = SeededRng::new(derive_seed(cfg.seed, 1));
    let mut adam = Adam::new(cfg.adam);
    let batch_size = cfg.batch_size.min(train.len());

    let mut best_valid = validation_objective(&net, valid, u, &objective)?;
    let mut best_values = net.flat_values();
    let mut best_iteration = 0;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut iterations_done = 0;
    let mut stopped_early = false;

    for iteration in 1..=cfg.max_iterations {
        let idx = sample_minibatch(&train.t, batch_size, &mut rng)?;
        let x = train.x.select_rows(&idx);
        let t: Vec<u8> = idx.iter().map(|&i| train.t[i]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| train.y[i]).collect();
        let w: Vec<f64> = idx.iter().map(|&i| weights.w[i]).collect();

        net.zero_grads();
        let comps = accumulate_gradients(&mut net, &Batch { x: &x, t: &t, y: &y, w: &w }, &objective)?;
        let batch_objective = total_loss(&comps, &cfg.loss_weights);
        if !comps.is_finite() || !batch_objective.is_finite() {
            return Err(Error::NonFinite {
                iteration,
                detail: format!("minibatch loss terms {comps:?}"),
            });
        }
        adam.step(net.params_mut());
        iterations_done = iteration;

        if iteration % cfg.eval_interval == 0 {
            let v = validation_objective(&net, valid, u, &objective)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    iteration,
                    detail: format!("validation objective {v}"),
                });
            }
            history.push(HistoryRecord {
                iteration,
                batch: comps,
                batch_objective,
                valid_objective: Some(v),
            });
            if v < best_valid {
                best_valid = v;
                best_values = net.flat_values();
                best_iteration = iteration;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    net.set_flat_values(&best_values)?;
    Ok(TrainOutcome {
        net,
        history,
        u,
        best_valid_objective: best_valid,
        best_iteration,
        iterations_done,
        stopped_early,
    })
}

/// Identifies the run a fitted model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub realization: usize,
    pub split_seed: u64,
    pub best_iteration: usize,
    pub best_valid_objective: f64,
}

/// A trained network together with the preprocessing it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub checkpoint: Checkpoint,
    pub normalizer: Normalizer,
    pub outcome_scaler: OutcomeScaler,
    pub provenance: Provenance,
}

impl FittedModel {
    pub fn net(&self) -> Result<RsbNet> {
        RsbNet::from_checkpoint(&self.checkpoint)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Network and preprocessing ready for prediction on raw covariates.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub net: RsbNet,
    pub normalizer: Normalizer,
    pub outcome_scaler: OutcomeScaler,
}

impl Predictor {
    pub fn from_fitted(model: &FittedModel) -> Result<Self> {
        Ok(Self {
            net: model.net()?,
            normalizer: model.normalizer.clone(),
            outcome_scaler: model.outcome_scaler,
        })
    }

    /// `(y0, y1)` in outcome units.
    pub fn predict_outcomes(&self, x_raw: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.normalizer.apply(x_raw)?;
        let (y0, y1) = self.net.predict_outcomes(&x)?;
        let unscale = |m: Matrix| m.as_slice().iter().map(|&v| self.outcome_scaler.unscale(v)).collect();
        Ok((unscale(y0), unscale(y1)))
    }

    pub fn predict_ite(&self, x_raw: &Matrix) -> Result<Vec<f64>> {
        let (y0, y1) = self.predict_outcomes(x_raw)?;
        Ok(y1.iter().zip(&y0).map(|(a, b)| a - b).collect())
    }
}

/// Preprocesses one realization's split, trains, and bundles the result.
pub fn fit_realization(
    r: &Realization,
    split: &SplitSpec,
    realization: usize,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<(FittedModel, TrainOutcome)> {
    let x_train_raw = r.x.select_rows(&split.train);
    let normalizer = Normalizer::fit(&x_train_raw, cfg.normalization)?;
    let y_train_raw: Vec<f64> = split.train.iter().map(|&i| r.y_f[i]).collect();
    let outcome_scaler = if cfg.standardize_outcome {
        OutcomeScaler::fit(&y_train_raw)
    } else {
        OutcomeScaler::identity()
    };
    let prepare = |idx: &[usize]| -> Result<SplitData> {
        Ok(SplitData {
            x: normalizer.apply(&r.x.select_rows(idx))?,
            t: idx.iter().map(|&i| r.t[i]).collect(),
            y: idx.iter().map(|&i| outcome_scaler.scale(r.y_f[i])).collect(),
        })
    };
    let train_data = prepare(&split.train)?;
    let valid_data = prepare(&split.valid)?;
    let mut net_cfg = net_cfg.clone();
    net_cfg.input_dim = r.x.cols();
    let outcome = train(&train_data, &valid_data, &net_cfg, cfg)?;
    let model = FittedModel {
        checkpoint: outcome.net.to_checkpoint(),
        normalizer,
        outcome_scaler,
        provenance: Provenance {
            seed: cfg.seed,
            realization,
            split_seed: split.seed,
            best_iteration: outcome.best_iteration,
            best_valid_objective: outcome.best_valid_objective,
        },
    };
    Ok((model, outcome))
}
