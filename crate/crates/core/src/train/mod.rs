//! Mini-batch Adam training with validation-based model selection, test
//! evaluation, and the four-mode ablation runner.

pub mod adam;
pub mod metrics;
pub mod report;
pub mod split;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graphgen::GumbelNoise;
use crate::model::{AblationMode, ModelConfig, ModelState, SubjectInput};
use crate::preprocess::Dataset;
use crate::tensor::{bce_with_logits, sigmoid, Matrix};

pub use adam::Adam;
pub use metrics::{auc, Metrics};
pub use split::{split_labels, SplitIndices};

/// Training hyperparameters; the JSON form uses these exact key names and
/// rejects unknown keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(rename = "hidden_H")]
    pub hidden_h: usize,
    #[serde(rename = "out_F")]
    pub out_f: usize,
    #[serde(rename = "classifier_H_c")]
    pub classifier_h_c: usize,
    pub d_h: usize,
    pub threshold_c: f64,
    pub tau: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: AblationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            hidden_h: 256,
            out_f: 256,
            classifier_h_c: 64,
            d_h: 32,
            threshold_c: 0.6,
            tau: 1.0,
            epochs: 200,
            patience: 30,
            batch_size: 16,
            seed: 0,
            mode: AblationMode::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!(
                "learning_rate must be a non-negative number, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [("epochs", self.epochs), ("patience", self.patience), ("batch_size", self.batch_size)] {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        self.model_config(1, 1).validate()
    }

    pub fn model_config(&self, n_rois: usize, t_steps: usize) -> ModelConfig {
        ModelConfig {
            n_rois,
            t_steps,
            d_h: self.d_h,
            hidden: self.hidden_h,
            out: self.out_f,
            classifier_hidden: self.classifier_h_c,
            threshold_c: self.threshold_c,
            tau: self.tau,
            mode: self.mode,
            seed: self.seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters from the selected epoch.
    pub state: ModelState,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    pub split: SplitIndices,
    pub test_metrics: Metrics,
}

/// Deterministic evaluation results over a set of subjects.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub mean_loss: f64,
    pub probabilities: Vec<f64>,
}

pub fn prepare_inputs(
    dataset: &Dataset,
    threshold_c: f64,
    exec: Execution,
) -> Result<Vec<SubjectInput>> {
    exec.map(&dataset.subjects, |s| SubjectInput::new(s, threshold_c))
        .into_iter()
        .collect()
}

/// Noise-free evaluation of `state` on `indices` into `inputs`.
pub fn evaluate_inputs(
    state: &ModelState,
    inputs: &[SubjectInput],
    indices: &[usize],
    exec: Execution,
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty index list".into()));
    }
    let logits = exec
        .map(indices, |&i| state.logit(&inputs[i], None))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let labels: Vec<u8> = indices.iter().map(|&i| inputs[i].label).collect();
    let probabilities: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let mean_loss = logits
        .iter()
        .zip(&labels)
        .map(|(&z, &y)| bce_with_logits(z, f64::from(y)))
        .sum::<f64>()
        / indices.len() as f64;
    Ok(Evaluation {
        metrics: Metrics::from_probabilities(&probabilities, &labels)?,
        mean_loss,
        probabilities,
    })
}

pub fn evaluate(state: &ModelState, dataset: &Dataset, indices: &[usize]) -> Result<Metrics> {
    let inputs = dataset
        .subjects
        .iter()
        .map(|s| state.prepare(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate_inputs(state, &inputs, indices, Execution::default())?.metrics)
}

/// Validation score ordering: higher F1, then lower loss. Equal scores keep
/// the earlier epoch.
fn improves(f1: f64, loss: f64, best: Option<(f64, f64)>) -> bool {
    match best {
        None => true,
        Some((bf1, bloss)) => f1 > bf1 || (f1 == bf1 && loss < bloss),
    }
}

/// Trains on `train_idx`, selecting parameters by validation score on
/// `val_idx`.
///
/// Randomness: parameters from `ChaCha8Rng(seed)` stream 0 (see
/// [`ModelState::new`]); the per-epoch shuffle and all Gumbel draws come from
/// stream 2, drawn sequentially before each batch is dispatched so the result
/// does not depend on `exec`.
pub fn fit(
    inputs: &[SubjectInput],
    config: &TrainConfig,
    train_idx: &[usize],
    val_idx: &[usize],
    exec: Execution,
) -> Result<FitOutcome> {
    config.validate()?;
    let first = inputs
        .first()
        .ok_or_else(|| Error::Validation("no subjects to train on".into()))?;
    if train_idx.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    let (n, t) = first.series.shape();
    let mut state = ModelState::new(config.model_config(n, t))?;
    let mut optimizer = Adam::new(config.learning_rate, state.parameters());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);

    let mut order = train_idx.to_vec();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64)> = None;
    let mut best_state = state.clone();
    let mut best_epoch = 0;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let jobs: Vec<(usize, GumbelNoise)> = batch
                .iter()
                .map(|&i| (i, GumbelNoise::sample(n, &mut rng)))
                .collect();
            let results = exec.map(&jobs, |(i, noise)| {
                state.loss_and_gradients(&inputs[*i], Some(noise))
            });
            let mut grads: Option<Vec<Matrix>> = None;
            for r in results {
                let (loss, g) = r?;
                if !loss.is_finite() || g.iter().any(|m| !m.is_finite()) {
                    return Err(Error::Divergence { epoch });
                }
                loss_sum += loss;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                }
            }
            let mut grads = grads.expect("batch is non-empty");
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale_in_place(scale));
            optimizer.step(&mut state.parameters_mut(), &grads);
        }
        let train_loss = loss_sum / order.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }

        let (val_f1, val_loss) = if val_idx.is_empty() {
            (0.0, train_loss)
        } else {
            let ev = evaluate_inputs(&state, inputs, val_idx, exec)?;
            (ev.metrics.f1, ev.mean_loss)
        };
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_f1,
            val_loss,
        });
        if improves(val_f1, val_loss, best) {
            best = Some((val_f1, val_loss));
            best_state = state.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(FitOutcome {
        state: best_state,
        best_epoch,
        log,
    })
}

/// Stratified split, training with model selection, and test metrics.
pub fn train_model(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_model_with(dataset, config, Execution::default())
}

pub fn train_model_with(
    dataset: &Dataset,
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    config.validate()?;
    let split = split_labels(&dataset.labels(), config.seed)?;
    let inputs = prepare_inputs(dataset, config.threshold_c, exec)?;
    train_on_split(&inputs, config, split, exec)
}

fn train_on_split(
    inputs: &[SubjectInput],
    config: &TrainConfig,
    split: SplitIndices,
    exec: Execution,
) -> Result<TrainOutcome> {
    let fit = fit(inputs, config, &split.train, &split.val, exec)?;
    let test_metrics = evaluate_inputs(&fit.state, inputs, &split.test, exec)?.metrics;
    Ok(TrainOutcome {
        state: fit.state,
        best_epoch: fit.best_epoch,
        log: fit.log,
        split,
        test_metrics,
    })
}

/// One row per mode in [`AblationMode::ALL`] order.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub split: SplitIndices,
    pub rows: Vec<(AblationMode, Metrics)>,
}

impl AblationReport {
    pub fn metrics(&self, mode: AblationMode) -> Option<&Metrics> {
        self.rows.iter().find(|(m, _)| *m == mode).map(|(_, m)| m)
    }
}

/// Trains every mode with the same seed and split; `config.mode` is ignored.
pub fn run_ablation(dataset: &Dataset, config: &TrainConfig) -> Result<AblationReport> {
    run_ablation_with(dataset, config, Execution::default())
}

pub fn run_ablation_with(
    dataset: &Dataset,
    config: &TrainConfig,
    exec: Execution,
) -> Result<AblationReport> {
    config.validate()?;
    let split = split_labels(&dataset.labels(), config.seed)?;
    let inputs = prepare_inputs(dataset, config.threshold_c, exec)?;
    let outcomes = exec.map(&AblationMode::ALL, |&mode| {
        let cfg = TrainConfig { mode, ..*config };
        train_on_split(&inputs, &cfg, split.clone(), exec).map(|o| (mode, o.test_metrics))
    });
    let rows = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(AblationReport { split, rows })
}
